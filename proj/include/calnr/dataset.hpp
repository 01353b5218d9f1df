#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace calnr {

// A set of samples with precomputed spatial feature maps. Features are
// stored at f32 precision (the on-disk format); arithmetic upstream is
// done in double.
struct Dataset {
  std::size_t num_samples = 0;   // N
  std::size_t num_categories = 0; // C
  std::size_t locations = 0;     // L
  std::size_t feature_dim = 0;   // D
  std::vector<float> features;          // N*L*D row-major
  std::vector<std::int8_t> full_labels; // N*C in {-1,+1}; empty when unknown
  std::vector<std::int8_t> partial_labels; // N*C in {0,+1}
  std::vector<std::string> category_names;

  bool has_full_labels() const { return !full_labels.empty(); }
  float feature(std::size_t n, std::size_t l, std::size_t d) const {
    return features[(n * locations + l) * feature_dim + d];
  }
  void validate() const; // value domains, sizes, partial-positive consistency
};

struct SynthConfig {
  std::size_t num_samples = 2000;
  std::size_t num_categories = 10;
  std::size_t locations = 16;
  std::size_t feature_dim = 32;
  std::uint64_t prototypes_seed = 7;
  double noise_sigma = 0.3;
  std::size_t max_labels_per_image = 3;
  double category_correlation = 0.0; // in [0,1]; blends prototype pairs
};

// Draws C unit-norm prototypes, then builds each sample by planting k chosen
// categories' prototypes (plus Gaussian noise) on a partition of the L
// locations; leftover locations get pure noise. Full labels are the planted
// categories; partial labels start as all positives.
Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// The partial-positive protocol: keep exactly ceil(keep_proportion * P) of
// the P positive entries (uniformly at random, dataset-wide by default) and
// zero everything else, negatives included.
std::vector<std::int8_t> drop_labels(const std::vector<std::int8_t>& full,
                                     std::size_t num_samples,
                                     std::size_t num_categories,
                                     double keep_proportion,
                                     std::uint64_t seed,
                                     bool per_image = false);

// Directory layout: manifest.json (n, c, l, d, names, precision),
// features.f32 (little-endian float32), labels_full.i8 (-1/+1, optional),
// labels_partial.i8 (0/+1).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace calnr

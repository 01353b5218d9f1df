#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calnr/numerics.hpp"
#include "calnr/queues.hpp"
#include "calnr/tensor.hpp"

namespace calnr {

// Semantic similarity between two category representations.
inline double pairwise_similarity(std::span<const double> a,
                                  std::span<const double> b) {
  return cosine(a, b);
}

// Mean cosine between one representation and a category's queue entries.
// Abstains (no value) while the queue holds fewer than min_size entries.
struct SimilarityResult {
  double value = 0.0;
  bool abstain = true;
};
SimilarityResult avg_positive_similarity(std::span<const double> repr,
                                         const PositiveQueues& queues,
                                         std::size_t category);

// Batched s^{pos} for every (sample, category) pair.
struct BatchSimilarities {
  Tensor values;                     // B x C
  std::vector<std::uint8_t> abstain; // B x C
  bool abstained(std::size_t n, std::size_t c) const {
    return abstain[n * values.shape[1] + c] != 0;
  }
};
BatchSimilarities batch_similarities(const Tensor& representations,
                                     const PositiveQueues& queues,
                                     bool parallel);

enum class Provenance : std::uint8_t { none = 0, observed = 1, discovered = 2 };

struct PseudoLabels {
  std::vector<std::int8_t> labels;     // B x C in {0,1}
  std::vector<Provenance> provenance;  // B x C
  std::size_t discovered_count() const;
};

// Observed positives stay positive; an unknown entry is promoted iff its
// queue similarity is available and >= theta_pos of its category.
PseudoLabels generate_pseudo_labels(std::span<const std::int8_t> observed,
                                    std::size_t batch, std::size_t categories,
                                    const BatchSimilarities& sims,
                                    std::span<const double> theta_pos);

// Enqueues a detached copy of f^n_c for every observed-positive (n, c).
// Discovered pseudo-positives are never enqueued; queues stay
// ground-truth-pure.
void update_queues(const Tensor& representations,
                   std::span<const std::int8_t> observed,
                   PositiveQueues& queues);

} // namespace calnr

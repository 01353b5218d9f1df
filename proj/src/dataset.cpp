#include "calnr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "calnr/common.hpp"
#include "calnr/rng.hpp"

namespace calnr {

void Dataset::validate() const {
  const std::size_t n = num_samples, c = num_categories;
  if (features.size() != n * locations * feature_dim)
    throw data_error("dataset: features size mismatch");
  if (partial_labels.size() != n * c)
    throw data_error("dataset: partial_labels size mismatch");
  if (!full_labels.empty() && full_labels.size() != n * c)
    throw data_error("dataset: full_labels size mismatch");
  if (category_names.size() != c)
    throw data_error("dataset: category_names size mismatch");
  for (std::size_t i = 0; i < partial_labels.size(); ++i) {
    const std::int8_t p = partial_labels[i];
    if (p != 0 && p != 1)
      throw data_error("dataset: partial label outside {0,+1}");
    if (!full_labels.empty()) {
      const std::int8_t f = full_labels[i];
      if (f != -1 && f != 1)
        throw data_error("dataset: full label outside {-1,+1}");
      if (p == 1 && f != 1)
        throw data_error("dataset: observed positive without ground-truth positive");
    }
  }
}

namespace {

void normalize_rows(std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = m[r * cols + j];
      norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) continue; // degenerate blend; keep as-is
    for (std::size_t j = 0; j < cols; ++j) m[r * cols + j] /= norm;
  }
}

} // namespace

Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  const std::size_t n = config.num_samples, c = config.num_categories;
  const std::size_t l = config.locations, d = config.feature_dim;
  if (n == 0 || c == 0 || l == 0 || d == 0)
    throw usage_error("generate_synthetic: all dimensions must be >= 1");
  if (config.max_labels_per_image < 1 || config.max_labels_per_image > c)
    throw usage_error("generate_synthetic: max_labels_per_image must be in [1, C]");
  if (config.max_labels_per_image > l)
    throw usage_error("generate_synthetic: cannot place " +
                      std::to_string(config.max_labels_per_image) +
                      " categories on " + std::to_string(l) + " locations");
  if (config.noise_sigma < 0.0)
    throw usage_error("generate_synthetic: noise_sigma must be >= 0");
  if (config.category_correlation < 0.0 || config.category_correlation > 1.0)
    throw usage_error("generate_synthetic: category_correlation must be in [0,1]");

  // Unit-norm prototypes.
  Rng proto_rng(mix_seed(config.prototypes_seed, "synth-prototypes"));
  std::vector<double> prototypes(c * d);
  for (double& v : prototypes) v = proto_rng.normal();
  normalize_rows(prototypes, c, d);

  // Blend consecutive pairs toward their midpoint to create confusable
  // categories; correlation 1 makes a pair identical.
  if (config.category_correlation > 0.0) {
    const double rho = config.category_correlation;
    for (std::size_t a = 0; a + 1 < c; a += 2) {
      const std::size_t b = a + 1;
      for (std::size_t j = 0; j < d; ++j) {
        const double pa = prototypes[a * d + j];
        const double pb = prototypes[b * d + j];
        const double mid = 0.5 * (pa + pb);
        prototypes[a * d + j] = (1.0 - rho) * pa + rho * mid;
        prototypes[b * d + j] = (1.0 - rho) * pb + rho * mid;
      }
    }
    normalize_rows(prototypes, c, d);
  }

  Dataset ds;
  ds.num_samples = n;
  ds.num_categories = c;
  ds.locations = l;
  ds.feature_dim = d;
  ds.features.assign(n * l * d, 0.0f);
  ds.full_labels.assign(n * c, -1);
  ds.partial_labels.assign(n * c, 0);
  ds.category_names.resize(c);
  for (std::size_t j = 0; j < c; ++j)
    ds.category_names[j] = "cat" + std::to_string(j);

  Rng rng(mix_seed(seed, "synth-samples"));
  std::vector<std::size_t> cats(c);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k =
        1 + static_cast<std::size_t>(rng.below(config.max_labels_per_image));
    std::iota(cats.begin(), cats.end(), 0);
    rng.shuffle(cats);

    // Balanced partition of the L locations: the first (L mod k) categories
    // get floor(L/k)+1 locations, the rest floor(L/k); leftovers none.
    const std::size_t base = l / k, extra = l % k;
    std::size_t loc = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t cat = cats[j];
      ds.full_labels[i * c + cat] = 1;
      ds.partial_labels[i * c + cat] = 1;
      const std::size_t span = base + (j < extra ? 1 : 0);
      for (std::size_t s = 0; s < span; ++s, ++loc) {
        float* out = &ds.features[(i * l + loc) * d];
        const double* proto = &prototypes[cat * d];
        for (std::size_t j2 = 0; j2 < d; ++j2)
          out[j2] = static_cast<float>(proto[j2] +
                                       config.noise_sigma * rng.normal());
      }
    }
    // Remaining locations: pure noise.
    for (; loc < l; ++loc) {
      float* out = &ds.features[(i * l + loc) * d];
      for (std::size_t j2 = 0; j2 < d; ++j2)
        out[j2] = static_cast<float>(config.noise_sigma * rng.normal());
    }
  }
  return ds;
}

std::vector<std::int8_t> drop_labels(const std::vector<std::int8_t>& full,
                                     std::size_t num_samples,
                                     std::size_t num_categories,
                                     double keep_proportion,
                                     std::uint64_t seed, bool per_image) {
  if (full.size() != num_samples * num_categories)
    throw data_error("drop_labels: label matrix size mismatch");
  if (!(keep_proportion > 0.0) || keep_proportion > 1.0)
    throw usage_error("drop_labels: keep_proportion must be in (0, 1]");
  for (std::int8_t v : full)
    if (v != -1 && v != 1)
      throw data_error("drop_labels: full labels must be in {-1,+1}");

  std::vector<std::int8_t> partial(full.size(), 0);
  Rng rng(mix_seed(seed, "drop-labels"));

  auto keep_subset = [&](std::vector<std::size_t>& positives) {
    const std::size_t kept = static_cast<std::size_t>(
        std::ceil(keep_proportion * static_cast<double>(positives.size())));
    rng.shuffle(positives);
    for (std::size_t i = 0; i < kept; ++i) partial[positives[i]] = 1;
  };

  if (per_image) {
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < num_samples; ++i) {
      positives.clear();
      for (std::size_t j = 0; j < num_categories; ++j)
        if (full[i * num_categories + j] == 1)
          positives.push_back(i * num_categories + j);
      if (!positives.empty()) keep_subset(positives);
    }
  } else {
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < full.size(); ++i)
      if (full[i] == 1) positives.push_back(i);
    if (!positives.empty()) keep_subset(positives);
  }
  return partial;
}

namespace {

void write_bytes(const std::filesystem::path& file, const void* data,
                 std::size_t bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open for writing: " + file.string());
  out.write(static_cast<const char*>(data),
            static_cast<std::streamsize>(bytes));
  if (!out) throw data_error("write failed: " + file.string());
}

std::vector<char> read_bytes(const std::filesystem::path& file,
                             std::size_t expected_bytes) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw data_error("cannot open for reading: " + file.string());
  const std::size_t actual = static_cast<std::size_t>(in.tellg());
  if (actual != expected_bytes)
    throw data_error(file.filename().string() + ": expected " +
                     std::to_string(expected_bytes) + " bytes, found " +
                     std::to_string(actual));
  in.seekg(0);
  std::vector<char> buf(actual);
  in.read(buf.data(), static_cast<std::streamsize>(actual));
  if (!in) throw data_error("read failed: " + file.string());
  return buf;
}

} // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["n"] = ds.num_samples;
  manifest["c"] = ds.num_categories;
  manifest["l"] = ds.locations;
  manifest["d"] = ds.feature_dim;
  manifest["names"] = ds.category_names;
  manifest["precision"] = "f32";
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw data_error("cannot write manifest: " + dir.string());
    out << manifest.dump(2) << "\n";
  }

  write_bytes(dir / "features.f32", ds.features.data(),
              ds.features.size() * sizeof(float));
  write_bytes(dir / "labels_partial.i8", ds.partial_labels.data(),
              ds.partial_labels.size());
  if (ds.has_full_labels())
    write_bytes(dir / "labels_full.i8", ds.full_labels.data(),
                ds.full_labels.size());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw data_error("cannot open manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("manifest parse error: " + std::string(e.what()));
  }
  for (const char* key : {"n", "c", "l", "d", "names", "precision"})
    if (!manifest.contains(key))
      throw data_error("manifest missing field '" + std::string(key) + "'");
  if (manifest["precision"] != "f32")
    throw data_error("manifest field 'precision': unsupported value");

  Dataset ds;
  ds.num_samples = manifest["n"].get<std::size_t>();
  ds.num_categories = manifest["c"].get<std::size_t>();
  ds.locations = manifest["l"].get<std::size_t>();
  ds.feature_dim = manifest["d"].get<std::size_t>();
  ds.category_names = manifest["names"].get<std::vector<std::string>>();
  if (ds.category_names.size() != ds.num_categories)
    throw data_error("manifest field 'names': expected " +
                     std::to_string(ds.num_categories) + " entries, found " +
                     std::to_string(ds.category_names.size()));

  const std::size_t feat_count =
      ds.num_samples * ds.locations * ds.feature_dim;
  auto feat_bytes = read_bytes(dir / "features.f32", feat_count * sizeof(float));
  ds.features.resize(feat_count);
  std::memcpy(ds.features.data(), feat_bytes.data(), feat_bytes.size());

  const std::size_t label_count = ds.num_samples * ds.num_categories;
  auto part_bytes = read_bytes(dir / "labels_partial.i8", label_count);
  ds.partial_labels.assign(part_bytes.begin(), part_bytes.end());

  if (std::filesystem::exists(dir / "labels_full.i8")) {
    auto full_bytes = read_bytes(dir / "labels_full.i8", label_count);
    ds.full_labels.assign(full_bytes.begin(), full_bytes.end());
  }

  ds.validate();
  return ds;
}

} // namespace calnr

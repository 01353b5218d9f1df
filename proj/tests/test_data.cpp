#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calnr/common.hpp"
#include "calnr/dataset.hpp"
#include "calnr/metrics.hpp"
#include "calnr/numerics.hpp"

using namespace calnr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  const fs::path dir = fs::temp_directory_path() /
                       (std::string("calnr_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t count_positives(const std::vector<std::int8_t>& labels) {
  std::size_t count = 0;
  for (auto v : labels)
    if (v == 1) ++count;
  return count;
}

} // namespace

TEST_CASE("synthetic generation: zero noise makes planted locations exact") {
  SynthConfig cfg;
  cfg.num_samples = 8;
  cfg.num_categories = 3;
  cfg.locations = 4;
  cfg.feature_dim = 6;
  cfg.noise_sigma = 0.0;
  cfg.max_labels_per_image = 1;
  const Dataset ds = generate_synthetic(cfg, 5);
  ds.validate();

  // find two samples with the same (single) category
  for (std::size_t a = 0; a < ds.num_samples; ++a)
    for (std::size_t b = a + 1; b < ds.num_samples; ++b) {
      bool same = true;
      for (std::size_t c = 0; c < ds.num_categories; ++c)
        if (ds.full_labels[a * 3 + c] != ds.full_labels[b * 3 + c])
          same = false;
      if (!same) continue;
      // with k=1 every location carries the prototype exactly
      for (std::size_t l = 0; l < ds.locations; ++l)
        for (std::size_t j = 0; j < ds.feature_dim; ++j)
          CHECK(ds.feature(a, l, j) == ds.feature(b, l, j));
    }
}

TEST_CASE("synthetic generation: correlation 1 collapses a prototype pair") {
  SynthConfig cfg;
  cfg.num_samples = 40;
  cfg.num_categories = 2;
  cfg.locations = 2;
  cfg.feature_dim = 8;
  cfg.noise_sigma = 0.0;
  cfg.max_labels_per_image = 1;
  cfg.category_correlation = 1.0;
  const Dataset ds = generate_synthetic(cfg, 11);

  // pick one clean sample of each category and compare mean-pooled features
  std::vector<double> proto0, proto1;
  for (std::size_t n = 0; n < ds.num_samples; ++n) {
    std::vector<double> mean(ds.feature_dim, 0.0);
    for (std::size_t l = 0; l < ds.locations; ++l)
      for (std::size_t j = 0; j < ds.feature_dim; ++j)
        mean[j] += ds.feature(n, l, j) / static_cast<double>(ds.locations);
    if (ds.full_labels[n * 2 + 0] == 1 && proto0.empty()) proto0 = mean;
    if (ds.full_labels[n * 2 + 1] == 1 && proto1.empty()) proto1 = mean;
  }
  REQUIRE(!proto0.empty());
  REQUIRE(!proto1.empty());
  CHECK(cosine(proto0, proto1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("synthetic generation rejects impossible placements") {
  SynthConfig cfg;
  cfg.num_samples = 2;
  cfg.num_categories = 8;
  cfg.locations = 3;
  cfg.feature_dim = 4;
  cfg.max_labels_per_image = 5; // more labels than locations
  CHECK_THROWS_AS(generate_synthetic(cfg, 1), usage_error);
}

TEST_CASE("drop_labels keeps exact counts, determinism, subset property") {
  SynthConfig cfg;
  cfg.num_samples = 50;
  cfg.num_categories = 6;
  cfg.locations = 2;
  cfg.feature_dim = 3;
  cfg.max_labels_per_image = 2;
  const Dataset ds = generate_synthetic(cfg, 3);
  const std::size_t total = count_positives(ds.partial_labels);

  SUBCASE("keep=1.0 is the identity on positives") {
    const auto kept = drop_labels(ds.full_labels, 50, 6, 1.0, 9);
    for (std::size_t i = 0; i < kept.size(); ++i)
      CHECK(kept[i] == (ds.full_labels[i] == 1 ? 1 : 0));
  }
  SUBCASE("exact ceil(keep*P) positives remain for several keeps and seeds") {
    for (double keep : {0.1, 0.3, 0.5, 0.77, 0.9}) {
      for (std::uint64_t seed : {1ULL, 2ULL, 99ULL}) {
        const auto kept = drop_labels(ds.full_labels, 50, 6, keep, seed);
        const std::size_t expected = static_cast<std::size_t>(
            std::ceil(keep * static_cast<double>(total)));
        CHECK(count_positives(kept) == expected);
        // never create a positive absent from the full labels
        for (std::size_t i = 0; i < kept.size(); ++i)
          if (kept[i] == 1) CHECK(ds.full_labels[i] == 1);
      }
    }
  }
  SUBCASE("same seed gives identical output") {
    const auto a = drop_labels(ds.full_labels, 50, 6, 0.4, 1234);
    const auto b = drop_labels(ds.full_labels, 50, 6, 0.4, 1234);
    CHECK(a == b);
  }
  SUBCASE("ten positives, keep 0.5 leaves exactly five") {
    std::vector<std::int8_t> full(20, -1);
    for (int i = 0; i < 10; ++i) full[i] = 1;
    const auto kept = drop_labels(full, 4, 5, 0.5, 7);
    CHECK(count_positives(kept) == 5);
  }
  SUBCASE("per-image mode keeps per-image counts") {
    std::vector<std::int8_t> full = {1, 1, 1, 1, /*img2*/ 1, 1, -1, -1};
    const auto kept = drop_labels(full, 2, 4, 0.5, 5, /*per_image=*/true);
    CHECK(kept[0] + kept[1] + kept[2] + kept[3] == 2);
    CHECK(kept[4] + kept[5] == 1);
    CHECK(kept[6] == 0);
    CHECK(kept[7] == 0);
  }
  SUBCASE("invalid keep proportions are rejected") {
    CHECK_THROWS_AS(drop_labels(ds.full_labels, 50, 6, 0.0, 1), usage_error);
    CHECK_THROWS_AS(drop_labels(ds.full_labels, 50, 6, -0.2, 1), usage_error);
    CHECK_THROWS_AS(drop_labels(ds.full_labels, 50, 6, 1.5, 1), usage_error);
  }
}

TEST_CASE("default config is separable: a linear probe clears 0.9 mAP") {
  // independent oracle for the generator: plain one-vs-all logistic
  // regression on mean-pooled features, no library training stack involved
  const SynthConfig cfg; // defaults
  const Dataset ds = generate_synthetic(cfg, 42);
  const std::size_t n = ds.num_samples, c = ds.num_categories;
  const std::size_t d = ds.feature_dim, l = ds.locations;

  std::vector<double> pooled(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t j = 0; j < d; ++j)
        pooled[i * d + j] +=
            ds.feature(i, li, j) / static_cast<double>(l);

  std::vector<double> w(c * d, 0.0), b(c, 0.0);
  const double lr = 2.0;
  std::vector<double> gw(d);
  for (int iter = 0; iter < 200; ++iter) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double z = b[ci];
        for (std::size_t j = 0; j < d; ++j)
          z += w[ci * d + j] * pooled[i * d + j];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double target = ds.full_labels[i * c + ci] == 1 ? 1.0 : 0.0;
        const double err = p - target;
        for (std::size_t j = 0; j < d; ++j) gw[j] += err * pooled[i * d + j];
        gb += err;
      }
      for (std::size_t j = 0; j < d; ++j)
        w[ci * d + j] -= lr * gw[j] / static_cast<double>(n);
      b[ci] -= lr * gb / static_cast<double>(n);
    }
  }

  // mAP of the probe over the training features
  double map = 0.0;
  std::vector<double> scores(n);
  std::vector<std::int8_t> truth(n);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t i = 0; i < n; ++i) {
      double z = b[ci];
      for (std::size_t j = 0; j < d; ++j)
        z += w[ci * d + j] * pooled[i * d + j];
      scores[i] = z;
      truth[i] = ds.full_labels[i * c + ci];
    }
    map += average_precision(scores, truth) / static_cast<double>(c);
  }
  CHECK(map > 0.9);
}

TEST_CASE("dataset save/load round-trips exactly") {
  SynthConfig cfg;
  cfg.num_samples = 12;
  cfg.num_categories = 4;
  cfg.locations = 3;
  cfg.feature_dim = 5;
  Dataset ds = generate_synthetic(cfg, 21);
  ds.partial_labels = drop_labels(ds.full_labels, 12, 4, 0.5, 2);

  const fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);

  CHECK(back.num_samples == ds.num_samples);
  CHECK(back.num_categories == ds.num_categories);
  CHECK(back.locations == ds.locations);
  CHECK(back.feature_dim == ds.feature_dim);
  CHECK(back.features == ds.features); // f32 exact
  CHECK(back.full_labels == ds.full_labels);
  CHECK(back.partial_labels == ds.partial_labels);
  CHECK(back.category_names == ds.category_names);
  fs::remove_all(dir);
}

TEST_CASE("truncated features file reports expected vs actual byte counts") {
  SynthConfig cfg;
  cfg.num_samples = 4;
  cfg.num_categories = 2;
  cfg.locations = 2;
  cfg.feature_dim = 2;
  cfg.max_labels_per_image = 2;
  const Dataset ds = generate_synthetic(cfg, 1);
  const fs::path dir = temp_dir("truncated");
  save_dataset(ds, dir);
  fs::resize_file(dir / "features.f32", 10); // corrupt

  try {
    load_dataset(dir);
    FAIL("expected data_error");
  } catch (const data_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("features.f32") != std::string::npos);
    CHECK(msg.find("64") != std::string::npos); // 4*2*2*4 bytes expected
    CHECK(msg.find("10") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest/labels shape mismatch names the field") {
  SynthConfig cfg;
  cfg.num_samples = 4;
  cfg.num_categories = 3;
  cfg.locations = 2;
  cfg.feature_dim = 2;
  cfg.max_labels_per_image = 2;
  const Dataset ds = generate_synthetic(cfg, 1);
  const fs::path dir = temp_dir("manifest");
  save_dataset(ds, dir);

  // shrink the label file to 2 columns worth of bytes
  fs::resize_file(dir / "labels_partial.i8", 4 * 2);
  CHECK_THROWS_AS(load_dataset(dir), data_error);

  // remove a manifest key
  {
    std::ofstream out(dir / "manifest.json");
    out << "{\"n\":4,\"c\":3,\"l\":2,\"d\":2,\"names\":[\"a\",\"b\",\"c\"]}";
  }
  try {
    load_dataset(dir);
    FAIL("expected data_error");
  } catch (const data_error& e) {
    CHECK(std::string(e.what()).find("precision") != std::string::npos);
  }
  fs::remove_all(dir);
}

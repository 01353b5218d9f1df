#include <doctest.h>

#include <cmath>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/losses.hpp"
#include "calnr/rng.hpp"

using namespace calnr;

namespace {
constexpr double kLogHalf = 0.69314718055994531;
}

TEST_CASE("full_bce analytic values and clamp behavior") {
  CHECK(full_bce(std::vector<std::int8_t>{1}, std::vector<double>{0.5}) ==
        doctest::Approx(kLogHalf).epsilon(1e-12));
  CHECK(full_bce(std::vector<std::int8_t>{-1}, std::vector<double>{0.5}) ==
        doctest::Approx(kLogHalf).epsilon(1e-12));
  // matched prediction at the clamp: about eps per term
  const double eps = 1e-7;
  CHECK(full_bce(std::vector<std::int8_t>{1},
                 std::vector<double>{1.0 - eps}) ==
        doctest::Approx(eps).epsilon(1e-3));
  CHECK_THROWS_AS(
      full_bce(std::vector<std::int8_t>{0}, std::vector<double>{0.5}),
      data_error);
}

TEST_CASE("an_loss values and equivalence with full_bce on all-positives") {
  const std::vector<std::int8_t> y{1, 0};
  const std::vector<double> p{0.9, 0.1};
  CHECK(an_loss(y, p) ==
        doctest::Approx(-std::log(0.9) - std::log(0.9)).epsilon(1e-12));
  CHECK(an_loss(y, p) == doctest::Approx(0.21072103).epsilon(1e-7));

  // y = 0 with a confident negative contributes almost nothing
  CHECK(an_loss(std::vector<std::int8_t>{0}, std::vector<double>{1e-7}) ==
        doctest::Approx(0.0).epsilon(1e-6));

  const std::vector<std::int8_t> all_pos{1, 1, 1};
  const std::vector<std::int8_t> all_pos_full{1, 1, 1};
  const std::vector<double> q{0.3, 0.6, 0.8};
  CHECK(an_loss(all_pos, q) == full_bce(all_pos_full, q));
}

TEST_CASE("pseudo_loss flips exactly one branch per discovery") {
  const std::vector<std::int8_t> y{1, 0};
  const std::vector<std::int8_t> y_tilde{1, 1};
  const std::vector<double> p{0.7, 0.4};
  CHECK(pseudo_loss(y, p) == an_loss(y, p));
  const double flipped = pseudo_loss(y_tilde, p);
  CHECK(flipped - an_loss(y, p) ==
        doctest::Approx(-std::log(0.4) + std::log(0.6)).epsilon(1e-12));
  // all-ones pseudo labels at p = 0.5
  const std::vector<std::int8_t> ones{1, 1, 1, 1};
  const std::vector<double> half(4, 0.5);
  CHECK(pseudo_loss(ones, half) ==
        doctest::Approx(4.0 * kLogHalf).epsilon(1e-12));
}

TEST_CASE("weighted_loss masks terms linearly") {
  const std::vector<std::int8_t> y{1, 0, 0};
  const std::vector<double> p{0.7, 0.4, 0.2};
  const std::vector<double> ones{1.0, 1.0, 1.0};
  CHECK(weighted_loss(y, p, ones) == an_loss(y, p));

  const std::vector<double> mask{1.0, 0.0, 1.0};
  CHECK(an_loss(y, p) - weighted_loss(y, p, mask) ==
        doctest::Approx(-std::log(0.6)).epsilon(1e-12));

  const std::vector<double> keep_pos_only{1.0, 0.0, 0.0};
  CHECK(weighted_loss(y, p, keep_pos_only) ==
        doctest::Approx(-std::log(0.7)).epsilon(1e-12));
}

TEST_CASE("classification_loss is the three-term sum and is additive") {
  Rng rng(4);
  const std::size_t c = 5;
  std::vector<std::int8_t> y(c), y_tilde(c);
  std::vector<double> p(c), lambda(c);
  for (std::size_t i = 0; i < c; ++i) {
    y[i] = rng.uniform() < 0.4 ? 1 : 0;
    y_tilde[i] = y[i] == 1 ? 1 : (rng.uniform() < 0.3 ? 1 : 0);
    p[i] = 0.05 + 0.9 * rng.uniform();
    lambda[i] = y[i] == 1 ? 1.0 : (rng.uniform() < 0.5 ? 0.0 : 1.0);
  }
  const double sum = classification_loss(y, y_tilde, lambda, p);
  CHECK(sum == an_loss(y, p) + pseudo_loss(y_tilde, p) +
                   weighted_loss(y, p, lambda));

  // no discoveries and unit weights: exactly 3x the an loss
  const std::vector<double> ones(c, 1.0);
  CHECK(classification_loss(y, y, ones, p) == 3.0 * an_loss(y, p));

  // additivity over samples: concatenation equals the sum of the parts
  std::vector<std::int8_t> y2(y.begin(), y.end());
  y2.insert(y2.end(), y.begin(), y.end());
  std::vector<double> p2(p.begin(), p.end());
  p2.insert(p2.end(), p.begin(), p.end());
  std::vector<double> l2(ones.begin(), ones.end());
  l2.insert(l2.end(), ones.begin(), ones.end());
  CHECK(classification_loss(y2, y2, l2, p2) ==
        doctest::Approx(2.0 * classification_loss(y, y, ones, p))
            .epsilon(1e-12));
}

TEST_CASE("csl branch values: identical, opposite-label, orthogonal pairs") {
  // two samples, one category, identical representations
  Tensor reps = Tensor::from({2, 1, 2}, {0.6, 0.8, 0.6, 0.8});
  const std::vector<std::int8_t> both_pos{1, 1};
  // ordered pairs (0,1) and (1,0): each term 1 - 1 = 0
  CHECK(csl_loss(reps, both_pos) == doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<std::int8_t> one_pos{1, 0};
  // each ordered pair takes the 1 + s branch with s = 1
  CHECK(csl_loss(reps, one_pos) == doctest::Approx(4.0).epsilon(1e-12));

  Tensor ortho = Tensor::from({2, 1, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(csl_loss(ortho, both_pos) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(csl_loss(ortho, one_pos) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("csl queue pairs take the label of the batch side") {
  Tensor reps = Tensor::from({1, 1, 2}, {0.6, 0.8});
  PositiveQueues queues(1, 2, 4, 1);
  queues.push(0, std::vector<double>{0.6, 0.8});

  const std::vector<std::int8_t> pos{1};
  CHECK(csl_loss(reps, pos, &queues) == doctest::Approx(0.0).epsilon(1e-12));
  const std::vector<std::int8_t> neg{0};
  CHECK(csl_loss(reps, neg, &queues) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("loss terms are nonnegative on random inputs") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.below(6);
    std::vector<std::int8_t> y(c);
    std::vector<double> p(c), lambda(c);
    for (std::size_t i = 0; i < c; ++i) {
      y[i] = rng.uniform() < 0.5 ? 1 : 0;
      p[i] = 0.01 + 0.98 * rng.uniform();
      lambda[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      if (y[i] == 1) lambda[i] = 1.0;
    }
    CHECK(an_loss(y, p) >= 0.0);
    CHECK(weighted_loss(y, p, lambda) >= 0.0);
  }
}

TEST_CASE("total_loss arithmetic") {
  LossBreakdown parts;
  parts.l_cls = 1.0;
  parts.l_csl = 2.0;
  CHECK(total_loss(parts, 0.05) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(total_loss(parts, 0.0) == 1.0);
}

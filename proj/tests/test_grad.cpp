#include <doctest.h>

#include <cmath>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/grad_eval.hpp"
#include "calnr/rng.hpp"

// Analytic gradients against central finite differences for every loss
// configuration. The contract: relative error below 1e-4 with the
// |fd|-or-1 floor, double precision.

using namespace calnr;

namespace {

struct Setup {
  ModelConfig cfg;
  ParamSet params;
  GradBatch batch;
  PositiveQueues queues{1, 1, 0, 1};
};

Setup make_setup(CsslMode mode, std::uint64_t seed, bool with_queues,
                 bool plant_pseudo, bool random_lambda, bool use_csl,
                 double alpha) {
  Setup s;
  s.cfg.num_categories = 3;
  s.cfg.locations = 4;
  s.cfg.feature_dim = 5;
  s.cfg.embed_dim = 3;
  s.cfg.hidden_dim = 4;
  s.cfg.mode = mode;
  s.params = init_params(s.cfg, seed);

  Rng rng(mix_seed(seed, "grad-batch"));
  const std::size_t b = 4;
  s.batch.batch_size = b;
  s.batch.features.resize(b * s.cfg.locations * s.cfg.feature_dim);
  for (auto& v : s.batch.features) v = rng.normal();

  const std::size_t bc = b * s.cfg.num_categories;
  s.batch.observed.resize(bc);
  s.batch.pseudo.resize(bc);
  s.batch.lambda.assign(bc, 1.0);
  for (std::size_t i = 0; i < bc; ++i) {
    s.batch.observed[i] = rng.uniform() < 0.4 ? 1 : 0;
    s.batch.pseudo[i] = s.batch.observed[i];
    if (plant_pseudo && s.batch.observed[i] == 0 && rng.uniform() < 0.3)
      s.batch.pseudo[i] = 1;
    if (random_lambda && s.batch.observed[i] == 0 && rng.uniform() < 0.4)
      s.batch.lambda[i] = 0.0;
  }
  s.batch.use_csl = use_csl;
  s.batch.alpha = alpha;

  if (with_queues) {
    s.queues = PositiveQueues(s.cfg.num_categories, s.cfg.feature_dim, 8, 1);
    for (std::size_t c = 0; c < s.cfg.num_categories; ++c)
      for (int k = 0; k < 3; ++k) {
        std::vector<double> entry(s.cfg.feature_dim);
        for (auto& v : entry) v = rng.normal();
        s.queues.push(c, entry);
      }
    s.batch.queues = &s.queues;
  }
  return s;
}

double max_rel_error(const ParamSet& analytic, const ParamSet& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.entries.size(); ++i) {
    const auto& a = analytic.entries[i].grad.data;
    const auto& f = fd.entries[i].grad.data;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double denom = std::max(1.0, std::abs(f[j]));
      worst = std::max(worst, std::abs(a[j] - f[j]) / denom);
    }
  }
  return worst;
}

void check_gradients(const Setup& s) {
  ParamSet grads = s.params;
  evaluate_loss_and_gradients(s.cfg, s.params, s.batch, &grads, false);
  const ParamSet fd = finite_difference_gradient(s.cfg, s.params, s.batch);
  CHECK(max_rel_error(grads, fd) < 1e-4);
}

} // namespace

TEST_CASE("gradients match finite differences: an-only configuration") {
  for (CsslMode mode : {CsslMode::attention, CsslMode::projection})
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL})
      check_gradients(make_setup(mode, seed, false, false, false, false, 0.0));
}

TEST_CASE("gradients match finite differences: planted pseudo labels") {
  for (CsslMode mode : {CsslMode::attention, CsslMode::projection})
    for (std::uint64_t seed : {4ULL, 5ULL})
      check_gradients(make_setup(mode, seed, false, true, false, false, 0.0));
}

TEST_CASE("gradients match finite differences: zeroed sample weights") {
  for (CsslMode mode : {CsslMode::attention, CsslMode::projection})
    for (std::uint64_t seed : {6ULL, 7ULL})
      check_gradients(make_setup(mode, seed, false, false, true, false, 0.0));
}

TEST_CASE("gradients match finite differences: csl with queue pairs") {
  for (CsslMode mode : {CsslMode::attention, CsslMode::projection})
    for (std::uint64_t seed : {8ULL, 9ULL})
      check_gradients(make_setup(mode, seed, true, false, false, true, 0.05));
}

TEST_CASE("gradients match finite differences: everything on") {
  for (CsslMode mode : {CsslMode::attention, CsslMode::projection})
    for (std::uint64_t seed : {10ULL, 11ULL, 12ULL})
      check_gradients(make_setup(mode, seed, true, true, true, true, 0.05));
}

TEST_CASE("all-positive batch with everything off reduces to 3x the an loss") {
  Setup s = make_setup(CsslMode::attention, 13, false, false, false, false, 0.0);
  std::fill(s.batch.observed.begin(), s.batch.observed.end(), 1);
  std::fill(s.batch.pseudo.begin(), s.batch.pseudo.end(), 1);
  std::fill(s.batch.lambda.begin(), s.batch.lambda.end(), 1.0);
  ParamSet grads = s.params;
  const LossBreakdown parts =
      evaluate_loss_and_gradients(s.cfg, s.params, s.batch, &grads, false);
  CHECK(parts.l_pseudo == parts.l_an);
  CHECK(parts.l_weighted == parts.l_an);
  CHECK(parts.total == 3.0 * parts.l_an);
  CHECK(parts.l_csl == 0.0);
  const ParamSet fd = finite_difference_gradient(s.cfg, s.params, s.batch);
  CHECK(max_rel_error(grads, fd) < 1e-4);
}

TEST_CASE("sigma(0) scores: one positive label costs log 2") {
  ModelConfig cfg;
  cfg.num_categories = 1;
  cfg.locations = 2;
  cfg.feature_dim = 2;
  cfg.embed_dim = 2;
  cfg.mode = CsslMode::attention;
  cfg.hidden_dim = 2;
  ParamSet params = init_params(cfg, 3);
  params.value("cls_weight").fill(0.0);
  params.value("cls_bias").fill(0.0);

  GradBatch batch;
  batch.batch_size = 1;
  batch.features = {0.3, -0.4, 0.1, 0.2};
  batch.observed = {1};
  batch.pseudo = {1};
  batch.lambda = {1.0};
  batch.use_csl = false;
  batch.alpha = 0.0;
  const LossBreakdown parts =
      evaluate_loss_and_gradients(cfg, params, batch, nullptr, false);
  CHECK(parts.l_an == doctest::Approx(0.69314718).epsilon(1e-8));
}

TEST_CASE("evaluation is deterministic given (params, batch)") {
  const Setup s = make_setup(CsslMode::attention, 20, true, true, true, true,
                             0.05);
  ParamSet g1 = s.params, g2 = s.params;
  const LossBreakdown a =
      evaluate_loss_and_gradients(s.cfg, s.params, s.batch, &g1, false);
  const LossBreakdown b =
      evaluate_loss_and_gradients(s.cfg, s.params, s.batch, &g2, true);
  CHECK(a.total == b.total);
  for (std::size_t i = 0; i < g1.entries.size(); ++i)
    CHECK(g1.entries[i].grad.data == g2.entries[i].grad.data);
}

TEST_CASE("non-finite loss aborts naming the term") {
  Setup s = make_setup(CsslMode::attention, 21, false, false, false, false, 0.0);
  s.params.value("cls_bias").fill(std::nan(""));
  try {
    evaluate_loss_and_gradients(s.cfg, s.params, s.batch, nullptr, false);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("empty batch violates the precondition") {
  const Setup s = make_setup(CsslMode::attention, 22, false, false, false,
                             false, 0.0);
  GradBatch empty;
  empty.batch_size = 0;
  CHECK_THROWS_AS(
      evaluate_loss_and_gradients(s.cfg, s.params, empty, nullptr, false),
      usage_error);
}

TEST_CASE("loss breakdown invariants hold in every configuration") {
  for (std::uint64_t seed : {30ULL, 31ULL, 32ULL}) {
    const Setup s =
        make_setup(CsslMode::attention, seed, true, true, true, true, 0.05);
    const LossBreakdown parts =
        evaluate_loss_and_gradients(s.cfg, s.params, s.batch, nullptr, false);
    CHECK(parts.l_cls == parts.l_an + parts.l_pseudo + parts.l_weighted);
    CHECK(parts.total == parts.l_cls + s.batch.alpha * parts.l_csl);
    CHECK(parts.l_an >= 0.0);
    CHECK(parts.l_csl >= 0.0);
  }
}

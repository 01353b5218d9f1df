#include <chrono>
#include <cstdio>
#include <vector>

#include "calnr/grad_eval.hpp"
#include "calnr/losses.hpp"
#include "calnr/model.hpp"
#include "calnr/rng.hpp"

// Times the tuned kernels with and without OpenMP and the naive reference,
// on a training-sized batch. Usage: calnr_bench [reps]

using namespace calnr;

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point start) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - start)
      .count();
}

} // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 20;

  ModelConfig cfg;
  cfg.num_categories = 10;
  cfg.locations = 16;
  cfg.feature_dim = 32;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 64;
  const std::size_t batch = 32;

  const ParamSet params = init_params(cfg, 1);
  Rng rng(2);
  std::vector<double> features(batch * cfg.locations * cfg.feature_dim);
  for (auto& v : features) v = rng.normal();
  Tensor rep_grad = Tensor::zeros({batch, cfg.num_categories, cfg.feature_dim});
  Tensor logit_grad = Tensor::zeros({batch, cfg.num_categories});
  for (auto& v : rep_grad.data) v = rng.normal();
  for (auto& v : logit_grad.data) v = rng.normal();
  std::vector<std::int8_t> labels(batch * cfg.num_categories);
  for (auto& v : labels) v = rng.uniform() < 0.3 ? 1 : 0;

  PositiveQueues queues(cfg.num_categories, cfg.feature_dim, 64, 8);
  std::vector<double> entry(cfg.feature_dim);
  for (std::size_t c = 0; c < cfg.num_categories; ++c)
    for (int k = 0; k < 64; ++k) {
      for (auto& v : entry) v = rng.normal();
      queues.push(c, entry);
    }

  std::printf("%-28s %10s\n", "kernel", "ms/call");

  auto bench = [&](const char* name, auto&& fn) {
    fn(); // warm up
    const auto start = clock_type::now();
    for (int i = 0; i < reps; ++i) fn();
    std::printf("%-28s %10.3f\n", name, ms_since(start) / reps);
  };

  ForwardCache cache;
  SemanticBatch fwd;
  bench("forward serial", [&] {
    fwd = forward(cfg, params, features, batch, &cache, false);
  });
  bench("forward omp", [&] {
    fwd = forward(cfg, params, features, batch, &cache, true);
  });
  bench("forward reference", [&] {
    reference::forward(cfg, params, features, batch);
  });

  ParamSet grads = params;
  bench("backward serial", [&] {
    grads.zero_grads();
    backward(cfg, params, features, batch, fwd, cache, rep_grad, logit_grad,
             grads, false);
  });
  bench("backward omp", [&] {
    grads.zero_grads();
    backward(cfg, params, features, batch, fwd, cache, rep_grad, logit_grad,
             grads, true);
  });
  bench("backward reference", [&] {
    grads.zero_grads();
    reference::backward(cfg, params, features, batch, fwd, rep_grad,
                        logit_grad, grads);
  });

  Tensor csl_grad = Tensor::zeros(fwd.representations.shape);
  bench("csl loss+grad serial", [&] {
    csl_grad.fill(0.0);
    csl_loss_and_grad(fwd.representations, labels, &queues, 0.05, &csl_grad,
                      false);
  });
  bench("csl loss+grad omp", [&] {
    csl_grad.fill(0.0);
    csl_loss_and_grad(fwd.representations, labels, &queues, 0.05, &csl_grad,
                      true);
  });
  return 0;
}

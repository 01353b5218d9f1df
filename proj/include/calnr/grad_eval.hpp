#pragma once

#include <cstdint>
#include <vector>

#include "calnr/losses.hpp"
#include "calnr/model.hpp"
#include "calnr/queues.hpp"

namespace calnr {

// One batch with every stochastic or discrete quantity already resolved.
// Pseudo labels, sample weights and queue contents are constants here: no
// gradient flows through them, and repeated evaluations (as in finite
// differencing) see identical values.
struct GradBatch {
  std::size_t batch_size = 0;
  std::vector<double> features;           // B * L * D
  std::vector<std::int8_t> observed;      // B * C in {0,1}
  std::vector<std::int8_t> full;          // B * C in {-1,+1}; optional diagnostic
  std::vector<std::int8_t> pseudo;        // B * C in {0,1}
  std::vector<double> lambda;             // B * C
  std::vector<std::int8_t> csl_positive;  // labels for the csl positive branch
  const PositiveQueues* queues = nullptr; // csl partner pool; may be null
  bool use_csl = true;
  double alpha = 0.05;
};

// Loss breakdown as means over the batch. When grads is non-null, every
// parameter's gradient buffer receives d(total)/d(parameter); buffers are
// zeroed first. Deterministic given (params, batch).
LossBreakdown evaluate_loss_and_gradients(const ModelConfig& cfg,
                                          const ParamSet& params,
                                          const GradBatch& batch,
                                          ParamSet* grads, bool parallel);

// Same contract with the forward pass already done (the trainer reuses the
// activations it computed for discovery). cache must belong to fwd and is
// required when grads != null.
LossBreakdown evaluate_with_forward(const ModelConfig& cfg,
                                    const ParamSet& params,
                                    const GradBatch& batch,
                                    const SemanticBatch& fwd,
                                    const ForwardCache& cache, ParamSet* grads,
                                    bool parallel);

// Central-difference gradient of the same loss; the independent oracle the
// analytic path is tested against. Returns a ParamSet whose grad buffers
// hold the estimates. h must be > 0.
ParamSet finite_difference_gradient(const ModelConfig& cfg,
                                    const ParamSet& params,
                                    const GradBatch& batch, double h = 1e-5);

} // namespace calnr

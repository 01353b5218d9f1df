#include "calnr/grad_eval.hpp"

#include <cmath>
#include <string>

#include "calnr/common.hpp"
#include "calnr/numerics.hpp"

namespace calnr {

namespace {

void check_batch(const ModelConfig& cfg, const GradBatch& batch) {
  const std::size_t b = batch.batch_size;
  if (b == 0) throw usage_error("evaluate_loss_and_gradients: empty batch");
  if (batch.features.size() != b * cfg.locations * cfg.feature_dim)
    throw data_error("batch: features size mismatch");
  const std::size_t bc = b * cfg.num_categories;
  if (batch.observed.size() != bc || batch.pseudo.size() != bc ||
      batch.lambda.size() != bc)
    throw data_error("batch: label/weight size mismatch");
  if (!batch.csl_positive.empty() && batch.csl_positive.size() != bc)
    throw data_error("batch: csl label size mismatch");
  if (!batch.full.empty() && batch.full.size() != bc)
    throw data_error("batch: full label size mismatch");
}

void check_finite(double value, const char* term) {
  if (!std::isfinite(value))
    throw numeric_error(std::string("non-finite loss term: ") + term);
}

} // namespace

LossBreakdown evaluate_loss_and_gradients(const ModelConfig& cfg,
                                          const ParamSet& params,
                                          const GradBatch& batch,
                                          ParamSet* grads, bool parallel) {
  check_batch(cfg, batch);
  ForwardCache cache;
  const SemanticBatch fwd = forward(cfg, params, batch.features,
                                    batch.batch_size,
                                    grads ? &cache : nullptr, parallel);
  return evaluate_with_forward(cfg, params, batch, fwd, cache, grads,
                               parallel);
}

LossBreakdown evaluate_with_forward(const ModelConfig& cfg,
                                    const ParamSet& params,
                                    const GradBatch& batch,
                                    const SemanticBatch& fwd,
                                    const ForwardCache& cache, ParamSet* grads,
                                    bool parallel) {
  check_batch(cfg, batch);
  const std::size_t b = batch.batch_size;
  const std::size_t c = cfg.num_categories;
  const double inv_b = 1.0 / static_cast<double>(b);

  const std::span<const double> scores{fwd.scores.data};

  LossBreakdown parts;
  parts.l_an = an_loss(batch.observed, scores) * inv_b;
  check_finite(parts.l_an, "an");
  parts.l_pseudo = pseudo_loss(batch.pseudo, scores) * inv_b;
  check_finite(parts.l_pseudo, "pseudo");
  parts.l_weighted = weighted_loss(batch.observed, scores, batch.lambda) * inv_b;
  check_finite(parts.l_weighted, "weighted");
  parts.l_cls = parts.l_an + parts.l_pseudo + parts.l_weighted;
  if (!batch.full.empty()) {
    parts.l_full = full_bce(batch.full, scores) * inv_b;
    check_finite(parts.l_full, "full_bce");
  }

  Tensor rep_grad;
  if (grads) {
    if (cache.raw_sigmoid.shape != std::vector<std::size_t>{b, c})
      throw data_error("evaluate_with_forward: cache does not match batch");
    grads->zero_grads();
    rep_grad = Tensor::zeros(fwd.representations.shape);
  }

  if (batch.use_csl) {
    const std::span<const std::int8_t> csl_positive =
        batch.csl_positive.empty()
            ? std::span<const std::int8_t>{batch.observed}
            : std::span<const std::int8_t>{batch.csl_positive};
    // Mean over pair terms, so alpha weighs csl against the per-sample
    // classification mean independent of batch size and queue fill.
    std::size_t queue_entries = 0;
    if (batch.queues)
      for (std::size_t ci = 0; ci < c; ++ci)
        queue_entries += batch.queues->size(ci);
    const std::size_t pair_terms = b * c * (b - 1) + b * queue_entries;
    const double inv_terms =
        pair_terms == 0 ? 0.0 : 1.0 / static_cast<double>(pair_terms);
    parts.l_csl = csl_loss_and_grad(fwd.representations, csl_positive,
                                    batch.queues, batch.alpha * inv_terms,
                                    grads ? &rep_grad : nullptr, parallel) *
                  inv_terms;
    check_finite(parts.l_csl, "csl");
  }
  parts.total = parts.l_cls + batch.alpha * parts.l_csl;
  check_finite(parts.total, "total");

  if (grads) {
    // d(total)/d(score), then through the clamped sigmoid to the logit.
    Tensor logit_grad = Tensor::zeros({b, c});
    const double eps = cfg.score_clamp_eps;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t idx = n * c + ci;
        const double p = fwd.scores(n, ci);
        double dp = 0.0;
        // an
        dp += batch.observed[idx] == 1 ? -1.0 / p : 1.0 / (1.0 - p);
        // pseudo
        dp += batch.pseudo[idx] == 1 ? -1.0 / p : 1.0 / (1.0 - p);
        // weighted
        dp += batch.lambda[idx] *
              (batch.observed[idx] == 1 ? -1.0 / p : 1.0 / (1.0 - p));
        dp *= inv_b;
        const double raw = cache.raw_sigmoid(n, ci);
        // flat where the clamp is active
        const double dsig =
            (raw < eps || raw > 1.0 - eps) ? 0.0 : raw * (1.0 - raw);
        logit_grad(n, ci) = dp * dsig;
      }
    backward(cfg, params, batch.features, b, fwd, cache, rep_grad, logit_grad,
             *grads, parallel);
  }
  return parts;
}

ParamSet finite_difference_gradient(const ModelConfig& cfg,
                                    const ParamSet& params,
                                    const GradBatch& batch, double h) {
  auto loss_at = [&](const ParamSet& p) {
    const LossBreakdown parts =
        evaluate_loss_and_gradients(cfg, p, batch, nullptr, false);
    return parts.total;
  };
  return finite_difference(loss_at, params, h);
}

} // namespace calnr

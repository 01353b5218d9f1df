#include "calnr/losses.hpp"

#include <cmath>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/numerics.hpp"

namespace calnr {

namespace {

void check_scores(std::span<const double> scores, std::size_t labels) {
  if (scores.size() != labels)
    throw data_error("loss: score/label size mismatch");
  // non-finite scores flow through so the per-term finiteness check can
  // name the offending loss term
  for (double p : scores)
    if (std::isfinite(p) && !(p > 0.0 && p < 1.0))
      throw numeric_error("loss: score outside (0, 1)");
}

} // namespace

double full_bce(std::span<const std::int8_t> labels,
                std::span<const double> scores) {
  check_scores(scores, labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      loss -= std::log(scores[i]);
    else if (labels[i] == -1)
      loss -= std::log(1.0 - scores[i]);
    else
      throw data_error("full_bce: labels must be in {-1,+1}");
  }
  return loss;
}

double an_loss(std::span<const std::int8_t> labels,
               std::span<const double> scores) {
  check_scores(scores, labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      loss -= std::log(scores[i]);
    else if (labels[i] == 0)
      loss -= std::log(1.0 - scores[i]);
    else
      throw data_error("an_loss: labels must be in {0,1}");
  }
  return loss;
}

double pseudo_loss(std::span<const std::int8_t> pseudo,
                   std::span<const double> scores) {
  return an_loss(pseudo, scores);
}

double weighted_loss(std::span<const std::int8_t> labels,
                     std::span<const double> scores,
                     std::span<const double> lambda) {
  check_scores(scores, labels.size());
  if (lambda.size() != labels.size())
    throw data_error("weighted_loss: lambda size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      loss -= lambda[i] * std::log(scores[i]);
    else if (labels[i] == 0)
      loss -= lambda[i] * std::log(1.0 - scores[i]);
    else
      throw data_error("weighted_loss: labels must be in {0,1}");
  }
  return loss;
}

double classification_loss(std::span<const std::int8_t> labels,
                           std::span<const std::int8_t> pseudo,
                           std::span<const double> lambda,
                           std::span<const double> scores) {
  return an_loss(labels, scores) + pseudo_loss(pseudo, scores) +
         weighted_loss(labels, scores, lambda);
}

double csl_loss_and_grad(const Tensor& representations,
                         std::span<const std::int8_t> positive_labels,
                         const PositiveQueues* queues, double scale,
                         Tensor* rep_grad, bool parallel) {
  const std::size_t batch = representations.dim(0);
  const std::size_t c = representations.dim(1);
  const std::size_t d = representations.dim(2);
  if (positive_labels.size() != batch * c)
    throw data_error("csl_loss: label span size mismatch");
  if (rep_grad && rep_grad->shape != representations.shape)
    throw data_error("csl_loss: rep_grad shape mismatch");

  // Per-sample partial sums, reduced in ascending order afterwards.
  std::vector<double> partial(batch, 0.0);

#pragma omp parallel for if (parallel) schedule(static)
  for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    double local = 0.0;
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* f = representations.data.data() + (n * c + ci) * d;
      const std::span<const double> f_span{f, d};
      const bool n_pos = positive_labels[n * c + ci] == 1;
      double* g =
          rep_grad ? rep_grad->data.data() + (n * c + ci) * d : nullptr;

      auto accumulate_pair = [&](std::span<const double> partner,
                                 bool partner_pos, double grad_mult) {
        const CosineParts parts = cosine_parts(f_span, partner);
        const double sign = (n_pos && partner_pos) ? -1.0 : 1.0;
        local += 1.0 + sign * parts.value;
        if (g && !parts.degenerate) {
          const double r = std::sqrt(parts.norm2_a * parts.norm2_b);
          const double coeff = sign * grad_mult * scale;
          for (std::size_t di = 0; di < d; ++di)
            g[di] += coeff *
                     (partner[di] / r - parts.value * f[di] / parts.norm2_a);
        }
      };

      for (std::size_t m = 0; m < batch; ++m) {
        if (m == n) continue;
        const std::span<const double> partner{
            representations.data.data() + (m * c + ci) * d, d};
        // both orders (n,m) and (m,n) touch f^n_c, hence the factor 2
        accumulate_pair(partner, positive_labels[m * c + ci] == 1, 2.0);
      }
      if (queues) {
        const std::size_t count = queues->size(ci);
        for (std::size_t qi = 0; qi < count; ++qi)
          accumulate_pair(queues->entry(ci, qi), true, 1.0);
      }
    }
    partial[n] = local;
  }

  double loss = 0.0;
  for (std::size_t n = 0; n < batch; ++n) loss += partial[n];
  return loss;
}

double total_loss(const LossBreakdown& parts, double alpha) {
  return parts.l_cls + alpha * parts.l_csl;
}

} // namespace calnr

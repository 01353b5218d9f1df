#pragma once

#include <cstdint>
#include <span>

#include "calnr/queues.hpp"
#include "calnr/tensor.hpp"

namespace calnr {

// All loss terms take prediction scores already clamped inside (0, 1).
// Label domains differ per term and are validated.

// Full-supervision BCE over labels in {-1,+1}; diagnostic only.
double full_bce(std::span<const std::int8_t> labels,
                std::span<const double> scores);

// Assume-negative BCE over labels in {0,1}: unknown entries take the
// negative branch.
double an_loss(std::span<const std::int8_t> labels,
               std::span<const double> scores);

// an_loss applied to pseudo labels.
double pseudo_loss(std::span<const std::int8_t> pseudo,
                   std::span<const double> scores);

// an_loss with each term scaled by its sample weight.
double weighted_loss(std::span<const std::int8_t> labels,
                     std::span<const double> scores,
                     std::span<const double> lambda);

// an + pseudo + weighted, summed.
double classification_loss(std::span<const std::int8_t> labels,
                           std::span<const std::int8_t> pseudo,
                           std::span<const double> lambda,
                           std::span<const double> scores);

// Cross-image semantic loss over all ordered within-batch pairs (n != m)
// plus (sample, queue entry) pairs: per category, 1 - s when both sides are
// labeled positive, 1 + s otherwise. Queue entries count as positive by
// construction and take no gradient. When rep_grad is non-null,
// scale * d(loss)/d(representations) is accumulated into it.
double csl_loss_and_grad(const Tensor& representations,
                         std::span<const std::int8_t> positive_labels,
                         const PositiveQueues* queues, double scale,
                         Tensor* rep_grad, bool parallel);

inline double csl_loss(const Tensor& representations,
                       std::span<const std::int8_t> positive_labels,
                       const PositiveQueues* queues = nullptr) {
  return csl_loss_and_grad(representations, positive_labels, queues, 0.0,
                           nullptr, false);
}

struct LossBreakdown {
  double l_full = 0.0; // diagnostic, not part of total
  double l_an = 0.0;
  double l_pseudo = 0.0;
  double l_weighted = 0.0;
  double l_cls = 0.0; // l_an + l_pseudo + l_weighted
  double l_csl = 0.0;
  double total = 0.0; // l_cls + alpha * l_csl
};

double total_loss(const LossBreakdown& parts, double alpha = 0.05);

} // namespace calnr

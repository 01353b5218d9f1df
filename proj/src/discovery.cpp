#include "calnr/discovery.hpp"

#include "calnr/common.hpp"
#include "calnr/numerics.hpp"

namespace calnr {

SimilarityResult avg_positive_similarity(std::span<const double> repr,
                                         const PositiveQueues& queues,
                                         std::size_t category) {
  SimilarityResult result;
  if (!queues.ready(category)) return result;
  const std::size_t count = queues.size(category);
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    sum += cosine(repr, queues.entry(category, i));
  result.value = sum / static_cast<double>(count);
  result.abstain = false;
  return result;
}

BatchSimilarities batch_similarities(const Tensor& representations,
                                     const PositiveQueues& queues,
                                     bool parallel) {
  const std::size_t batch = representations.dim(0);
  const std::size_t c = representations.dim(1);
  const std::size_t d = representations.dim(2);
  if (queues.num_categories() != c || queues.dim() != d)
    throw data_error("batch_similarities: queue layout mismatch");

  BatchSimilarities out;
  out.values = Tensor::zeros({batch, c});
  out.abstain.assign(batch * c, 1);

#pragma omp parallel for if (parallel) schedule(static)
  for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::span<const double> repr{
          representations.data.data() + (n * c + ci) * d, d};
      const SimilarityResult r = avg_positive_similarity(repr, queues, ci);
      if (!r.abstain) {
        out.values(n, ci) = r.value;
        out.abstain[n * c + ci] = 0;
      }
    }
  }
  return out;
}

std::size_t PseudoLabels::discovered_count() const {
  std::size_t count = 0;
  for (Provenance p : provenance)
    if (p == Provenance::discovered) ++count;
  return count;
}

PseudoLabels generate_pseudo_labels(std::span<const std::int8_t> observed,
                                    std::size_t batch, std::size_t categories,
                                    const BatchSimilarities& sims,
                                    std::span<const double> theta_pos) {
  if (observed.size() != batch * categories)
    throw data_error("generate_pseudo_labels: label span size mismatch");
  if (theta_pos.size() != categories)
    throw data_error("generate_pseudo_labels: threshold span size mismatch");

  PseudoLabels out;
  out.labels.assign(batch * categories, 0);
  out.provenance.assign(batch * categories, Provenance::none);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < categories; ++c) {
      const std::size_t idx = n * categories + c;
      if (observed[idx] == 1) {
        out.labels[idx] = 1;
        out.provenance[idx] = Provenance::observed;
      } else if (!sims.abstained(n, c) && sims.values(n, c) >= theta_pos[c]) {
        out.labels[idx] = 1;
        out.provenance[idx] = Provenance::discovered;
      }
    }
  return out;
}

void update_queues(const Tensor& representations,
                   std::span<const std::int8_t> observed,
                   PositiveQueues& queues) {
  const std::size_t batch = representations.dim(0);
  const std::size_t c = representations.dim(1);
  const std::size_t d = representations.dim(2);
  if (observed.size() != batch * c)
    throw data_error("update_queues: label span size mismatch");
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ci = 0; ci < c; ++ci)
      if (observed[n * c + ci] == 1)
        queues.push(ci, {representations.data.data() + (n * c + ci) * d, d});
}

} // namespace calnr

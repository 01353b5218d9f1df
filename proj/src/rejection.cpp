#include "calnr/rejection.hpp"

#include <algorithm>

#include "calnr/common.hpp"

namespace calnr {

SampleWeights sample_weights(const BatchSimilarities& sims,
                             std::span<const std::int8_t> observed,
                             std::span<const double> theta_pos,
                             std::span<const double> theta_neg, Rng& rng,
                             RejectionMode mode) {
  const std::size_t batch = sims.values.dim(0);
  const std::size_t categories = sims.values.dim(1);
  if (observed.size() != batch * categories)
    throw data_error("sample_weights: label span size mismatch");
  if (theta_pos.size() != categories || theta_neg.size() != categories)
    throw data_error("sample_weights: threshold span size mismatch");

  SampleWeights out;
  out.lambda.assign(batch * categories, 1.0);
  out.keep_probability.assign(batch * categories, 1.0);

  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < categories; ++c) {
      const std::size_t idx = n * categories + c;
      const double draw = rng.uniform(); // consumed for every entry
      if (observed[idx] == 1) continue;  // lambda stays 1
      ++out.considered;
      double keep = 1.0;
      const double delta = theta_pos[c] - theta_neg[c];
      if (!sims.abstained(n, c) && delta > 0.0) {
        const double s = sims.values(n, c);
        const double ratio = mode == RejectionMode::corrected
                                 ? (theta_pos[c] - s) / delta
                                 : (s - theta_neg[c]) / delta;
        keep = std::clamp(ratio, 0.0, 1.0);
      }
      out.keep_probability[idx] = keep;
      if (keep > draw) {
        // kept
      } else {
        out.lambda[idx] = 0.0;
        ++out.rejected;
      }
    }
  return out;
}

} // namespace calnr

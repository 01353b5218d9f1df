#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calnr/discovery.hpp"
#include "calnr/rng.hpp"

namespace calnr {

// "corrected" keeps an assumed-negative with probability
//   clamp((theta_pos - s) / (theta_pos - theta_neg), 0, 1),
// so entries that look like positives are the ones rejected; "literal" uses
// clamp((s - theta_neg) / (theta_pos - theta_neg), 0, 1), the opposite
// direction. Both are provided; corrected is the default because it is the
// direction consistent with label discovery.
enum class RejectionMode { corrected, literal };

struct SampleWeights {
  std::vector<double> lambda;           // B x C, in {0,1}
  std::vector<double> keep_probability; // B x C, pre-draw
  std::size_t rejected = 0;             // count of lambda=0 entries
  std::size_t considered = 0;           // count of observed-negative entries
  double rejection_rate() const {
    return considered == 0
               ? 0.0
               : static_cast<double>(rejected) / static_cast<double>(considered);
  }
};

// Observed positives always keep lambda = 1. One uniform draw is consumed
// per (n, c) entry in row-major order regardless of labels, so the stream
// position is reproducible. Abstained similarities and degenerate
// denominators keep the entry (keep probability 1).
SampleWeights sample_weights(const BatchSimilarities& sims,
                             std::span<const std::int8_t> observed,
                             std::span<const double> theta_pos,
                             std::span<const double> theta_neg, Rng& rng,
                             RejectionMode mode);

} // namespace calnr

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calnr/discovery.hpp"

namespace calnr {

// Global threshold schedule: 1.0 through the warm-up epochs (discovery is
// inert because cosine similarities cannot exceed 1), then a linear decay
// from `start` in steps of `step` down to `floor`.
struct ThetaSchedule {
  int warmup_epochs = 5;
  double start = 0.95;
  double step = 0.025;
  double floor = 0.6;
};

// epoch is 1-based. Evaluated on a micro-unit integer grid so repeated
// steps land exactly on the decimal values of the schedule.
double theta_at_epoch(int epoch, const ThetaSchedule& schedule);

// Per-category similarity statistics with momentum blending across epochs,
// plus the thresholds derived from them.
struct CategoryStats {
  double running_pos_mean = 0.0;
  double running_neg_mean = 0.0;
  std::size_t running_pos_count = 0;
  std::size_t running_neg_count = 0;
  double prev_pos = 0.0; // previous epoch's final mean
  double prev_neg = 0.0;
  bool prev_pos_valid = false;
  bool prev_neg_valid = false;
  double theta_pos = 1.0;
  double theta_neg = 1.0;
};

struct BlendedStats {
  double pos = 0.0;
  double neg = 0.0;
  bool pos_valid = false;
  bool neg_valid = false;
};

struct ThresholdState {
  std::vector<CategoryStats> categories;
  std::size_t batch_index = 0;       // b, resets every epoch
  std::size_t batches_per_epoch = 0; // B
  int epoch = 1;                     // 1-based

  static ThresholdState make(std::size_t num_categories,
                             std::size_t batches_per_epoch,
                             double initial_theta);

  std::vector<double> theta_pos() const;
  std::vector<double> theta_neg() const;
};

// Folds one batch of similarities into the running means (observed
// positives feed the positive side, everything else the negative side;
// abstained entries are skipped) and advances the batch index.
void accumulate_stats(ThresholdState& state, const BatchSimilarities& sims,
                      std::span<const std::int8_t> observed);

// (b/B) * current running mean + (1 - b/B) * previous epoch's final.
// With no previous epoch the blend is the identity on the running mean.
BlendedStats blended_stats(const ThresholdState& state, std::size_t category);

// theta_pos = max(blended pos, theta); theta_neg = midpoint of theta_pos and
// the blended negative mean. Categories without any positive statistics
// follow the schedule alone.
void update_thresholds(ThresholdState& state, double theta);

// Epoch rollover: running means become the previous-epoch finals (categories
// with no observations keep their old finals), counters reset, epoch += 1.
void end_epoch(ThresholdState& state);

} // namespace calnr

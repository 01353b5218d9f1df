#include "calnr/thresholds.hpp"

#include <algorithm>
#include <cmath>

#include "calnr/common.hpp"

namespace calnr {

double theta_at_epoch(int epoch, const ThetaSchedule& schedule) {
  if (epoch < 1) throw usage_error("theta_at_epoch: epoch must be >= 1");
  if (schedule.step <= 0.0 || schedule.floor > schedule.start)
    throw usage_error("theta_at_epoch: invalid schedule");
  if (epoch <= schedule.warmup_epochs) return 1.0;
  const long long start_u = std::llround(schedule.start * 1e6);
  const long long step_u = std::llround(schedule.step * 1e6);
  const long long floor_u = std::llround(schedule.floor * 1e6);
  const long long k = epoch - schedule.warmup_epochs - 1;
  const long long value_u = std::max(start_u - step_u * k, floor_u);
  return static_cast<double>(value_u) / 1e6;
}

ThresholdState ThresholdState::make(std::size_t num_categories,
                                    std::size_t batches_per_epoch,
                                    double initial_theta) {
  ThresholdState state;
  state.categories.resize(num_categories);
  for (CategoryStats& cs : state.categories) {
    cs.theta_pos = initial_theta;
    cs.theta_neg = initial_theta;
  }
  state.batches_per_epoch = batches_per_epoch;
  return state;
}

std::vector<double> ThresholdState::theta_pos() const {
  std::vector<double> out(categories.size());
  for (std::size_t c = 0; c < categories.size(); ++c)
    out[c] = categories[c].theta_pos;
  return out;
}

std::vector<double> ThresholdState::theta_neg() const {
  std::vector<double> out(categories.size());
  for (std::size_t c = 0; c < categories.size(); ++c)
    out[c] = categories[c].theta_neg;
  return out;
}

void accumulate_stats(ThresholdState& state, const BatchSimilarities& sims,
                      std::span<const std::int8_t> observed) {
  const std::size_t batch = sims.values.dim(0);
  const std::size_t categories = sims.values.dim(1);
  if (observed.size() != batch * categories)
    throw data_error("accumulate_stats: label span size mismatch");
  if (categories != state.categories.size())
    throw data_error("accumulate_stats: category count mismatch");

  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < categories; ++c) {
      if (sims.abstained(n, c)) continue;
      const double s = sims.values(n, c);
      CategoryStats& cs = state.categories[c];
      if (observed[n * categories + c] == 1) {
        // incremental count-weighted mean
        ++cs.running_pos_count;
        cs.running_pos_mean +=
            (s - cs.running_pos_mean) / static_cast<double>(cs.running_pos_count);
      } else {
        ++cs.running_neg_count;
        cs.running_neg_mean +=
            (s - cs.running_neg_mean) / static_cast<double>(cs.running_neg_count);
      }
    }
  if (state.batch_index < state.batches_per_epoch) ++state.batch_index;
}

namespace {

// One side of the blend. Falls back to whichever side has data.
void blend_side(double running, std::size_t count, double prev, bool prev_valid,
                double weight, double& out, bool& out_valid) {
  const bool running_valid = count > 0;
  if (running_valid && prev_valid) {
    out = weight * running + (1.0 - weight) * prev;
    out_valid = true;
  } else if (running_valid) {
    out = running; // epoch-1 bootstrap: blend is the identity
    out_valid = true;
  } else if (prev_valid) {
    out = prev;
    out_valid = true;
  } else {
    out = 0.0;
    out_valid = false;
  }
}

} // namespace

BlendedStats blended_stats(const ThresholdState& state, std::size_t category) {
  const CategoryStats& cs = state.categories.at(category);
  const double weight =
      state.batches_per_epoch == 0
          ? 1.0
          : static_cast<double>(state.batch_index) /
                static_cast<double>(state.batches_per_epoch);
  BlendedStats out;
  blend_side(cs.running_pos_mean, cs.running_pos_count, cs.prev_pos,
             cs.prev_pos_valid, weight, out.pos, out.pos_valid);
  blend_side(cs.running_neg_mean, cs.running_neg_count, cs.prev_neg,
             cs.prev_neg_valid, weight, out.neg, out.neg_valid);
  return out;
}

void update_thresholds(ThresholdState& state, double theta) {
  for (std::size_t c = 0; c < state.categories.size(); ++c) {
    const BlendedStats bs = blended_stats(state, c);
    CategoryStats& cs = state.categories[c];
    cs.theta_pos = bs.pos_valid ? std::max(bs.pos, theta) : theta;
    cs.theta_neg = bs.neg_valid ? 0.5 * (cs.theta_pos + bs.neg) : cs.theta_pos;
  }
}

void end_epoch(ThresholdState& state) {
  for (CategoryStats& cs : state.categories) {
    if (cs.running_pos_count > 0) {
      cs.prev_pos = cs.running_pos_mean;
      cs.prev_pos_valid = true;
    }
    if (cs.running_neg_count > 0) {
      cs.prev_neg = cs.running_neg_mean;
      cs.prev_neg_valid = true;
    }
    cs.running_pos_mean = 0.0;
    cs.running_neg_mean = 0.0;
    cs.running_pos_count = 0;
    cs.running_neg_count = 0;
  }
  state.batch_index = 0;
  ++state.epoch;
}

} // namespace calnr

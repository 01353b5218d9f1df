#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "calnr/dataset.hpp"
#include "calnr/losses.hpp"
#include "calnr/metrics.hpp"
#include "calnr/model.hpp"
#include "calnr/queues.hpp"
#include "calnr/rejection.hpp"
#include "calnr/thresholds.hpp"

namespace calnr {

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 32;
  // A pretrained-backbone setup would start near 1e-5; training from
  // scratch on synthetic features wants a larger step.
  double lr = 1e-3;
  int lr_decay_every = 10;      // divide lr by the divisor every this many epochs
  double lr_decay_divisor = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  double adam_eps = 1e-8;
  double alpha = 0.05; // csl weight
  ThetaSchedule theta;
  std::size_t queue_capacity = 64;
  std::size_t queue_min = 8;
  RejectionMode rejection_mode = RejectionMode::corrected;
  bool enable_cald = true;
  bool enable_canr = true;
  bool enable_catu = true;
  bool enable_csl = true;
  double fixed_theta_pos = 0.9; // used when CATU is off
  double fixed_theta_neg = 0.6;
  bool csl_use_pseudo = false; // csl positive branch from pseudo labels
  std::uint64_t seed = 1;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  CsslMode mode = CsslMode::attention;
  double score_clamp_eps = 1e-7;
  bool parallel = true;
  double eval_threshold = 0.5;

  void validate() const;
};

std::string encode_config(const TrainConfig& config);
TrainConfig decode_config(const std::string& text);
std::uint64_t config_hash(const TrainConfig& config);

struct AdamState {
  std::vector<Tensor> m; // parallel to ParamSet entries
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState make(const ParamSet& params);
};

// Bias-corrected Adam with the weight-decay term added to the gradient
// before the moment update; decays only entries flagged weight_decay.
// Reads gradients from grads' grad buffers (layouts must match).
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps,
               double weight_decay);

struct Checkpoint {
  TrainConfig config;
  ModelConfig model;
  ParamSet params;
  AdamState adam;
  ThresholdState thresholds;
  PositiveQueues queues;
  int completed_epochs = 0;
};

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0; // rate applied during this epoch
  LossBreakdown mean_loss; // means over the epoch's batches
  std::vector<double> theta_pos;
  std::vector<double> theta_neg;
  std::size_t pseudo_count = 0; // discovered this epoch
  double pseudo_precision = -1.0; // vs full labels; -1 when unavailable
  double pseudo_recall = -1.0;
  double reject_rate = 0.0;
  std::optional<EvalReport> eval;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> logs;
};

// Full training loop. When run_dir is given, writes config.txt, metrics.csv,
// thresholds.csv and checkpoint.bin underneath it. eval_data (optional)
// is scored after every epoch and must carry full labels.
TrainResult train(const Dataset& train_data, const Dataset* eval_data,
                  const TrainConfig& config,
                  const std::filesystem::path* run_dir = nullptr);

// Continues a loaded checkpoint up to config.epochs. Subsequent logs are
// bit-identical to an uninterrupted run.
TrainResult resume(Checkpoint checkpoint, const Dataset& train_data,
                   const Dataset* eval_data,
                   const std::filesystem::path* run_dir = nullptr);

// Forward pass over a dataset with full labels; metrics at the checkpoint's
// eval threshold.
EvalReport evaluate(const Checkpoint& cp, const Dataset& data);

} // namespace calnr

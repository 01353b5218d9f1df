#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "calnr/common.hpp"
#include "calnr/trainer.hpp"

using namespace calnr;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(std::uint64_t seed, std::size_t n = 48) {
  SynthConfig cfg;
  cfg.num_samples = n;
  cfg.num_categories = 4;
  cfg.locations = 4;
  cfg.feature_dim = 8;
  cfg.noise_sigma = 0.3;
  cfg.max_labels_per_image = 2;
  Dataset ds = generate_synthetic(cfg, seed);
  ds.partial_labels =
      drop_labels(ds.full_labels, ds.num_samples, ds.num_categories, 0.5, seed);
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 16;
  config.hidden_dim = 6;
  config.embed_dim = 4;
  config.queue_capacity = 16;
  config.queue_min = 2;
  config.seed = 5;
  return config;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const char* tag) {
  const fs::path dir =
      fs::temp_directory_path() / (std::string("calnr_trainer_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamSet params;
  params.add("w", Tensor::from({2}, {1.5, -0.5}), true);
  ParamSet grads = params;
  grads.zero_grads();
  AdamState state = AdamState::make(params);
  adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8, 0.0);
  CHECK(params.value("w")(0) == 1.5);
  CHECK(params.value("w")(1) == -0.5);
  CHECK(state.t == 1);
}

TEST_CASE("adam: first bias-corrected step is about -lr") {
  ParamSet params;
  params.add("x", Tensor::from({1}, {0.0}));
  ParamSet grads = params;
  grads.grad("x")(0) = 1.0;
  AdamState state = AdamState::make(params);
  adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8, 0.0);
  CHECK(params.value("x")(0) == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam trajectory matches an independent recurrence on a quadratic") {
  // minimize f(x) = 0.5 x^2, gradient x
  ParamSet params;
  params.add("x", Tensor::from({1}, {3.0}));
  ParamSet grads = params;
  AdamState state = AdamState::make(params);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  // oracle recurrence carried in plain scalars
  double x = 3.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    const double g = x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);

    grads.grad("x")(0) = params.value("x")(0);
    adam_step(params, grads, state, lr, b1, b2, eps, 0.0);
    CHECK(params.value("x")(0) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(std::abs(params.value("x")(0)) < 3.0); // made progress
}

TEST_CASE("adam applies weight decay only to flagged entries") {
  ParamSet params;
  params.add("w", Tensor::from({1}, {1.0}), /*weight_decay=*/true);
  params.add("b", Tensor::from({1}, {1.0}), /*weight_decay=*/false);
  ParamSet grads = params;
  grads.zero_grads();
  AdamState state = AdamState::make(params);
  adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8, 0.5);
  CHECK(params.value("w")(0) < 1.0); // decayed
  CHECK(params.value("b")(0) == 1.0);
}

TEST_CASE("training is deterministic: same seed, same logs, same params") {
  const Dataset ds = tiny_dataset(3);
  const TrainConfig config = tiny_config();
  const TrainResult a = train(ds, &ds, config);
  const TrainResult b = train(ds, &ds, config);
  REQUIRE(a.logs.size() == b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    CHECK(a.logs[i].mean_loss.total == b.logs[i].mean_loss.total);
    CHECK(a.logs[i].pseudo_count == b.logs[i].pseudo_count);
    CHECK(a.logs[i].reject_rate == b.logs[i].reject_rate);
    REQUIRE(a.logs[i].eval.has_value());
    CHECK(a.logs[i].eval->map == b.logs[i].eval->map);
  }
  for (std::size_t i = 0; i < a.checkpoint.params.entries.size(); ++i)
    CHECK(a.checkpoint.params.entries[i].value.data ==
          b.checkpoint.params.entries[i].value.data);
}

TEST_CASE("metrics.csv is byte-identical across identical runs") {
  const Dataset ds = tiny_dataset(4);
  const TrainConfig config = tiny_config();
  const fs::path dir1 = temp_dir("csv_a"), dir2 = temp_dir("csv_b");
  train(ds, &ds, config, &dir1);
  train(ds, &ds, config, &dir2);
  CHECK(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
  CHECK(slurp(dir1 / "thresholds.csv") == slurp(dir2 / "thresholds.csv"));
  CHECK(slurp(dir1 / "checkpoint.bin") == slurp(dir2 / "checkpoint.bin"));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("checkpoint round-trips and resume continues bit-identically") {
  const Dataset ds = tiny_dataset(5);
  TrainConfig config = tiny_config();
  config.epochs = 4;

  // uninterrupted reference run
  const fs::path full_dir = temp_dir("resume_full");
  const TrainResult full = train(ds, &ds, config, &full_dir);

  // stop after two epochs, save, reload, resume
  TrainConfig half_config = config;
  half_config.epochs = 2;
  const TrainResult half = train(ds, &ds, half_config);
  const fs::path cp_file = temp_dir("resume_cp") / "cp.bin";
  Checkpoint cp = half.checkpoint;
  cp.config.epochs = 4; // extend the horizon before saving
  save_checkpoint(cp, cp_file);
  const Checkpoint loaded = load_checkpoint(cp_file);

  // round trip is exact on parameters and optimizer state
  for (std::size_t i = 0; i < cp.params.entries.size(); ++i) {
    CHECK(loaded.params.entries[i].name == cp.params.entries[i].name);
    CHECK(loaded.params.entries[i].value.data ==
          cp.params.entries[i].value.data);
    CHECK(loaded.adam.m[i].data == cp.adam.m[i].data);
    CHECK(loaded.adam.v[i].data == cp.adam.v[i].data);
  }
  CHECK(loaded.adam.t == cp.adam.t);
  CHECK(loaded.completed_epochs == 2);

  const TrainResult rest = resume(loaded, ds, &ds);
  REQUIRE(rest.logs.size() == 2);
  for (std::size_t i = 0; i < rest.logs.size(); ++i) {
    const EpochLog& r = rest.logs[i];
    const EpochLog& f = full.logs[2 + i];
    CHECK(r.epoch == f.epoch);
    CHECK(r.mean_loss.total == f.mean_loss.total);
    CHECK(r.pseudo_count == f.pseudo_count);
    CHECK(r.eval->map == f.eval->map);
  }
  for (std::size_t i = 0; i < rest.checkpoint.params.entries.size(); ++i)
    CHECK(rest.checkpoint.params.entries[i].value.data ==
          full.checkpoint.params.entries[i].value.data);
  fs::remove_all(full_dir);
  fs::remove_all(cp_file.parent_path());
}

TEST_CASE("warm-up epochs discover nothing") {
  const Dataset ds = tiny_dataset(6);
  TrainConfig config = tiny_config();
  config.epochs = 3; // all inside the warm-up window
  const TrainResult result = train(ds, nullptr, config);
  for (const EpochLog& log : result.logs) CHECK(log.pseudo_count == 0);
}

TEST_CASE("ablation identity: all modules off gives the 3x an-loss trace") {
  const Dataset ds = tiny_dataset(7);
  TrainConfig config = tiny_config();
  config.enable_cald = false;
  config.enable_canr = false;
  config.enable_catu = false;
  config.enable_csl = false;
  const TrainResult result = train(ds, nullptr, config);
  for (const EpochLog& log : result.logs) {
    CHECK(log.mean_loss.l_pseudo == log.mean_loss.l_an);
    CHECK(log.mean_loss.l_weighted == log.mean_loss.l_an);
    CHECK(log.mean_loss.l_csl == 0.0);
    CHECK(log.pseudo_count == 0);
    CHECK(log.reject_rate == 0.0);
  }
}

TEST_CASE("disabled modules ignore queue bookkeeping entirely") {
  const Dataset ds = tiny_dataset(8);
  TrainConfig config = tiny_config();
  config.enable_cald = false;
  config.enable_canr = false;
  config.enable_catu = false;
  config.enable_csl = false;
  TrainConfig no_queues = config;
  no_queues.queue_capacity = 0; // queues never fill
  const TrainResult a = train(ds, nullptr, config);
  const TrainResult b = train(ds, nullptr, no_queues);
  for (std::size_t i = 0; i < a.logs.size(); ++i)
    CHECK(a.logs[i].mean_loss.total == b.logs[i].mean_loss.total);
  for (std::size_t i = 0; i < a.checkpoint.params.entries.size(); ++i)
    CHECK(a.checkpoint.params.entries[i].value.data ==
          b.checkpoint.params.entries[i].value.data);
}

TEST_CASE("learning rate divides by the divisor every decay period") {
  const Dataset ds = tiny_dataset(10, /*n=*/8);
  TrainConfig config = tiny_config();
  config.epochs = 9;
  config.batch_size = 8;
  config.lr = 1e-2;
  config.lr_decay_every = 3;
  config.lr_decay_divisor = 10.0;
  const TrainResult result = train(ds, nullptr, config);
  REQUIRE(result.logs.size() == 9);
  for (const EpochLog& log : result.logs) {
    const double expected =
        config.lr / std::pow(10.0, (log.epoch - 1) / 3);
    CHECK(log.lr == doctest::Approx(expected).epsilon(1e-15));
  }
  CHECK(result.logs.front().lr == 1e-2);
  CHECK(result.logs.back().lr == doctest::Approx(1e-4).epsilon(1e-15));
}

TEST_CASE("evaluate is pure and needs full labels") {
  const Dataset ds = tiny_dataset(9);
  TrainConfig config = tiny_config();
  config.epochs = 1;
  const TrainResult result = train(ds, nullptr, config);
  const EvalReport a = evaluate(result.checkpoint, ds);
  const EvalReport b = evaluate(result.checkpoint, ds);
  CHECK(a.map == b.map);
  CHECK(a.of1 == b.of1);

  Dataset no_labels = ds;
  no_labels.full_labels.clear();
  CHECK_THROWS_AS(evaluate(result.checkpoint, no_labels), data_error);
}

TEST_CASE("projection mode trains end to end deterministically") {
  const Dataset ds = tiny_dataset(12);
  TrainConfig config = tiny_config();
  config.mode = CsslMode::projection;
  const TrainResult a = train(ds, &ds, config);
  const TrainResult b = train(ds, &ds, config);
  REQUIRE(!a.logs.empty());
  CHECK(a.logs.back().mean_loss.total < a.logs.front().mean_loss.total);
  for (std::size_t i = 0; i < a.logs.size(); ++i)
    CHECK(a.logs[i].mean_loss.total == b.logs[i].mean_loss.total);
}

TEST_CASE("full supervision on the default synthetic data clears 0.9 mAP") {
  SynthConfig synth; // defaults; partial labels start as all positives
  const Dataset train_data = generate_synthetic(synth, 42);
  SynthConfig eval_synth;
  eval_synth.num_samples = 600; // fresh samples, same prototypes
  const Dataset eval_data = generate_synthetic(eval_synth, 43);

  TrainConfig config;
  config.epochs = 4;
  config.lr = 1e-2;
  config.hidden_dim = 16;
  config.embed_dim = 16;
  config.seed = 1;
  const TrainResult result = train(train_data, nullptr, config);
  const EvalReport report = evaluate(result.checkpoint, eval_data);
  CHECK(report.map > 0.9);
}

TEST_CASE("untrained parameters score near the mean class prior") {
  SynthConfig eval_synth;
  eval_synth.num_samples = 600;
  const Dataset ev = generate_synthetic(eval_synth, 43);
  double prior = 0.0;
  for (std::size_t c = 0; c < ev.num_categories; ++c) {
    std::size_t pos = 0;
    for (std::size_t n = 0; n < ev.num_samples; ++n)
      pos += ev.full_labels[n * ev.num_categories + c] == 1;
    prior += static_cast<double>(pos) / static_cast<double>(ev.num_samples);
  }
  prior /= static_cast<double>(ev.num_categories);

  double map_sum = 0.0;
  const int seeds = 6;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    Checkpoint cp;
    cp.config.hidden_dim = 16;
    cp.config.embed_dim = 16;
    cp.model.num_categories = ev.num_categories;
    cp.model.locations = ev.locations;
    cp.model.feature_dim = ev.feature_dim;
    cp.model.embed_dim = 16;
    cp.model.hidden_dim = 16;
    cp.params = init_params(cp.model, seed);
    map_sum += evaluate(cp, ev).map;
  }
  const double avg = map_sum / seeds;
  CHECK(std::abs(avg - prior) < 0.1);
}

TEST_CASE("non-finite forward aborts and retains the last-good checkpoint") {
  Dataset ds = tiny_dataset(11);
  ds.features[3] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig config = tiny_config();
  const fs::path dir = temp_dir("abort");
  CHECK_THROWS_AS(train(ds, nullptr, config, &dir), numeric_error);
  REQUIRE(fs::exists(dir / "checkpoint.bin"));
  const Checkpoint cp = load_checkpoint(dir / "checkpoint.bin");
  CHECK(cp.completed_epochs == 0);
  CHECK(cp.params.all_finite()); // pre-failure parameters
  fs::remove_all(dir);
}

TEST_CASE("config text round-trips through encode/decode") {
  TrainConfig config = tiny_config();
  config.rejection_mode = RejectionMode::literal;
  config.mode = CsslMode::projection;
  config.lr = 3.25e-4;
  config.enable_catu = false;
  const TrainConfig back = decode_config(encode_config(config));
  CHECK(encode_config(back) == encode_config(config));
  CHECK(config_hash(back) == config_hash(config));
  CHECK_THROWS_AS(decode_config("nonsense_key=1\n"), data_error);
}

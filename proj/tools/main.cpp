#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/dataset.hpp"
#include "calnr/trainer.hpp"

// Subcommands: gen-synth, drop-labels, train, eval, sweep.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

namespace fs = std::filesystem;
using namespace calnr;

namespace {

struct SynthFlags {
  SynthConfig config;
  std::string out;
  std::uint64_t seed = 1;
  bool force = false;
};

struct TrainFlags {
  TrainConfig config;
  std::string data;
  std::string eval_data;
  std::string out;
  std::string resume_from;
  std::string rejection = "corrected";
  std::string mode = "attention";
};

void add_train_options(CLI::App* cmd, TrainFlags& f) {
  cmd->set_config("--config", "", "read options from a key=value file");
  cmd->add_option("--data", f.data, "training dataset directory")
      ->required();
  cmd->add_option("--eval-data", f.eval_data,
                  "dataset with full labels scored after every epoch");
  cmd->add_option("--out", f.out, "run directory for logs and checkpoints");
  cmd->add_option("--resume", f.resume_from,
                  "checkpoint to continue from (config flags other than "
                  "--epochs are taken from the checkpoint)");
  auto& c = f.config;
  cmd->add_option("--epochs", c.epochs, "training epochs")
      ->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "samples per batch")
      ->capture_default_str();
  cmd->add_option("--lr", c.lr, "initial learning rate")
      ->capture_default_str();
  cmd->add_option("--lr-decay-every", c.lr_decay_every,
                  "epochs between learning-rate divisions")
      ->capture_default_str();
  cmd->add_option("--lr-decay-divisor", c.lr_decay_divisor,
                  "learning-rate division factor")
      ->capture_default_str();
  cmd->add_option("--beta1", c.beta1, "adam first-moment decay")
      ->capture_default_str();
  cmd->add_option("--beta2", c.beta2, "adam second-moment decay")
      ->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay, "L2 term on weights")
      ->capture_default_str();
  cmd->add_option("--adam-eps", c.adam_eps, "adam denominator epsilon")
      ->capture_default_str();
  cmd->add_option("--alpha", c.alpha, "cross-image semantic loss weight")
      ->capture_default_str();
  cmd->add_option("--theta-warmup", c.theta.warmup_epochs,
                  "epochs with the global threshold pinned at 1")
      ->capture_default_str();
  cmd->add_option("--theta-start", c.theta.start,
                  "global threshold after warm-up")
      ->capture_default_str();
  cmd->add_option("--theta-step", c.theta.step,
                  "per-epoch decrease of the global threshold")
      ->capture_default_str();
  cmd->add_option("--theta-floor", c.theta.floor,
                  "lower bound of the global threshold")
      ->capture_default_str();
  cmd->add_option("--queue-capacity", c.queue_capacity,
                  "positive queue capacity per category")
      ->capture_default_str();
  cmd->add_option("--queue-min", c.queue_min,
                  "queue entries required before similarities count")
      ->capture_default_str();
  cmd->add_option("--rejection-mode", f.rejection,
                  "corrected or literal rejection ratio")
      ->capture_default_str()
      ->check(CLI::IsMember({"corrected", "literal"}));
  cmd->add_option("--enable-cald", c.enable_cald,
                  "discover pseudo labels for unknown entries")
      ->capture_default_str();
  cmd->add_option("--enable-canr", c.enable_canr,
                  "reject suspicious assumed negatives")
      ->capture_default_str();
  cmd->add_option("--enable-catu", c.enable_catu,
                  "adapt per-category thresholds from running statistics")
      ->capture_default_str();
  cmd->add_option("--enable-csl", c.enable_csl,
                  "add the cross-image semantic loss")
      ->capture_default_str();
  cmd->add_option("--fixed-theta-pos", c.fixed_theta_pos,
                  "positive threshold used when --enable-catu=false")
      ->capture_default_str();
  cmd->add_option("--fixed-theta-neg", c.fixed_theta_neg,
                  "negative threshold used when --enable-catu=false")
      ->capture_default_str();
  cmd->add_option("--csl-use-pseudo", c.csl_use_pseudo,
                  "csl positive branch reads pseudo labels instead of observed")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "base seed for all derived streams")
      ->capture_default_str();
  cmd->add_option("--embed-dim", c.embed_dim, "category embedding width")
      ->capture_default_str();
  cmd->add_option("--hidden-dim", c.hidden_dim,
                  "attention compatibility width")
      ->capture_default_str();
  cmd->add_option("--mode", f.mode, "cssl implementation")
      ->capture_default_str()
      ->check(CLI::IsMember({"attention", "projection"}));
  cmd->add_option("--score-clamp-eps", c.score_clamp_eps,
                  "clamp keeping scores inside (0,1)")
      ->capture_default_str();
  cmd->add_option("--parallel", c.parallel, "use the OpenMP kernels")
      ->capture_default_str();
  cmd->add_option("--eval-threshold", c.eval_threshold,
                  "score threshold for the F1 family")
      ->capture_default_str();
}

void finish_train_flags(TrainFlags& f) {
  f.config.rejection_mode = f.rejection == "literal" ? RejectionMode::literal
                                                     : RejectionMode::corrected;
  f.config.mode =
      f.mode == "projection" ? CsslMode::projection : CsslMode::attention;
}

void print_report(std::ostream& out, const EvalReport& r) {
  char line[256];
  std::snprintf(line, sizeof(line),
                "mAP %.4f  OP %.4f  CP %.4f  OR %.4f  CR %.4f  OF1 %.4f  "
                "CF1 %.4f  (threshold %.2f)",
                r.map, r.op, r.cp, r.orec, r.cr, r.of1, r.cf1,
                r.score_threshold);
  out << line << "\n";
  out << "per-class AP:";
  for (std::size_t c = 0; c < r.per_class_ap.size(); ++c) {
    if (r.class_included[c])
      std::snprintf(line, sizeof(line), " %.4f", r.per_class_ap[c]);
    else
      std::snprintf(line, sizeof(line), " n/a");
    out << line;
  }
  out << "\n";
}

void write_report_csv(const fs::path& file, const EvalReport& r) {
  std::ofstream out(file);
  if (!out) throw data_error("cannot write report: " + file.string());
  out << "mAP,OP,CP,OR,CR,OF1,CF1,threshold\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f",
                r.map, r.op, r.cp, r.orec, r.cr, r.of1, r.cf1,
                r.score_threshold);
  out << line << "\n";
}

int run_gen_synth(const SynthFlags& f) {
  const fs::path out_dir = f.out;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !f.force)
    throw data_error("output directory exists and is not empty "
                     "(use --force to overwrite): " +
                     out_dir.string());
  const Dataset ds = generate_synthetic(f.config, f.seed);
  save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.num_samples << " samples ("
            << ds.num_categories << " categories, " << ds.locations << "x"
            << ds.feature_dim << " features) to " << out_dir.string() << "\n";
  return 0;
}

int run_drop_labels(const std::string& data, double keep, std::uint64_t seed,
                    bool per_image) {
  const fs::path dir = data;
  Dataset ds = load_dataset(dir);
  if (!ds.has_full_labels())
    throw data_error("dataset has no full labels to drop from");
  ds.partial_labels = drop_labels(ds.full_labels, ds.num_samples,
                                  ds.num_categories, keep, seed, per_image);
  save_dataset(ds, dir);
  std::size_t kept = 0;
  for (auto v : ds.partial_labels) kept += v == 1;
  std::cout << "kept " << kept << " positive labels (proportion " << keep
            << ")\n";
  return 0;
}

int run_train(TrainFlags& f) {
  finish_train_flags(f);
  const Dataset train_data = load_dataset(f.data);
  Dataset eval_data;
  const Dataset* eval_ptr = nullptr;
  if (!f.eval_data.empty()) {
    eval_data = load_dataset(f.eval_data);
    eval_ptr = &eval_data;
  }
  const fs::path out_dir = f.out;
  const fs::path* out_ptr = f.out.empty() ? nullptr : &out_dir;

  TrainResult result;
  if (!f.resume_from.empty()) {
    Checkpoint cp = load_checkpoint(f.resume_from);
    if (f.config.epochs > cp.config.epochs)
      cp.config.epochs = f.config.epochs;
    result = resume(std::move(cp), train_data, eval_ptr, out_ptr);
  } else {
    result = train(train_data, eval_ptr, f.config, out_ptr);
  }

  for (const EpochLog& log : result.logs) {
    char line[256];
    std::snprintf(line, sizeof(line),
                  "epoch %3d  loss %.5f  an %.5f  csl %.5f  pseudo %zu  "
                  "reject %.3f",
                  log.epoch, log.mean_loss.total, log.mean_loss.l_an,
                  log.mean_loss.l_csl, log.pseudo_count, log.reject_rate);
    std::cout << line;
    if (log.eval) {
      std::snprintf(line, sizeof(line), "  mAP %.4f OF1 %.4f CF1 %.4f",
                    log.eval->map, log.eval->of1, log.eval->cf1);
      std::cout << line;
    }
    std::cout << "\n";
  }
  if (!result.logs.empty() && result.logs.back().eval && !f.out.empty())
    write_report_csv(out_dir / "report.csv", *result.logs.back().eval);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data,
             double threshold, const std::string& out) {
  Checkpoint cp = load_checkpoint(checkpoint);
  if (threshold > 0.0) cp.config.eval_threshold = threshold;
  const Dataset ds = load_dataset(data);
  const EvalReport report = evaluate(cp, ds);
  print_report(std::cout, report);
  if (!out.empty()) write_report_csv(out, report);
  return 0;
}

struct SweepRow {
  double keep = 0.0;
  EvalReport report;
};

int run_sweep(TrainFlags& f, const std::vector<double>& keeps,
              std::uint64_t drop_seed, unsigned jobs) {
  finish_train_flags(f);
  if (f.out.empty()) throw usage_error("sweep requires --out");
  if (f.eval_data.empty()) throw usage_error("sweep requires --eval-data");
  const Dataset base = load_dataset(f.data);
  if (!base.has_full_labels())
    throw data_error("sweep dataset needs full labels to drop from");
  const Dataset eval_data = load_dataset(f.eval_data);
  const fs::path out_dir = f.out;
  fs::create_directories(out_dir);

  auto run_one = [&](double keep) {
    Dataset ds = base;
    ds.partial_labels = drop_labels(ds.full_labels, ds.num_samples,
                                    ds.num_categories, keep, drop_seed);
    char tag[32];
    std::snprintf(tag, sizeof(tag), "keep%02d",
                  static_cast<int>(keep * 100.0 + 0.5));
    const fs::path run_dir = out_dir / tag;
    const TrainResult result = train(ds, nullptr, f.config, &run_dir);
    SweepRow row;
    row.keep = keep;
    row.report = evaluate(result.checkpoint, eval_data);
    return row;
  };

  std::vector<SweepRow> rows(keeps.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < keeps.size(); ++i) rows[i] = run_one(keeps[i]);
  } else {
    std::vector<std::future<SweepRow>> futures;
    futures.reserve(keeps.size());
    // bounded pool: at most `jobs` runs in flight
    std::size_t next = 0;
    while (next < keeps.size() || !futures.empty()) {
      while (next < keeps.size() && futures.size() < jobs)
        futures.push_back(
            std::async(std::launch::async, run_one, keeps[next++]));
      rows[next - futures.size()] = futures.front().get();
      futures.erase(futures.begin());
    }
  }

  std::ofstream csv(out_dir / "sweep.csv");
  csv << "keep_proportion,mAP,OF1,CF1\n";
  std::cout << "keep   mAP     OF1     CF1\n";
  double map_sum = 0.0, of1_sum = 0.0, cf1_sum = 0.0;
  for (const SweepRow& row : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%.1f    %.4f  %.4f  %.4f", row.keep,
                  row.report.map, row.report.of1, row.report.cf1);
    std::cout << line << "\n";
    std::snprintf(line, sizeof(line), "%.1f,%.6f,%.6f,%.6f", row.keep,
                  row.report.map, row.report.of1, row.report.cf1);
    csv << line << "\n";
    map_sum += row.report.map;
    of1_sum += row.report.of1;
    cf1_sum += row.report.cf1;
  }
  const double inv = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  char line[128];
  std::snprintf(line, sizeof(line), "avg    %.4f  %.4f  %.4f", map_sum * inv,
                of1_sum * inv, cf1_sum * inv);
  std::cout << line << "\n";
  std::snprintf(line, sizeof(line), "average,%.6f,%.6f,%.6f", map_sum * inv,
                of1_sum * inv, cf1_sum * inv);
  csv << line << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"category-adaptive label discovery and noise rejection "
               "for multi-label training from partial positive labels"};
  app.require_subcommand(1);

  // gen-synth
  SynthFlags synth;
  CLI::App* gen = app.add_subcommand(
      "gen-synth", "generate a synthetic feature-map dataset");
  gen->set_config("--config", "", "read options from a key=value file");
  gen->add_option("--out", synth.out, "output dataset directory")->required();
  gen->add_option("--n", synth.config.num_samples, "samples")
      ->capture_default_str();
  gen->add_option("--c", synth.config.num_categories, "categories")
      ->capture_default_str();
  gen->add_option("--l", synth.config.locations, "locations per sample")
      ->capture_default_str();
  gen->add_option("--d", synth.config.feature_dim, "feature dimension")
      ->capture_default_str();
  gen->add_option("--sigma", synth.config.noise_sigma, "feature noise sigma")
      ->capture_default_str();
  gen->add_option("--max-labels", synth.config.max_labels_per_image,
                  "max planted categories per sample")
      ->capture_default_str();
  gen->add_option("--correlation", synth.config.category_correlation,
                  "prototype pair blending in [0,1]")
      ->capture_default_str();
  gen->add_option("--prototypes-seed", synth.config.prototypes_seed,
                  "seed for drawing category prototypes")
      ->capture_default_str();
  gen->add_option("--seed", synth.seed, "seed for sample generation")
      ->capture_default_str();
  gen->add_flag("--force", synth.force, "overwrite a non-empty directory");

  // drop-labels
  std::string drop_data;
  double drop_keep = 0.5;
  std::uint64_t drop_seed = 1;
  bool drop_per_image = false;
  CLI::App* drop = app.add_subcommand(
      "drop-labels",
      "rewrite labels_partial.i8 keeping a proportion of the positives");
  drop->set_config("--config", "", "read options from a key=value file");
  drop->add_option("--data", drop_data, "dataset directory")->required();
  drop->add_option("--keep", drop_keep,
                   "kept proportion of positive labels, in (0,1]")
      ->capture_default_str();
  drop->add_option("--seed", drop_seed, "selection seed")
      ->capture_default_str();
  drop->add_flag("--per-image", drop_per_image,
                 "sample the kept positives per image instead of dataset-wide");

  // train
  TrainFlags train_flags;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train on a partially labeled dataset");
  add_train_options(train_cmd, train_flags);

  // eval
  std::string eval_checkpoint, eval_data_dir, eval_out;
  double eval_threshold = 0.0; // 0 = keep the checkpoint's threshold
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "score a checkpoint on a dataset with full labels");
  eval_cmd->set_config("--config", "", "read options from a key=value file");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval_data_dir, "dataset directory")
      ->required();
  eval_cmd->add_option("--threshold", eval_threshold,
                       "override the F1 score threshold (0 keeps stored)")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "also write a CSV report here");

  // sweep
  TrainFlags sweep_flags;
  std::vector<double> sweep_keeps{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t sweep_drop_seed = 1;
  unsigned sweep_jobs = 1;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "train and evaluate across keep proportions, print the table");
  add_train_options(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--keeps", sweep_keeps,
                        "keep proportions to sweep over")
      ->capture_default_str();
  sweep_cmd->add_option("--drop-seed", sweep_drop_seed,
                        "seed for the label drops")
      ->capture_default_str();
  sweep_cmd->add_option("--jobs", sweep_jobs,
                        "independent runs in flight at once")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_synth(synth);
    if (drop->parsed())
      return run_drop_labels(drop_data, drop_keep, drop_seed, drop_per_image);
    if (train_cmd->parsed()) return run_train(train_flags);
    if (eval_cmd->parsed())
      return run_eval(eval_checkpoint, eval_data_dir, eval_threshold, eval_out);
    if (sweep_cmd->parsed())
      return run_sweep(sweep_flags, sweep_keeps, sweep_drop_seed, sweep_jobs);
  } catch (const usage_error& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const numeric_error& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 3;
  } catch (const data_error& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

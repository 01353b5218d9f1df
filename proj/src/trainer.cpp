#include "calnr/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "calnr/common.hpp"
#include "calnr/discovery.hpp"
#include "calnr/grad_eval.hpp"
#include "calnr/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset formats are little-endian");

namespace calnr {

void TrainConfig::validate() const {
  if (epochs < 1) throw usage_error("config: epochs must be >= 1");
  if (batch_size < 1) throw usage_error("config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw usage_error("config: lr must be > 0");
  if (lr_decay_every < 1)
    throw usage_error("config: lr_decay_every must be >= 1");
  if (!(lr_decay_divisor > 0.0))
    throw usage_error("config: lr_decay_divisor must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw usage_error("config: adam momentums must be in [0, 1)");
  if (weight_decay < 0.0)
    throw usage_error("config: weight_decay must be >= 0");
  if (!(adam_eps > 0.0)) throw usage_error("config: adam_eps must be > 0");
  if (alpha < 0.0) throw usage_error("config: alpha must be >= 0");
  if (theta.warmup_epochs < 0 || !(theta.step > 0.0) ||
      theta.floor > theta.start)
    throw usage_error("config: invalid theta schedule");
  if (queue_min < 1) throw usage_error("config: queue_min must be >= 1");
  if (embed_dim < 1 || hidden_dim < 1)
    throw usage_error("config: model widths must be >= 1");
  if (!(score_clamp_eps > 0.0) || score_clamp_eps >= 0.5)
    throw usage_error("config: score_clamp_eps must be in (0, 0.5)");
  if (!(eval_threshold > 0.0) || !(eval_threshold < 1.0))
    throw usage_error("config: eval_threshold must be in (0, 1)");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

std::string encode_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "epochs=" << c.epochs << "\n";
  out << "batch_size=" << c.batch_size << "\n";
  out << "lr=" << fmt(c.lr) << "\n";
  out << "lr_decay_every=" << c.lr_decay_every << "\n";
  out << "lr_decay_divisor=" << fmt(c.lr_decay_divisor) << "\n";
  out << "beta1=" << fmt(c.beta1) << "\n";
  out << "beta2=" << fmt(c.beta2) << "\n";
  out << "weight_decay=" << fmt(c.weight_decay) << "\n";
  out << "adam_eps=" << fmt(c.adam_eps) << "\n";
  out << "alpha=" << fmt(c.alpha) << "\n";
  out << "theta_warmup_epochs=" << c.theta.warmup_epochs << "\n";
  out << "theta_start=" << fmt(c.theta.start) << "\n";
  out << "theta_step=" << fmt(c.theta.step) << "\n";
  out << "theta_floor=" << fmt(c.theta.floor) << "\n";
  out << "queue_capacity=" << c.queue_capacity << "\n";
  out << "queue_min=" << c.queue_min << "\n";
  out << "rejection_mode="
      << (c.rejection_mode == RejectionMode::corrected ? "corrected"
                                                       : "literal")
      << "\n";
  out << "enable_cald=" << (c.enable_cald ? "true" : "false") << "\n";
  out << "enable_canr=" << (c.enable_canr ? "true" : "false") << "\n";
  out << "enable_catu=" << (c.enable_catu ? "true" : "false") << "\n";
  out << "enable_csl=" << (c.enable_csl ? "true" : "false") << "\n";
  out << "fixed_theta_pos=" << fmt(c.fixed_theta_pos) << "\n";
  out << "fixed_theta_neg=" << fmt(c.fixed_theta_neg) << "\n";
  out << "csl_use_pseudo=" << (c.csl_use_pseudo ? "true" : "false") << "\n";
  out << "seed=" << c.seed << "\n";
  out << "embed_dim=" << c.embed_dim << "\n";
  out << "hidden_dim=" << c.hidden_dim << "\n";
  out << "mode=" << (c.mode == CsslMode::attention ? "attention" : "projection")
      << "\n";
  out << "score_clamp_eps=" << fmt(c.score_clamp_eps) << "\n";
  out << "parallel=" << (c.parallel ? "true" : "false") << "\n";
  out << "eval_threshold=" << fmt(c.eval_threshold) << "\n";
  return out.str();
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw data_error("config: bad boolean for " + key + ": '" + v + "'");
}

} // namespace

TrainConfig decode_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw data_error("config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "epochs") c.epochs = std::stoi(value);
      else if (key == "batch_size") c.batch_size = std::stoull(value);
      else if (key == "lr") c.lr = std::stod(value);
      else if (key == "lr_decay_every") c.lr_decay_every = std::stoi(value);
      else if (key == "lr_decay_divisor") c.lr_decay_divisor = std::stod(value);
      else if (key == "beta1") c.beta1 = std::stod(value);
      else if (key == "beta2") c.beta2 = std::stod(value);
      else if (key == "weight_decay") c.weight_decay = std::stod(value);
      else if (key == "adam_eps") c.adam_eps = std::stod(value);
      else if (key == "alpha") c.alpha = std::stod(value);
      else if (key == "theta_warmup_epochs") c.theta.warmup_epochs = std::stoi(value);
      else if (key == "theta_start") c.theta.start = std::stod(value);
      else if (key == "theta_step") c.theta.step = std::stod(value);
      else if (key == "theta_floor") c.theta.floor = std::stod(value);
      else if (key == "queue_capacity") c.queue_capacity = std::stoull(value);
      else if (key == "queue_min") c.queue_min = std::stoull(value);
      else if (key == "rejection_mode")
        c.rejection_mode = value == "literal" ? RejectionMode::literal
                                              : RejectionMode::corrected;
      else if (key == "enable_cald") c.enable_cald = parse_bool(value, key);
      else if (key == "enable_canr") c.enable_canr = parse_bool(value, key);
      else if (key == "enable_catu") c.enable_catu = parse_bool(value, key);
      else if (key == "enable_csl") c.enable_csl = parse_bool(value, key);
      else if (key == "fixed_theta_pos") c.fixed_theta_pos = std::stod(value);
      else if (key == "fixed_theta_neg") c.fixed_theta_neg = std::stod(value);
      else if (key == "csl_use_pseudo") c.csl_use_pseudo = parse_bool(value, key);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "embed_dim") c.embed_dim = std::stoull(value);
      else if (key == "hidden_dim") c.hidden_dim = std::stoull(value);
      else if (key == "mode")
        c.mode = value == "projection" ? CsslMode::projection
                                       : CsslMode::attention;
      else if (key == "score_clamp_eps") c.score_clamp_eps = std::stod(value);
      else if (key == "parallel") c.parallel = parse_bool(value, key);
      else if (key == "eval_threshold") c.eval_threshold = std::stod(value);
      else throw data_error("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw data_error("config: bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
      throw data_error("config: value out of range for " + key);
    }
  }
  return c;
}

std::uint64_t config_hash(const TrainConfig& config) {
  // FNV-1a over the canonical text encoding
  const std::string text = encode_config(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

AdamState AdamState::make(const ParamSet& params) {
  AdamState state;
  state.m.reserve(params.entries.size());
  state.v.reserve(params.entries.size());
  for (const auto& entry : params.entries) {
    state.m.push_back(Tensor::zeros(entry.value.shape));
    state.v.push_back(Tensor::zeros(entry.value.shape));
  }
  return state;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps,
               double weight_decay) {
  if (state.m.size() != params.entries.size())
    throw data_error("adam_step: state/parameter mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& entry = params.entries[i];
    const Tensor& g_in = grads.entries[i].grad;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const bool decay = entry.weight_decay && weight_decay > 0.0;
    for (std::size_t j = 0; j < entry.value.size(); ++j) {
      double g = g_in.data[j];
      if (decay) g += weight_decay * entry.value.data[j];
      m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * g;
      v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * g * g;
      const double m_hat = m.data[j] / bc1;
      const double v_hat = v.data[j] / bc2;
      entry.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'L', 'N', 'R', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw data_error("checkpoint: truncated file");
  return v;
}

void put_str(std::ostream& out, const std::string& s) {
  put_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  const auto len = get_pod<std::uint64_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw data_error("checkpoint: truncated string");
  return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) put_pod<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor get_tensor(std::istream& in) {
  const auto rank = get_pod<std::uint32_t>(in);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = get_pod<std::uint64_t>(in);
  Tensor t = Tensor::zeros(std::move(shape));
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw data_error("checkpoint: truncated tensor");
  return t;
}

} // namespace

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open checkpoint for writing: " + file.string());
  out.write(kMagic, sizeof(kMagic));
  put_pod<std::uint32_t>(out, kVersion);

  const std::string config_text = encode_config(cp.config);
  put_str(out, config_text);
  put_pod<std::uint64_t>(out, config_hash(cp.config));
  put_pod<std::int32_t>(out, cp.completed_epochs);

  // model dims
  put_pod<std::uint64_t>(out, cp.model.num_categories);
  put_pod<std::uint64_t>(out, cp.model.locations);
  put_pod<std::uint64_t>(out, cp.model.feature_dim);

  // rng section: the derived-stream base seed
  put_pod<std::uint64_t>(out, cp.config.seed);
  put_pod<std::uint64_t>(out, cp.adam.t);

  // named-tensor table: parameters then adam moments
  put_pod<std::uint64_t>(out, cp.params.entries.size());
  for (std::size_t i = 0; i < cp.params.entries.size(); ++i) {
    const auto& entry = cp.params.entries[i];
    put_str(out, entry.name);
    put_pod<std::uint8_t>(out, entry.weight_decay ? 1 : 0);
    put_tensor(out, entry.value);
    put_tensor(out, cp.adam.m[i]);
    put_tensor(out, cp.adam.v[i]);
  }

  // threshold arrays
  const auto& th = cp.thresholds;
  put_pod<std::uint64_t>(out, th.categories.size());
  put_pod<std::uint64_t>(out, th.batch_index);
  put_pod<std::uint64_t>(out, th.batches_per_epoch);
  put_pod<std::int32_t>(out, th.epoch);
  for (const CategoryStats& cs : th.categories) {
    put_pod<double>(out, cs.running_pos_mean);
    put_pod<double>(out, cs.running_neg_mean);
    put_pod<std::uint64_t>(out, cs.running_pos_count);
    put_pod<std::uint64_t>(out, cs.running_neg_count);
    put_pod<double>(out, cs.prev_pos);
    put_pod<double>(out, cs.prev_neg);
    put_pod<std::uint8_t>(out, cs.prev_pos_valid ? 1 : 0);
    put_pod<std::uint8_t>(out, cs.prev_neg_valid ? 1 : 0);
    put_pod<double>(out, cs.theta_pos);
    put_pod<double>(out, cs.theta_neg);
  }

  // queue dump, insertion order
  put_pod<std::uint64_t>(out, cp.queues.num_categories());
  put_pod<std::uint64_t>(out, cp.queues.dim());
  put_pod<std::uint64_t>(out, cp.queues.capacity());
  put_pod<std::uint64_t>(out, cp.queues.min_size());
  for (std::size_t c = 0; c < cp.queues.num_categories(); ++c) {
    const std::size_t count = cp.queues.size(c);
    put_pod<std::uint64_t>(out, count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto entry = cp.queues.entry(c, i);
      out.write(reinterpret_cast<const char*>(entry.data()),
                static_cast<std::streamsize>(entry.size() * sizeof(double)));
    }
  }
  if (!out) throw data_error("checkpoint write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw data_error("checkpoint: bad magic in " + file.string());
  if (get_pod<std::uint32_t>(in) != kVersion)
    throw data_error("checkpoint: unsupported version");

  Checkpoint cp;
  const std::string config_text = get_str(in);
  cp.config = decode_config(config_text);
  const auto stored_hash = get_pod<std::uint64_t>(in);
  if (stored_hash != config_hash(cp.config))
    throw data_error("checkpoint: config hash mismatch");
  cp.completed_epochs = get_pod<std::int32_t>(in);

  cp.model.num_categories = get_pod<std::uint64_t>(in);
  cp.model.locations = get_pod<std::uint64_t>(in);
  cp.model.feature_dim = get_pod<std::uint64_t>(in);
  cp.model.embed_dim = cp.config.embed_dim;
  cp.model.hidden_dim = cp.config.hidden_dim;
  cp.model.mode = cp.config.mode;
  cp.model.score_clamp_eps = cp.config.score_clamp_eps;

  const auto seed = get_pod<std::uint64_t>(in);
  if (seed != cp.config.seed)
    throw data_error("checkpoint: rng seed/config mismatch");
  cp.adam.t = get_pod<std::uint64_t>(in);

  const auto tensor_count = get_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    const std::string name = get_str(in);
    const bool decay = get_pod<std::uint8_t>(in) != 0;
    Tensor value = get_tensor(in);
    cp.params.add(name, std::move(value), decay);
    cp.adam.m.push_back(get_tensor(in));
    cp.adam.v.push_back(get_tensor(in));
  }

  const auto cat_count = get_pod<std::uint64_t>(in);
  cp.thresholds.categories.resize(cat_count);
  cp.thresholds.batch_index = get_pod<std::uint64_t>(in);
  cp.thresholds.batches_per_epoch = get_pod<std::uint64_t>(in);
  cp.thresholds.epoch = get_pod<std::int32_t>(in);
  for (CategoryStats& cs : cp.thresholds.categories) {
    cs.running_pos_mean = get_pod<double>(in);
    cs.running_neg_mean = get_pod<double>(in);
    cs.running_pos_count = get_pod<std::uint64_t>(in);
    cs.running_neg_count = get_pod<std::uint64_t>(in);
    cs.prev_pos = get_pod<double>(in);
    cs.prev_neg = get_pod<double>(in);
    cs.prev_pos_valid = get_pod<std::uint8_t>(in) != 0;
    cs.prev_neg_valid = get_pod<std::uint8_t>(in) != 0;
    cs.theta_pos = get_pod<double>(in);
    cs.theta_neg = get_pod<double>(in);
  }

  const auto qcats = get_pod<std::uint64_t>(in);
  const auto qdim = get_pod<std::uint64_t>(in);
  const auto qcap = get_pod<std::uint64_t>(in);
  const auto qmin = get_pod<std::uint64_t>(in);
  cp.queues = PositiveQueues(qcats, qdim, qcap, qmin);
  std::vector<double> entry(qdim);
  for (std::uint64_t c = 0; c < qcats; ++c) {
    const auto count = get_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
      in.read(reinterpret_cast<char*>(entry.data()),
              static_cast<std::streamsize>(qdim * sizeof(double)));
      if (!in) throw data_error("checkpoint: truncated queue entry");
      cp.queues.push(c, entry);
    }
  }
  return cp;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMetricsHeader =
    "epoch,batch,l_an,l_pseudo,l_weighted,l_csl,total,pseudo_count,"
    "pseudo_precision,reject_rate,mAP,OF1,CF1";

struct CsvLogger {
  std::ofstream metrics;
  std::ofstream thresholds;
  bool active = false;

  void open(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const bool fresh_metrics = !std::filesystem::exists(dir / "metrics.csv") ||
                               std::filesystem::file_size(dir / "metrics.csv") == 0;
    metrics.open(dir / "metrics.csv", std::ios::app);
    if (!metrics) throw data_error("cannot open metrics.csv under " + dir.string());
    if (fresh_metrics) metrics << kMetricsHeader << "\n";
    const bool fresh_thresh =
        !std::filesystem::exists(dir / "thresholds.csv") ||
        std::filesystem::file_size(dir / "thresholds.csv") == 0;
    thresholds.open(dir / "thresholds.csv", std::ios::app);
    if (!thresholds)
      throw data_error("cannot open thresholds.csv under " + dir.string());
    if (fresh_thresh)
      thresholds << "epoch,category,theta_pos,theta_neg,avg_pos,avg_neg\n";
    active = true;
  }
};

EvalReport eval_params(const ModelConfig& model, const ParamSet& params,
                       const Dataset& data, double threshold, bool parallel) {
  if (!data.has_full_labels())
    throw data_error("evaluate: dataset has no full labels");
  const std::size_t n = data.num_samples, c = data.num_categories;
  const std::size_t l = data.locations, d = data.feature_dim;
  Tensor scores = Tensor::zeros({n, c});
  const std::size_t chunk = 256;
  std::vector<double> feats;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t bsz = std::min(chunk, n - start);
    feats.resize(bsz * l * d);
    for (std::size_t i = 0; i < bsz * l * d; ++i)
      feats[i] = static_cast<double>(data.features[start * l * d + i]);
    const SemanticBatch fwd =
        forward(model, params, feats, bsz, nullptr, parallel);
    for (std::size_t i = 0; i < bsz * c; ++i)
      scores.data[start * c + i] = fwd.scores.data[i];
  }
  return f1_report(scores, data.full_labels, threshold);
}

struct EpochAggregates {
  LossBreakdown sum;
  std::size_t batches = 0;
  std::size_t discovered = 0;
  std::size_t discovered_true = 0;
  std::size_t unobserved_positives = 0;
  std::size_t rejected = 0;
  std::size_t considered = 0;

  void add_loss(const LossBreakdown& b) {
    sum.l_full += b.l_full;
    sum.l_an += b.l_an;
    sum.l_pseudo += b.l_pseudo;
    sum.l_weighted += b.l_weighted;
    sum.l_cls += b.l_cls;
    sum.l_csl += b.l_csl;
    sum.total += b.total;
    ++batches;
  }
  LossBreakdown mean() const {
    LossBreakdown m = sum;
    const double inv = batches == 0 ? 0.0 : 1.0 / static_cast<double>(batches);
    m.l_full *= inv;
    m.l_an *= inv;
    m.l_pseudo *= inv;
    m.l_weighted *= inv;
    m.l_cls *= inv;
    m.l_csl *= inv;
    m.total *= inv;
    return m;
  }
};

std::string csv_num(double v) { return fmt(v); }

TrainResult run_loop(Checkpoint cp, const Dataset& train_data,
                     const Dataset* eval_data,
                     const std::filesystem::path* run_dir) {
  const TrainConfig& config = cp.config;
  const ModelConfig& model = cp.model;
  const std::size_t n = train_data.num_samples;
  const std::size_t c = train_data.num_categories;
  const std::size_t l = train_data.locations;
  const std::size_t d = train_data.feature_dim;
  const std::size_t bsz_max = std::min<std::size_t>(config.batch_size, n);
  const bool have_full = train_data.has_full_labels();

  CsvLogger log;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    std::ofstream cfg_out(*run_dir / "config.txt");
    cfg_out << encode_config(config);
    log.open(*run_dir);
  }

  ParamSet grads = cp.params; // same layout; only the grad buffers are used
  grads.zero_grads();

  ForwardCache cache;
  GradBatch gb;
  TrainResult result;
  result.logs.reserve(static_cast<std::size_t>(config.epochs));

  std::vector<std::size_t> order(n);
  const std::vector<double> fixed_pos(c, config.fixed_theta_pos);
  const std::vector<double> fixed_neg(c, config.fixed_theta_neg);

  for (int epoch = cp.completed_epochs + 1; epoch <= config.epochs; ++epoch) {
    const double theta = theta_at_epoch(epoch, config.theta);
    const double lr_epoch =
        config.lr / std::pow(config.lr_decay_divisor,
                             static_cast<double>((epoch - 1) /
                                                 config.lr_decay_every));

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, "shuffle",
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochAggregates agg;
    std::vector<double> last_theta_pos = config.enable_catu
                                             ? cp.thresholds.theta_pos()
                                             : fixed_pos;
    std::vector<double> last_theta_neg = config.enable_catu
                                             ? cp.thresholds.theta_neg()
                                             : fixed_neg;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += bsz_max, ++batch_index) {
      const std::size_t bsz = std::min(bsz_max, n - start);

      gb.batch_size = bsz;
      gb.features.resize(bsz * l * d);
      gb.observed.resize(bsz * c);
      gb.full.resize(have_full ? bsz * c : 0);
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::size_t src = order[start + i];
        const float* f = &train_data.features[src * l * d];
        double* dst = &gb.features[i * l * d];
        for (std::size_t j = 0; j < l * d; ++j) dst[j] = f[j];
        std::memcpy(&gb.observed[i * c], &train_data.partial_labels[src * c], c);
        if (have_full)
          std::memcpy(&gb.full[i * c], &train_data.full_labels[src * c], c);
      }
      const std::span<const std::int8_t> observed{gb.observed};

      SemanticBatch fwd;
      try {
        fwd = forward(model, cp.params, gb.features, bsz, &cache,
                      config.parallel);
      } catch (const numeric_error&) {
        // parameters were not stepped with the bad batch; keep them
        cp.completed_epochs = epoch - 1;
        if (run_dir) save_checkpoint(cp, *run_dir / "checkpoint.bin");
        throw;
      }
      const BatchSimilarities sims =
          batch_similarities(fwd.representations, cp.queues, config.parallel);

      const std::vector<double>& theta_pos_vec =
          config.enable_catu ? cp.thresholds.theta_pos() : fixed_pos;
      const std::vector<double>& theta_neg_vec =
          config.enable_catu ? cp.thresholds.theta_neg() : fixed_neg;

      PseudoLabels pseudo;
      if (config.enable_cald) {
        pseudo = generate_pseudo_labels(observed, bsz, c, sims, theta_pos_vec);
      } else {
        pseudo.labels.assign(gb.observed.begin(), gb.observed.end());
        pseudo.provenance.assign(bsz * c, Provenance::none);
        for (std::size_t i = 0; i < bsz * c; ++i)
          if (gb.observed[i] == 1)
            pseudo.provenance[i] = Provenance::observed;
      }

      SampleWeights weights;
      if (config.enable_canr) {
        Rng reject_rng(mix_seed(config.seed, "reject",
                                static_cast<std::uint64_t>(epoch),
                                batch_index));
        weights = sample_weights(sims, observed, theta_pos_vec, theta_neg_vec,
                                 reject_rng, config.rejection_mode);
      } else {
        weights.lambda.assign(bsz * c, 1.0);
        weights.keep_probability.assign(bsz * c, 1.0);
      }

      gb.pseudo = pseudo.labels;
      gb.lambda = weights.lambda;
      if (config.csl_use_pseudo)
        gb.csl_positive = pseudo.labels;
      else
        gb.csl_positive.assign(gb.observed.begin(), gb.observed.end());
      gb.queues = config.enable_csl ? &cp.queues : nullptr;
      gb.use_csl = config.enable_csl;
      gb.alpha = config.alpha;

      LossBreakdown breakdown;
      try {
        breakdown = evaluate_with_forward(model, cp.params, gb, fwd, cache,
                                          &grads, config.parallel);
      } catch (const numeric_error&) {
        cp.completed_epochs = epoch - 1;
        if (run_dir) save_checkpoint(cp, *run_dir / "checkpoint.bin");
        throw;
      }

      adam_step(cp.params, grads, cp.adam, lr_epoch, config.beta1,
                config.beta2, config.adam_eps, config.weight_decay);

      update_queues(fwd.representations, observed, cp.queues);
      accumulate_stats(cp.thresholds, sims, observed);
      if (config.enable_catu) update_thresholds(cp.thresholds, theta);

      // batch bookkeeping
      std::size_t discovered = 0, discovered_true = 0;
      for (std::size_t i = 0; i < bsz * c; ++i) {
        if (pseudo.provenance[i] == Provenance::discovered) {
          ++discovered;
          if (have_full && gb.full[i] == 1) ++discovered_true;
        }
        if (have_full && gb.full[i] == 1 && gb.observed[i] == 0)
          ++agg.unobserved_positives;
      }
      agg.discovered += discovered;
      agg.discovered_true += discovered_true;
      agg.rejected += weights.rejected;
      agg.considered += weights.considered;
      agg.add_loss(breakdown);

      if (log.active) {
        log.metrics << epoch << ',' << batch_index << ','
                    << csv_num(breakdown.l_an) << ','
                    << csv_num(breakdown.l_pseudo) << ','
                    << csv_num(breakdown.l_weighted) << ','
                    << csv_num(breakdown.l_csl) << ','
                    << csv_num(breakdown.total) << ',' << discovered << ',';
        if (have_full && discovered > 0)
          log.metrics << csv_num(static_cast<double>(discovered_true) /
                                 static_cast<double>(discovered));
        log.metrics << ',' << csv_num(weights.rejection_rate()) << ",,,\n";
      }
    }
    // end-of-epoch thresholds (post-update state of the last batch)
    last_theta_pos = config.enable_catu ? cp.thresholds.theta_pos() : fixed_pos;
    last_theta_neg = config.enable_catu ? cp.thresholds.theta_neg() : fixed_neg;

    // threshold dump before the rollover (blend weight is 1 at b = B)
    if (log.active) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const CategoryStats& cs = cp.thresholds.categories[ci];
        log.thresholds << epoch << ',' << ci << ','
                       << csv_num(last_theta_pos[ci]) << ','
                       << csv_num(last_theta_neg[ci]) << ',';
        if (cs.running_pos_count > 0)
          log.thresholds << csv_num(cs.running_pos_mean);
        log.thresholds << ',';
        if (cs.running_neg_count > 0)
          log.thresholds << csv_num(cs.running_neg_mean);
        log.thresholds << '\n';
      }
    }

    end_epoch(cp.thresholds);
    cp.completed_epochs = epoch;

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr_epoch;
    el.mean_loss = agg.mean();
    el.theta_pos = last_theta_pos;
    el.theta_neg = last_theta_neg;
    el.pseudo_count = agg.discovered;
    if (have_full && agg.discovered > 0)
      el.pseudo_precision = static_cast<double>(agg.discovered_true) /
                            static_cast<double>(agg.discovered);
    if (have_full && agg.unobserved_positives > 0)
      el.pseudo_recall = static_cast<double>(agg.discovered_true) /
                         static_cast<double>(agg.unobserved_positives);
    el.reject_rate = agg.considered == 0
                         ? 0.0
                         : static_cast<double>(agg.rejected) /
                               static_cast<double>(agg.considered);
    if (eval_data)
      el.eval = eval_params(model, cp.params, *eval_data,
                            config.eval_threshold, config.parallel);

    if (log.active) {
      const LossBreakdown mean = el.mean_loss;
      log.metrics << epoch << ",-1," << csv_num(mean.l_an) << ','
                  << csv_num(mean.l_pseudo) << ',' << csv_num(mean.l_weighted)
                  << ',' << csv_num(mean.l_csl) << ',' << csv_num(mean.total)
                  << ',' << el.pseudo_count << ',';
      if (el.pseudo_precision >= 0.0)
        log.metrics << csv_num(el.pseudo_precision);
      log.metrics << ',' << csv_num(el.reject_rate) << ',';
      if (el.eval) {
        log.metrics << csv_num(el.eval->map) << ',' << csv_num(el.eval->of1)
                    << ',' << csv_num(el.eval->cf1);
      } else {
        log.metrics << ",,";
      }
      log.metrics << '\n';
      log.metrics.flush();
      log.thresholds.flush();
    }

    result.logs.push_back(std::move(el));
    if (run_dir) save_checkpoint(cp, *run_dir / "checkpoint.bin");
  }

  result.checkpoint = std::move(cp);
  return result;
}

} // namespace

TrainResult train(const Dataset& train_data, const Dataset* eval_data,
                  const TrainConfig& config,
                  const std::filesystem::path* run_dir) {
  config.validate();
  train_data.validate();
  if (train_data.num_samples == 0)
    throw data_error("train: empty dataset");

  Checkpoint cp;
  cp.config = config;
  cp.model.num_categories = train_data.num_categories;
  cp.model.locations = train_data.locations;
  cp.model.feature_dim = train_data.feature_dim;
  cp.model.embed_dim = config.embed_dim;
  cp.model.hidden_dim = config.hidden_dim;
  cp.model.mode = config.mode;
  cp.model.score_clamp_eps = config.score_clamp_eps;

  cp.params = init_params(cp.model, config.seed);
  cp.adam = AdamState::make(cp.params);

  const std::size_t batches_per_epoch =
      (train_data.num_samples + config.batch_size - 1) / config.batch_size;
  const double initial_theta =
      config.enable_catu ? theta_at_epoch(1, config.theta)
                         : config.fixed_theta_pos;
  cp.thresholds = ThresholdState::make(train_data.num_categories,
                                       batches_per_epoch, initial_theta);
  cp.queues = PositiveQueues(train_data.num_categories,
                             train_data.feature_dim, config.queue_capacity,
                             config.queue_min);
  cp.completed_epochs = 0;
  return run_loop(std::move(cp), train_data, eval_data, run_dir);
}

TrainResult resume(Checkpoint checkpoint, const Dataset& train_data,
                   const Dataset* eval_data,
                   const std::filesystem::path* run_dir) {
  checkpoint.config.validate();
  train_data.validate();
  if (checkpoint.model.num_categories != train_data.num_categories ||
      checkpoint.model.locations != train_data.locations ||
      checkpoint.model.feature_dim != train_data.feature_dim)
    throw data_error("resume: dataset dimensions do not match checkpoint");
  return run_loop(std::move(checkpoint), train_data, eval_data, run_dir);
}

EvalReport evaluate(const Checkpoint& cp, const Dataset& data) {
  data.validate();
  return eval_params(cp.model, cp.params, data, cp.config.eval_threshold,
                     cp.config.parallel);
}

} // namespace calnr

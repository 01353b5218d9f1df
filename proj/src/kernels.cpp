#include <algorithm>
#include <cmath>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/model.hpp"

// Tuned forward/backward kernels. Loops parallelize over samples; every
// per-sample result is written to disjoint storage and parameter-gradient
// contributions are reduced in ascending sample order afterwards, so the
// output is independent of the thread count.

namespace calnr {

namespace {

void ensure_shape(Tensor& t, std::vector<std::size_t> shape) {
  if (t.shape != shape) {
    t.shape = std::move(shape);
    t.data.resize(shape_product(t.shape));
  }
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Shared scratch layout for one sample's parameter-gradient contribution.
struct GradSlab {
  std::vector<double> data;
  // offsets within data
  std::size_t w1 = 0, w2 = 0, v = 0, u = 0, gate = 0, cw = 0, cb = 0;
  std::size_t total = 0;

  void layout(const ModelConfig& cfg) {
    const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
    const std::size_t e = cfg.embed_dim, h = cfg.hidden_dim;
    std::size_t off = 0;
    if (cfg.mode == CsslMode::attention) {
      w1 = off; off += d * h;
      w2 = off; off += e * h;
      v = off; off += h;
    } else {
      gate = off; off += d * e;
    }
    u = off; off += c * e;
    cw = off; off += c * d;
    cb = off; off += c;
    total = off;
    data.assign(total, 0.0);
  }
};

void attention_forward_sample(const ModelConfig& cfg, const double* x,
                              const double* v, const double* loc_hidden_n,
                              const Tensor& embed_hidden, std::size_t n,
                              ForwardCache* cache, Tensor& reps) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations, h = cfg.hidden_dim;
  std::vector<double> energy(l), att(l);
  std::vector<double> tanh_row(h);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* h2 = &embed_hidden.data[ci * h];
    for (std::size_t li = 0; li < l; ++li) {
      const double* h1 = loc_hidden_n + li * h;
      double e_val = 0.0;
      double* tdst = cache ? &cache->tanh_act.data[((n * c + ci) * l + li) * h]
                           : tanh_row.data();
      for (std::size_t hi = 0; hi < h; ++hi) {
        const double t = std::tanh(h1[hi] + h2[hi]);
        tdst[hi] = t;
        e_val += v[hi] * t;
      }
      energy[li] = e_val;
    }
    // softmax over locations, max-shifted
    double emax = energy[0];
    for (std::size_t li = 1; li < l; ++li) emax = std::max(emax, energy[li]);
    double z = 0.0;
    for (std::size_t li = 0; li < l; ++li) {
      att[li] = std::exp(energy[li] - emax);
      z += att[li];
    }
    for (std::size_t li = 0; li < l; ++li) att[li] /= z;
    if (cache)
      for (std::size_t li = 0; li < l; ++li)
        cache->attention(n, ci, li) = att[li];
    double* f = &reps.data[(n * c + ci) * d];
    for (std::size_t di = 0; di < d; ++di) f[di] = 0.0;
    for (std::size_t li = 0; li < l; ++li) {
      const double a = att[li];
      const double* xl = x + li * d;
      for (std::size_t di = 0; di < d; ++di) f[di] += a * xl[di];
    }
  }
}

void projection_forward_sample(const ModelConfig& cfg, const double* x,
                               const Tensor& gates, std::size_t n,
                               ForwardCache* cache, Tensor& reps) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations;
  std::vector<double> mean(d, 0.0);
  for (std::size_t li = 0; li < l; ++li) {
    const double* xl = x + li * d;
    for (std::size_t di = 0; di < d; ++di) mean[di] += xl[di];
  }
  for (std::size_t di = 0; di < d; ++di)
    mean[di] /= static_cast<double>(l);
  if (cache)
    for (std::size_t di = 0; di < d; ++di) cache->mean_pool(n, di) = mean[di];
  for (std::size_t ci = 0; ci < c; ++ci) {
    double* f = &reps.data[(n * c + ci) * d];
    const double* g = &gates.data[ci * d];
    for (std::size_t di = 0; di < d; ++di) f[di] = mean[di] * g[di];
  }
}

// gates[c][d] = sigmoid(sum_e gate_proj[d][e] * u[c][e])
void compute_gates(const ModelConfig& cfg, const ParamSet& params,
                   Tensor& gates) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t e = cfg.embed_dim;
  const Tensor& u = params.value("category_embeddings");
  const Tensor& proj = params.value("gate_proj");
  ensure_shape(gates, {c, d});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t di = 0; di < d; ++di) {
      double z = 0.0;
      for (std::size_t ei = 0; ei < e; ++ei)
        z += proj(di, ei) * u(ci, ei);
      gates(ci, di) = sigmoid(z);
    }
}

} // namespace

Tensor compute_representations(const ModelConfig& cfg, const ParamSet& params,
                               std::span<const double> features,
                               std::size_t batch, ForwardCache* cache,
                               bool parallel) {
  cfg.validate();
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations, h = cfg.hidden_dim;
  const std::size_t e = cfg.embed_dim;
  if (features.size() != batch * l * d)
    throw data_error("compute_representations: feature span size mismatch");

  Tensor reps = Tensor::zeros({batch, c, d});

  if (cfg.mode == CsslMode::attention) {
    const Tensor& w1 = params.value("attn_w1");
    const Tensor& w2 = params.value("attn_w2");
    const Tensor& v = params.value("attn_v");
    const Tensor& u = params.value("category_embeddings");

    // Shared precomputes: W1^T x_l per (sample, location), W2^T u_c per
    // category.
    Tensor loc_hidden = Tensor::zeros({batch, l, h});
    Tensor embed_hidden = Tensor::zeros({c, h});
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t hi = 0; hi < h; ++hi) {
        double acc = 0.0;
        for (std::size_t ei = 0; ei < e; ++ei)
          acc += u(ci, ei) * w2(ei, hi);
        embed_hidden(ci, hi) = acc;
      }

#pragma omp parallel for if (parallel) schedule(static)
    for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
      const std::size_t n = static_cast<std::size_t>(ni);
      const double* x = features.data() + n * l * d;
      for (std::size_t li = 0; li < l; ++li)
        for (std::size_t hi = 0; hi < h; ++hi) {
          double acc = 0.0;
          for (std::size_t di = 0; di < d; ++di)
            acc += x[li * d + di] * w1(di, hi);
          loc_hidden(n, li, hi) = acc;
        }
    }

    if (cache) {
      ensure_shape(cache->tanh_act, {batch, c, l, h});
      ensure_shape(cache->attention, {batch, c, l});
    }

#pragma omp parallel for if (parallel) schedule(static)
    for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
      const std::size_t n = static_cast<std::size_t>(ni);
      const double* x = features.data() + n * l * d;
      attention_forward_sample(cfg, x, v.data.data(),
                               loc_hidden.data.data() + n * l * h,
                               embed_hidden, n, cache, reps);
    }

    if (cache) {
      std::swap(cache->loc_hidden, loc_hidden);
      std::swap(cache->embed_hidden, embed_hidden);
    }
  } else {
    Tensor gates;
    compute_gates(cfg, params, gates);
    if (cache) ensure_shape(cache->mean_pool, {batch, d});
#pragma omp parallel for if (parallel) schedule(static)
    for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
      const std::size_t n = static_cast<std::size_t>(ni);
      const double* x = features.data() + n * l * d;
      projection_forward_sample(cfg, x, gates, n, cache, reps);
    }
    if (cache) std::swap(cache->gates, gates);
  }

  if (!reps.all_finite())
    throw numeric_error("compute_representations: non-finite output");
  return reps;
}

Tensor predict_scores(const ModelConfig& cfg, const ParamSet& params,
                      const Tensor& representations, Tensor* logits,
                      Tensor* raw_sigmoid) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t batch = representations.dim(0);
  if (representations.shape != std::vector<std::size_t>{batch, c, d})
    throw data_error("predict_scores: representation shape mismatch");
  const Tensor& cw = params.value("cls_weight");
  const Tensor& cb = params.value("cls_bias");
  const double eps = cfg.score_clamp_eps;

  Tensor scores = Tensor::zeros({batch, c});
  if (logits) ensure_shape(*logits, {batch, c});
  if (raw_sigmoid) ensure_shape(*raw_sigmoid, {batch, c});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double z = 0.0;
      const double* f = &representations.data[(n * c + ci) * d];
      for (std::size_t di = 0; di < d; ++di) z += cw(ci, di) * f[di];
      z += cb(ci);
      const double raw = sigmoid(z);
      if (logits) (*logits)(n, ci) = z;
      if (raw_sigmoid) (*raw_sigmoid)(n, ci) = raw;
      scores(n, ci) = std::clamp(raw, eps, 1.0 - eps);
    }
  return scores;
}

SemanticBatch forward(const ModelConfig& cfg, const ParamSet& params,
                      std::span<const double> features, std::size_t batch,
                      ForwardCache* cache, bool parallel) {
  SemanticBatch out;
  out.representations =
      compute_representations(cfg, params, features, batch, cache, parallel);
  out.scores = predict_scores(cfg, params, out.representations,
                              cache ? &cache->logits : nullptr,
                              cache ? &cache->raw_sigmoid : nullptr);
  return out;
}

void backward(const ModelConfig& cfg, const ParamSet& params,
              std::span<const double> features, std::size_t batch,
              const SemanticBatch& fwd, const ForwardCache& cache,
              const Tensor& rep_grad, const Tensor& logit_grad,
              ParamSet& grads, bool parallel) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations, h = cfg.hidden_dim;
  const std::size_t e = cfg.embed_dim;
  if (rep_grad.shape != std::vector<std::size_t>{batch, c, d} ||
      logit_grad.shape != std::vector<std::size_t>{batch, c})
    throw data_error("backward: gradient shape mismatch");
  const Tensor& cw = params.value("cls_weight");
  const Tensor& u = params.value("category_embeddings");

  std::vector<GradSlab> slabs(batch);
  for (auto& s : slabs) s.layout(cfg);

#pragma omp parallel for if (parallel) schedule(static)
  for (long long ni = 0; ni < static_cast<long long>(batch); ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    GradSlab& slab = slabs[n];
    const double* x = features.data() + n * l * d;

    std::vector<double> gf(d);
    if (cfg.mode == CsslMode::attention) {
      const Tensor& w2 = params.value("attn_w2");
      const double* v = params.value("attn_v").data.data();
      std::vector<double> ga(l), ge(l), gs(h), gs_loc_sum(l * h);
      std::fill(gs_loc_sum.begin(), gs_loc_sum.end(), 0.0);
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double gz = logit_grad(n, ci);
        const double* f = &fwd.representations.data[(n * c + ci) * d];
        // classifier head
        for (std::size_t di = 0; di < d; ++di) {
          slab.data[slab.cw + ci * d + di] += gz * f[di];
          gf[di] = rep_grad(n, ci, di) + gz * cw(ci, di);
        }
        slab.data[slab.cb + ci] += gz;
        // f = sum_l a_l x_l
        for (std::size_t li = 0; li < l; ++li) {
          double acc = 0.0;
          const double* xl = x + li * d;
          for (std::size_t di = 0; di < d; ++di) acc += gf[di] * xl[di];
          ga[li] = acc;
        }
        // softmax backward
        double dot = 0.0;
        for (std::size_t li = 0; li < l; ++li)
          dot += cache.attention(n, ci, li) * ga[li];
        for (std::size_t li = 0; li < l; ++li)
          ge[li] = cache.attention(n, ci, li) * (ga[li] - dot);
        // through e_l = v . tanh(h1_l + h2_c)
        std::fill(gs.begin(), gs.end(), 0.0);
        for (std::size_t li = 0; li < l; ++li) {
          const double* t = &cache.tanh_act.data[((n * c + ci) * l + li) * h];
          const double g_e = ge[li];
          double* gsl = &gs_loc_sum[li * h];
          for (std::size_t hi = 0; hi < h; ++hi) {
            slab.data[slab.v + hi] += g_e * t[hi];
            const double g_pre = g_e * v[hi] * (1.0 - t[hi] * t[hi]);
            gsl[hi] += g_pre; // summed over categories for the W1 path
            gs[hi] += g_pre;  // summed over locations for the W2/U path
          }
        }
        // W2 and U factor through sum_l g_pre
        for (std::size_t ei = 0; ei < e; ++ei) {
          const double uv = u(ci, ei);
          double gu = 0.0;
          for (std::size_t hi = 0; hi < h; ++hi) {
            slab.data[slab.w2 + ei * h + hi] += uv * gs[hi];
            gu += w2(ei, hi) * gs[hi];
          }
          slab.data[slab.u + ci * e + ei] += gu;
        }
      }
      // W1 factors through sum_c g_pre per location
      for (std::size_t li = 0; li < l; ++li) {
        const double* xl = x + li * d;
        const double* gsl = &gs_loc_sum[li * h];
        for (std::size_t di = 0; di < d; ++di) {
          const double xv = xl[di];
          double* dst = &slab.data[slab.w1 + di * h];
          for (std::size_t hi = 0; hi < h; ++hi) dst[hi] += xv * gsl[hi];
        }
      }
    } else {
      const Tensor& proj = params.value("gate_proj");
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double gz = logit_grad(n, ci);
        const double* f = &fwd.representations.data[(n * c + ci) * d];
        for (std::size_t di = 0; di < d; ++di) {
          slab.data[slab.cw + ci * d + di] += gz * f[di];
          gf[di] = rep_grad(n, ci, di) + gz * cw(ci, di);
        }
        slab.data[slab.cb + ci] += gz;
        // f = mean .* gate_c ; gate_c = sigmoid(proj u_c)
        for (std::size_t di = 0; di < d; ++di) {
          const double g_gate = gf[di] * cache.mean_pool(n, di);
          const double gate = cache.gates(ci, di);
          const double g_z = g_gate * gate * (1.0 - gate);
          for (std::size_t ei = 0; ei < e; ++ei) {
            slab.data[slab.gate + di * e + ei] += g_z * u(ci, ei);
            slab.data[slab.u + ci * e + ei] += g_z * proj(di, ei);
          }
        }
      }
    }
  }

  // Ordered reduction keeps the result thread-count independent.
  Tensor& g_u = grads.grad("category_embeddings");
  Tensor& g_cw = grads.grad("cls_weight");
  Tensor& g_cb = grads.grad("cls_bias");
  for (std::size_t n = 0; n < batch; ++n) {
    const GradSlab& slab = slabs[n];
    if (cfg.mode == CsslMode::attention) {
      Tensor& g_w1 = grads.grad("attn_w1");
      Tensor& g_w2 = grads.grad("attn_w2");
      Tensor& g_v = grads.grad("attn_v");
      for (std::size_t i = 0; i < d * h; ++i)
        g_w1.data[i] += slab.data[slab.w1 + i];
      for (std::size_t i = 0; i < e * h; ++i)
        g_w2.data[i] += slab.data[slab.w2 + i];
      for (std::size_t i = 0; i < h; ++i)
        g_v.data[i] += slab.data[slab.v + i];
    } else {
      Tensor& g_gate = grads.grad("gate_proj");
      for (std::size_t i = 0; i < d * e; ++i)
        g_gate.data[i] += slab.data[slab.gate + i];
    }
    for (std::size_t i = 0; i < c * e; ++i)
      g_u.data[i] += slab.data[slab.u + i];
    for (std::size_t i = 0; i < c * d; ++i)
      g_cw.data[i] += slab.data[slab.cw + i];
    for (std::size_t i = 0; i < c; ++i)
      g_cb.data[i] += slab.data[slab.cb + i];
  }
}

} // namespace calnr

#include <algorithm>
#include <cmath>
#include <vector>

#include "calnr/common.hpp"
#include "calnr/model.hpp"

// Plain nested-loop implementations of the model math, one term at a time,
// with no shared precomputes and no parallelism. Tests hold the tuned
// kernels against these.

namespace calnr {
namespace reference {

namespace {
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
} // namespace

Tensor compute_representations(const ModelConfig& cfg, const ParamSet& params,
                               std::span<const double> features,
                               std::size_t batch) {
  cfg.validate();
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations, h = cfg.hidden_dim;
  const std::size_t e = cfg.embed_dim;
  if (features.size() != batch * l * d)
    throw data_error("reference representations: feature span size mismatch");

  Tensor reps = Tensor::zeros({batch, c, d});
  const Tensor& u = params.value("category_embeddings");

  if (cfg.mode == CsslMode::attention) {
    const Tensor& w1 = params.value("attn_w1");
    const Tensor& w2 = params.value("attn_w2");
    const Tensor& v = params.value("attn_v");
    std::vector<double> energy(l), att(l);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* x = features.data() + n * l * d;
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t li = 0; li < l; ++li) {
          double e_val = 0.0;
          for (std::size_t hi = 0; hi < h; ++hi) {
            double pre1 = 0.0;
            for (std::size_t di = 0; di < d; ++di)
              pre1 += x[li * d + di] * w1(di, hi);
            double pre2 = 0.0;
            for (std::size_t ei = 0; ei < e; ++ei)
              pre2 += u(ci, ei) * w2(ei, hi);
            e_val += v(hi) * std::tanh(pre1 + pre2);
          }
          energy[li] = e_val;
        }
        double emax = energy[0];
        for (std::size_t li = 1; li < l; ++li)
          emax = std::max(emax, energy[li]);
        double z = 0.0;
        for (std::size_t li = 0; li < l; ++li) {
          att[li] = std::exp(energy[li] - emax);
          z += att[li];
        }
        for (std::size_t li = 0; li < l; ++li) att[li] /= z;
        for (std::size_t di = 0; di < d; ++di) {
          double f = 0.0;
          for (std::size_t li = 0; li < l; ++li)
            f += att[li] * x[li * d + di];
          reps(n, ci, di) = f;
        }
      }
    }
  } else {
    const Tensor& proj = params.value("gate_proj");
    for (std::size_t n = 0; n < batch; ++n) {
      const double* x = features.data() + n * l * d;
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t di = 0; di < d; ++di) {
          double mean = 0.0;
          for (std::size_t li = 0; li < l; ++li) mean += x[li * d + di];
          mean /= static_cast<double>(l);
          double gz = 0.0;
          for (std::size_t ei = 0; ei < e; ++ei)
            gz += proj(di, ei) * u(ci, ei);
          reps(n, ci, di) = mean * sigmoid(gz);
        }
    }
  }
  return reps;
}

SemanticBatch forward(const ModelConfig& cfg, const ParamSet& params,
                      std::span<const double> features, std::size_t batch) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  SemanticBatch out;
  out.representations = compute_representations(cfg, params, features, batch);
  out.scores = Tensor::zeros({batch, c});
  const Tensor& cw = params.value("cls_weight");
  const Tensor& cb = params.value("cls_bias");
  const double eps = cfg.score_clamp_eps;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double z = 0.0;
      for (std::size_t di = 0; di < d; ++di)
        z += cw(ci, di) * out.representations(n, ci, di);
      z += cb(ci);
      out.scores(n, ci) = std::clamp(sigmoid(z), eps, 1.0 - eps);
    }
  return out;
}

void backward(const ModelConfig& cfg, const ParamSet& params,
              std::span<const double> features, std::size_t batch,
              const SemanticBatch& fwd, const Tensor& rep_grad,
              const Tensor& logit_grad, ParamSet& grads) {
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t l = cfg.locations, h = cfg.hidden_dim;
  const std::size_t e = cfg.embed_dim;
  const Tensor& u = params.value("category_embeddings");
  const Tensor& cw = params.value("cls_weight");

  Tensor& g_u = grads.grad("category_embeddings");
  Tensor& g_cw = grads.grad("cls_weight");
  Tensor& g_cb = grads.grad("cls_bias");

  std::vector<double> gf(d), energy(l), att(l), ga(l), ge(l);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = features.data() + n * l * d;
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double gz = logit_grad(n, ci);
      for (std::size_t di = 0; di < d; ++di) {
        g_cw(ci, di) += gz * fwd.representations(n, ci, di);
        gf[di] = rep_grad(n, ci, di) + gz * cw(ci, di);
      }
      g_cb(ci) += gz;

      if (cfg.mode == CsslMode::attention) {
        const Tensor& w1 = params.value("attn_w1");
        const Tensor& w2 = params.value("attn_w2");
        const Tensor& v = params.value("attn_v");
        Tensor& g_w1 = grads.grad("attn_w1");
        Tensor& g_w2 = grads.grad("attn_w2");
        Tensor& g_v = grads.grad("attn_v");
        // recompute the attention forward for this (n, c)
        for (std::size_t li = 0; li < l; ++li) {
          double e_val = 0.0;
          for (std::size_t hi = 0; hi < h; ++hi) {
            double pre1 = 0.0;
            for (std::size_t di = 0; di < d; ++di)
              pre1 += x[li * d + di] * w1(di, hi);
            double pre2 = 0.0;
            for (std::size_t ei = 0; ei < e; ++ei)
              pre2 += u(ci, ei) * w2(ei, hi);
            e_val += v(hi) * std::tanh(pre1 + pre2);
          }
          energy[li] = e_val;
        }
        double emax = energy[0];
        for (std::size_t li = 1; li < l; ++li)
          emax = std::max(emax, energy[li]);
        double z = 0.0;
        for (std::size_t li = 0; li < l; ++li) {
          att[li] = std::exp(energy[li] - emax);
          z += att[li];
        }
        for (std::size_t li = 0; li < l; ++li) att[li] /= z;

        for (std::size_t li = 0; li < l; ++li) {
          double acc = 0.0;
          for (std::size_t di = 0; di < d; ++di)
            acc += gf[di] * x[li * d + di];
          ga[li] = acc;
        }
        double dot = 0.0;
        for (std::size_t li = 0; li < l; ++li) dot += att[li] * ga[li];
        for (std::size_t li = 0; li < l; ++li)
          ge[li] = att[li] * (ga[li] - dot);

        for (std::size_t li = 0; li < l; ++li) {
          for (std::size_t hi = 0; hi < h; ++hi) {
            double pre1 = 0.0;
            for (std::size_t di = 0; di < d; ++di)
              pre1 += x[li * d + di] * w1(di, hi);
            double pre2 = 0.0;
            for (std::size_t ei = 0; ei < e; ++ei)
              pre2 += u(ci, ei) * w2(ei, hi);
            const double t = std::tanh(pre1 + pre2);
            g_v(hi) += ge[li] * t;
            const double g_pre = ge[li] * v(hi) * (1.0 - t * t);
            for (std::size_t di = 0; di < d; ++di)
              g_w1(di, hi) += x[li * d + di] * g_pre;
            for (std::size_t ei = 0; ei < e; ++ei) {
              g_w2(ei, hi) += u(ci, ei) * g_pre;
              g_u(ci, ei) += w2(ei, hi) * g_pre;
            }
          }
        }
      } else {
        const Tensor& proj = params.value("gate_proj");
        Tensor& g_gate = grads.grad("gate_proj");
        for (std::size_t di = 0; di < d; ++di) {
          double mean = 0.0;
          for (std::size_t li = 0; li < l; ++li) mean += x[li * d + di];
          mean /= static_cast<double>(l);
          double gz_gate = 0.0;
          for (std::size_t ei = 0; ei < e; ++ei)
            gz_gate += proj(di, ei) * u(ci, ei);
          const double gate = sigmoid(gz_gate);
          const double g_pre = gf[di] * mean * gate * (1.0 - gate);
          for (std::size_t ei = 0; ei < e; ++ei) {
            g_gate(di, ei) += g_pre * u(ci, ei);
            g_u(ci, ei) += g_pre * proj(di, ei);
          }
        }
      }
    }
  }
}

} // namespace reference
} // namespace calnr

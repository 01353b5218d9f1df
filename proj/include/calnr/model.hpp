#pragma once

#include <cstdint>
#include <span>

#include "calnr/tensor.hpp"

namespace calnr {

enum class CsslMode { attention, projection };

struct ModelConfig {
  std::size_t num_categories = 0; // C
  std::size_t locations = 0;      // L
  std::size_t feature_dim = 0;    // D
  std::size_t embed_dim = 32;     // E, category embedding width
  std::size_t hidden_dim = 64;    // H, attention compatibility width
  CsslMode mode = CsslMode::attention;
  double score_clamp_eps = 1e-7; // keeps log terms finite

  void validate() const;
};

// Parameter names:
//   category_embeddings  C x E   (unit-norm rows at init, no weight decay)
//   attn_w1              D x H   attention mode
//   attn_w2              E x H   attention mode
//   attn_v               H       attention mode (compatibility vector)
//   gate_proj            D x E   projection mode (per-category feature gate)
//   cls_weight           C x D
//   cls_bias             C       (zero at init, no weight decay)
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// Intermediate activations kept for the backward pass. Buffers are resized
// in place, so a cache instance can be reused across batches.
struct ForwardCache {
  Tensor loc_hidden;   // B x L x H : W1^T x_l
  Tensor embed_hidden; // C x H     : W2^T u_c
  Tensor tanh_act;     // B x C x L x H
  Tensor attention;    // B x C x L
  Tensor mean_pool;    // B x D       (projection mode)
  Tensor gates;        // C x D       (projection mode)
  Tensor logits;       // B x C
  Tensor raw_sigmoid;  // B x C, sigmoid before clamping
};

struct SemanticBatch {
  Tensor representations; // B x C x D
  Tensor scores;          // B x C, clamped to [eps, 1-eps]
};

// Category-specific representations for one batch (attention mode does
// semantic decoupling, projection mode a gated mean-pool). `parallel`
// selects the OpenMP path; outputs are identical either way.
Tensor compute_representations(const ModelConfig& cfg, const ParamSet& params,
                               std::span<const double> features,
                               std::size_t batch, ForwardCache* cache,
                               bool parallel);

// p = sigmoid(w_c . f_c + b_c) clamped to [eps, 1-eps] per (sample, category).
Tensor predict_scores(const ModelConfig& cfg, const ParamSet& params,
                      const Tensor& representations, Tensor* logits,
                      Tensor* raw_sigmoid);

// Both steps.
SemanticBatch forward(const ModelConfig& cfg, const ParamSet& params,
                      std::span<const double> features, std::size_t batch,
                      ForwardCache* cache, bool parallel);

// Accumulates parameter gradients given d(loss)/d(representations) and
// d(loss)/d(logits). Per-sample contributions are reduced in ascending
// sample order, so results do not depend on the thread count.
void backward(const ModelConfig& cfg, const ParamSet& params,
              std::span<const double> features, std::size_t batch,
              const SemanticBatch& fwd, const ForwardCache& cache,
              const Tensor& rep_grad, const Tensor& logit_grad,
              ParamSet& grads, bool parallel);

// Naive single-threaded implementations of the same contracts, kept as the
// readable statement of the math and as the oracle for the tuned kernels.
namespace reference {

Tensor compute_representations(const ModelConfig& cfg, const ParamSet& params,
                               std::span<const double> features,
                               std::size_t batch);

SemanticBatch forward(const ModelConfig& cfg, const ParamSet& params,
                      std::span<const double> features, std::size_t batch);

void backward(const ModelConfig& cfg, const ParamSet& params,
              std::span<const double> features, std::size_t batch,
              const SemanticBatch& fwd, const Tensor& rep_grad,
              const Tensor& logit_grad, ParamSet& grads);

} // namespace reference

} // namespace calnr

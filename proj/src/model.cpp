#include "calnr/model.hpp"

#include <cmath>

#include "calnr/common.hpp"
#include "calnr/rng.hpp"

namespace calnr {

void ModelConfig::validate() const {
  if (num_categories == 0 || locations == 0 || feature_dim == 0 ||
      embed_dim == 0 || hidden_dim == 0)
    throw usage_error("model config: all dimensions must be >= 1");
  if (!(score_clamp_eps > 0.0) || score_clamp_eps >= 0.5)
    throw usage_error("model config: score_clamp_eps must be in (0, 0.5)");
}

namespace {

Tensor uniform_fan_in(std::vector<std::size_t> shape, std::size_t fan_in,
                      Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

} // namespace

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t c = cfg.num_categories, d = cfg.feature_dim;
  const std::size_t e = cfg.embed_dim, h = cfg.hidden_dim;

  ParamSet params;
  auto rng_for = [&](std::string_view name) {
    return Rng(mix_seed(seed, name));
  };

  {
    // Unit-norm Gaussian rows.
    Rng rng = rng_for("category_embeddings");
    Tensor u = Tensor::zeros({c, e});
    for (std::size_t i = 0; i < c; ++i) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        const double v = rng.normal();
        u(i, j) = v;
        norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      for (std::size_t j = 0; j < e; ++j) u(i, j) /= norm;
    }
    params.add("category_embeddings", std::move(u), /*weight_decay=*/false);
  }

  if (cfg.mode == CsslMode::attention) {
    Rng r1 = rng_for("attn_w1");
    params.add("attn_w1", uniform_fan_in({d, h}, d, r1), true);
    Rng r2 = rng_for("attn_w2");
    params.add("attn_w2", uniform_fan_in({e, h}, e, r2), true);
    Rng rv = rng_for("attn_v");
    params.add("attn_v", uniform_fan_in({h}, h, rv), true);
  } else {
    Rng rg = rng_for("gate_proj");
    params.add("gate_proj", uniform_fan_in({d, e}, e, rg), true);
  }

  Rng rw = rng_for("cls_weight");
  params.add("cls_weight", uniform_fan_in({c, d}, d, rw), true);
  params.add("cls_bias", Tensor::zeros({c}), false);
  return params;
}

} // namespace calnr

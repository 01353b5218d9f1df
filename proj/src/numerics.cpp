#include "calnr/numerics.hpp"

#include <atomic>
#include <cmath>

#include "calnr/common.hpp"

namespace calnr {

namespace {
std::atomic<std::uint64_t> g_zero_norm_count{0};
} // namespace

CosineParts cosine_parts(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw data_error("cosine: vectors must have equal nonzero length");
  CosineParts parts;
  for (std::size_t i = 0; i < a.size(); ++i) {
    parts.dot += a[i] * b[i];
    parts.norm2_a += a[i] * a[i];
    parts.norm2_b += b[i] * b[i];
  }
  if (parts.norm2_a == 0.0 || parts.norm2_b == 0.0) {
    g_zero_norm_count.fetch_add(1, std::memory_order_relaxed);
    parts.degenerate = true;
    parts.value = 0.0;
    return parts;
  }
  // sqrt of the product keeps the expression symmetric in (a, b).
  parts.value = parts.dot / std::sqrt(parts.norm2_a * parts.norm2_b);
  return parts;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double s = cosine_parts(a, b).value;
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  return s;
}

std::uint64_t cosine_zero_norm_count() {
  return g_zero_norm_count.load(std::memory_order_relaxed);
}

void reset_cosine_zero_norm_count() {
  g_zero_norm_count.store(0, std::memory_order_relaxed);
}

ParamSet finite_difference(const std::function<double(const ParamSet&)>& f,
                           const ParamSet& params, double h) {
  if (!(h > 0.0))
    throw usage_error("finite_difference: step h must be > 0");
  ParamSet work = params;
  for (auto& entry : work.entries) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value.data[i];
      entry.value.data[i] = saved + h;
      const double plus = f(work);
      entry.value.data[i] = saved - h;
      const double minus = f(work);
      entry.value.data[i] = saved;
      entry.grad.data[i] = (plus - minus) / (2.0 * h);
    }
  }
  return work;
}

} // namespace calnr

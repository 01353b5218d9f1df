#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "calnr/tensor.hpp"

namespace calnr {

// Cosine similarity a.b / (|a||b|), in [-1, 1].
// A zero-norm input yields 0 (maximally uninformative) and increments the
// warning counter instead of failing; early random parameters can produce
// near-zero representations.
double cosine(std::span<const double> a, std::span<const double> b);

// Cosine value plus the quantities its analytic gradient needs. The value
// here is unclamped; `degenerate` marks zero-norm inputs (value forced to 0,
// warning counter bumped).
struct CosineParts {
  double value = 0.0;
  double dot = 0.0;
  double norm2_a = 0.0;
  double norm2_b = 0.0;
  bool degenerate = false;
};
CosineParts cosine_parts(std::span<const double> a, std::span<const double> b);

std::uint64_t cosine_zero_norm_count();
void reset_cosine_zero_norm_count();

// Central finite differences (f(x+h) - f(x-h)) / 2h for every scalar in
// params. Returns a copy of params whose grad buffers hold the estimates.
// f must be a pure function of the parameter values.
ParamSet finite_difference(const std::function<double(const ParamSet&)>& f,
                           const ParamSet& params, double h = 1e-5);

} // namespace calnr

#include "calnr/tensor.hpp"

#include <cmath>

#include "calnr/common.hpp"

namespace calnr {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.data.assign(shape_product(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_product(shape) != values.size())
    throw data_error("Tensor::from: shape product " +
                     std::to_string(shape_product(shape)) +
                     " != value count " + std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

ParamSet::Entry& ParamSet::add(std::string name, Tensor value,
                               bool weight_decay) {
  if (contains(name))
    throw data_error("ParamSet: duplicate parameter name '" + name + "'");
  Entry e;
  e.name = std::move(name);
  e.grad = Tensor::zeros(value.shape);
  e.value = std::move(value);
  e.weight_decay = weight_decay;
  entries.push_back(std::move(e));
  return entries.back();
}

ParamSet::Entry& ParamSet::at(std::string_view name) {
  for (Entry& e : entries)
    if (e.name == name) return e;
  throw data_error("ParamSet: no parameter named '" + std::string(name) + "'");
}

const ParamSet::Entry& ParamSet::at(std::string_view name) const {
  for (const Entry& e : entries)
    if (e.name == name) return e;
  throw data_error("ParamSet: no parameter named '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  for (const Entry& e : entries)
    if (e.name == name) return true;
  return false;
}

void ParamSet::zero_grads() {
  for (Entry& e : entries) e.grad.fill(0.0);
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries) n += e.value.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const Entry& e : entries)
    if (!e.value.all_finite()) return false;
  return true;
}

} // namespace calnr

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace calnr {

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Dense row-major tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Named parameter collection with stable iteration order and a gradient
// buffer of matching shape per entry.
struct ParamSet {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool weight_decay = false; // the optimizer decays only flagged entries
  };

  std::vector<Entry> entries;

  Entry& add(std::string name, Tensor value, bool weight_decay = false);
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  Tensor& value(std::string_view name) { return at(name).value; }
  const Tensor& value(std::string_view name) const { return at(name).value; }
  Tensor& grad(std::string_view name) { return at(name).grad; }
  const Tensor& grad(std::string_view name) const { return at(name).grad; }

  void zero_grads();
  std::size_t scalar_count() const;
  bool all_finite() const;
};

} // namespace calnr

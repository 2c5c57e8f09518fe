#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace safl {

// Dense row-major double-precision tensor with an optional gradient buffer.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass fills it

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    values.assign(numel_of(shape), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (numel_of(shape) != values.size())
      throw std::invalid_argument("Tensor: shape/value size mismatch (" +
                                  std::to_string(numel_of(shape)) + " vs " +
                                  std::to_string(values.size()) + ")");
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= static_cast<size_t>(d);
    }
    return s.empty() ? 0 : n;
  }

  size_t numel() const { return values.size(); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void clear_grad() { grad.clear(); }

  double* data() { return values.data(); }
  const double* data() const { return values.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace safl

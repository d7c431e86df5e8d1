#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tasked {

// Library-wide error type; messages name the offending field or key.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape);

// Dense row-major double tensor with value semantics.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) throw Error("tensor data does not match shape " + shape_string(shape));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// out[c x r] = in[r x c]
void transpose(const double* in, std::size_t rows, std::size_t cols, double* out);

bool all_finite(std::span<const double> values);

}  // namespace tasked

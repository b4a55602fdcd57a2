#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gnmt/errors.hpp"

namespace gnmt {

// Dense row-major tensor of doubles. Everything in the model is rank 1 or 2;
// rank-1 shapes are normalized to {1, n} so ops can treat all tensors as
// matrices (row vectors for states, 1x1 for scalars).
struct Tensor {
  std::vector<int64_t> shape;  // always {rows, cols}
  std::vector<double> data;

  Tensor() : shape{0, 0} {}
  Tensor(std::vector<int64_t> s, std::vector<double> d);

  static Tensor zeros(int64_t rows, int64_t cols);
  static Tensor full(int64_t rows, int64_t cols, double v);
  static Tensor row(std::vector<double> v);  // 1 x n
  static Tensor scalar(double v);            // 1 x 1

  int64_t rows() const { return shape[0]; }
  int64_t cols() const { return shape[1]; }
  int64_t numel() const { return shape[0] * shape[1]; }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double item() const;  // value of a 1x1 tensor

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void add_scaled(const Tensor& other, double s);  // *this += s * other

  std::string shape_str() const;
};

// Throws ShapeError naming the op and the offending shapes.
void check_shapes(bool ok, const std::string& op, const Tensor& a);
void check_shapes(bool ok, const std::string& op, const Tensor& a, const Tensor& b);

}  // namespace gnmt

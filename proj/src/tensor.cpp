#include "gnmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gnmt {

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape.size() == 1) shape = {1, shape[0]};
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0)
    throw ShapeError("tensor: shape must be rank 1 or 2, got rank " + std::to_string(shape.size()));
  if (shape[0] * shape[1] != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor: shape " + shape_str() + " does not match data length " +
                     std::to_string(data.size()));
}

Tensor Tensor::zeros(int64_t rows, int64_t cols) {
  return Tensor({rows, cols}, std::vector<double>(static_cast<size_t>(rows * cols), 0.0));
}

Tensor Tensor::full(int64_t rows, int64_t cols, double v) {
  return Tensor({rows, cols}, std::vector<double>(static_cast<size_t>(rows * cols), v));
}

Tensor Tensor::row(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor is " + shape_str() + ", expected 1x1");
  return data[0];
}

void Tensor::add_scaled(const Tensor& other, double s) {
  check_shapes(same_shape(other), "add_scaled", *this, other);
  for (size_t i = 0; i < data.size(); ++i) data[i] += s * other.data[i];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[" << shape[0] << "x" << shape[1] << "]";
  return os.str();
}

void check_shapes(bool ok, const std::string& op, const Tensor& a) {
  if (!ok) throw ShapeError(op + ": bad shape " + a.shape_str());
}

void check_shapes(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) throw ShapeError(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace gnmt

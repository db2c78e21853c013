#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cife {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 tensor holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data);
  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Matrix view: rows() is the leading dimension, cols() the product of the
  // rest. Both are 1 for a scalar.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_.front(); }
  std::size_t cols() const { return shape_.empty() ? 1 : size() / rows(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols() + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Rows of `t` selected by `indices`, in order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

// Row-major kernels shared by the autodiff ops. out is overwritten.
// out[n x m] = a[n x k] * b[k x m]
void matmul_nn(std::span<const double> a, std::span<const double> b,
               std::span<double> out, std::size_t n, std::size_t k,
               std::size_t m);
// out[n x k] += g[n x m] * b[k x m]^T
void matmul_nt_acc(std::span<const double> g, std::span<const double> b,
                   std::span<double> out, std::size_t n, std::size_t k,
                   std::size_t m);
// out[k x m] += a[n x k]^T * g[n x m]
void matmul_tn_acc(std::span<const double> a, std::span<const double> g,
                   std::span<double> out, std::size_t n, std::size_t k,
                   std::size_t m);

}  // namespace cife

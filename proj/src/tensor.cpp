#include "cife/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "cife/errors.hpp"

namespace cife {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_dims(const Shape& shape) {
  if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
    throw ShapeError("tensor dimensions must be positive, got " +
                     shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  check_dims(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_rows: empty index set");
  Shape shape = t.shape();
  if (shape.empty()) throw ShapeError("gather_rows on a scalar");
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t cols = t.cols();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) {
      throw InvalidArgument("gather_rows: row " + std::to_string(indices[i]) +
                            " out of range " + std::to_string(t.rows()));
    }
    auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + i * cols);
  }
  return out;
}

void matmul_nn(std::span<const double> a, std::span<const double> b,
               std::span<double> out, std::size_t n, std::size_t k,
               std::size_t m) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* br = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_nt_acc(std::span<const double> g, std::span<const double> b,
                   std::span<double> out, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* gr = g.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* br = b.data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gr[j] * br[j];
      out[i * k + p] += s;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> g,
                   std::span<double> out, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* gr = g.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* o = out.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * gr[j];
    }
  }
}

}  // namespace cife

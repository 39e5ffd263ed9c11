#ifndef FRESH_TENSOR_H_
#define FRESH_TENSOR_H_

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fresh {

// Row-major dense matrix of doubles. Vectors are stored as 1 x n.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& other) const {
    return rows == other.rows && cols == other.cols;
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool operator==(const Tensor&) const = default;
};

// A named handle used by optimizers, serialization and gradient checks to
// walk the tensors of a parameter set in a fixed order.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);

}  // namespace fresh

#endif  // FRESH_TENSOR_H_

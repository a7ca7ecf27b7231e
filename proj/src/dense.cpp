#include "snqn/dense.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

namespace snqn {

std::string format_dims(const std::vector<std::size_t>& dims) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << 'x';
    out << dims[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t element_count(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) {
    if (d == 0) throw ShapeError("dimension sizes must be positive: " + format_dims(dims));
    n *= d;
  }
  return n;
}

}  // namespace

template <typename T>
DenseArray<T>::DenseArray(std::vector<std::size_t> dims, T fill)
    : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

template <typename T>
DenseArray<T>::DenseArray(std::vector<std::size_t> dims, std::vector<T> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (element_count(dims_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match dims " + format_dims(dims_));
  }
}

template <typename T>
DenseArray<T> DenseArray<T>::matrix(std::size_t rows, std::size_t cols,
                                    std::initializer_list<T> values) {
  return DenseArray({rows, cols}, std::vector<T>(values));
}

template <typename T>
DenseArray<T> DenseArray<T>::vector(std::initializer_list<T> values) {
  return DenseArray({values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t DenseArray<T>::rows() const {
  if (rank() != 2) throw ShapeError("rows() requires a matrix, got " + format_dims(dims_));
  return dims_[0];
}

template <typename T>
std::size_t DenseArray<T>::cols() const {
  if (rank() == 1) return dims_[0];
  if (rank() != 2) throw ShapeError("cols() requires rank <= 2, got " + format_dims(dims_));
  return dims_[1];
}

template <typename T>
void DenseArray<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool DenseArray<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
void DenseArray<T>::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::domain_error(what + ": non-finite value " + std::to_string(data_[i]) +
                              " at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
DenseArray<T> matmul(const DenseArray<T>& a, const DenseArray<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0]) {
    throw ShapeError("matmul shape mismatch: lhs " + format_dims(a.dims()) + " vs rhs " +
                     format_dims(b.dims()));
  }
  const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
  DenseArray<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* dst = out.raw() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a.raw()[i * k + p];
      const T* src = b.raw() + p * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * src[j];
    }
  }
  return out;
}

template <typename T>
DenseArray<T> elementwise(ElementwiseOp op, const DenseArray<T>& a) {
  DenseArray<T> out = a;
  switch (op) {
    case ElementwiseOp::sigmoid:
      for (auto& x : out.data()) x = sigmoid(x);
      break;
    case ElementwiseOp::tanh:
      for (auto& x : out.data()) x = std::tanh(x);
      break;
    default:
      throw std::invalid_argument("binary elementwise op called with one operand");
  }
  return out;
}

template <typename T>
DenseArray<T> elementwise(ElementwiseOp op, const DenseArray<T>& a, const DenseArray<T>& b) {
  std::function<T(T, T)> f;
  switch (op) {
    case ElementwiseOp::add: f = std::plus<T>{}; break;
    case ElementwiseOp::sub: f = std::minus<T>{}; break;
    case ElementwiseOp::mul: f = std::multiplies<T>{}; break;
    default: throw std::invalid_argument("unary elementwise op called with two operands");
  }
  // Broadcast when b's dims are a suffix of a's dims, or b is a single value.
  bool suffix = b.rank() <= a.rank() &&
                std::equal(b.dims().rbegin(), b.dims().rend(), a.dims().rbegin());
  if (!suffix && b.size() != 1) {
    throw ShapeError("elementwise shape mismatch: " + format_dims(a.dims()) + " vs " +
                     format_dims(b.dims()));
  }
  DenseArray<T> out = a;
  const std::size_t period = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i % period]);
  return out;
}

#define SNQN_INSTANTIATE_DENSE(T)                                                  \
  template class DenseArray<T>;                                                    \
  template DenseArray<T> matmul(const DenseArray<T>&, const DenseArray<T>&);       \
  template DenseArray<T> elementwise(ElementwiseOp, const DenseArray<T>&);         \
  template DenseArray<T> elementwise(ElementwiseOp, const DenseArray<T>&,          \
                                     const DenseArray<T>&);

SNQN_INSTANTIATE_DENSE(float)
SNQN_INSTANTIATE_DENSE(double)

}  // namespace snqn

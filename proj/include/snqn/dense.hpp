#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snqn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string format_dims(const std::vector<std::size_t>& dims);

/// Row-major dense array of arbitrary rank. All model state (embeddings,
/// GRU weights, head weights, hidden states) lives in these.
template <typename T>
class DenseArray {
 public:
  using value_type = T;

  DenseArray() = default;
  explicit DenseArray(std::vector<std::size_t> dims, T fill = T{0});
  DenseArray(std::vector<std::size_t> dims, std::vector<T> data);

  static DenseArray matrix(std::size_t rows, std::size_t cols,
                           std::initializer_list<T> values);
  static DenseArray vector(std::initializer_list<T> values);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return data().subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return data().subspan(r * cols(), cols());
  }

  void fill(T value);
  bool all_finite() const;
  /// Throws std::domain_error naming `what` and the first bad index.
  void check_finite(const std::string& what) const;

  bool same_shape(const DenseArray& other) const { return dims_ == other.dims_; }
  bool operator==(const DenseArray& other) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

template <typename T>
DenseArray<T> matmul(const DenseArray<T>& a, const DenseArray<T>& b);

enum class ElementwiseOp { add, sub, mul, sigmoid, tanh };

/// Unary form: sigmoid / tanh.
template <typename T>
DenseArray<T> elementwise(ElementwiseOp op, const DenseArray<T>& a);

/// Binary form: add / sub / mul. `b` may match `a`, be a single element, or
/// match the trailing dimensions of `a` (row broadcast).
template <typename T>
DenseArray<T> elementwise(ElementwiseOp op, const DenseArray<T>& a,
                          const DenseArray<T>& b);

template <typename T>
inline T sigmoid(T x) {
  if (x >= T{0}) {
    const T e = std::exp(-x);
    return T{1} / (T{1} + e);
  }
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace snqn

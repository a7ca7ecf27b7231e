#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "snqn/dense.hpp"
#include "snqn/rng.hpp"

namespace snqn {

template <typename T>
struct Parameter {
  DenseArray<T> value;
  DenseArray<T> grad;
  DenseArray<T> m;
  DenseArray<T> v;
};

/// Named parameters with paired gradient buffers and Adam moments. Iteration
/// order is the sorted name order, which fixes checkpoint layout and probe order.
template <typename T>
class ParameterStore {
 public:
  using Entries = std::map<std::string, Parameter<T>>;

  Parameter<T>& add(const std::string& name, std::vector<std::size_t> dims);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entries& entries() { return entries_; }
  const Entries& entries() const { return entries_; }

  void zero_grad();
  std::size_t scalar_count() const;
  std::uint64_t step_count() const { return step_count_; }
  void set_step_count(std::uint64_t n) { step_count_ = n; }

  /// Value-and-moment copy into another precision.
  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, p] : entries_) {
      auto& q = out.add(name, p.value.dims());
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        q.value[i] = static_cast<U>(p.value[i]);
        q.m[i] = static_cast<U>(p.m[i]);
        q.v[i] = static_cast<U>(p.v[i]);
      }
    }
    out.set_step_count(step_count_);
    return out;
  }

  /// True when every value buffer is bitwise equal.
  bool values_equal(const ParameterStore& other) const;

 private:
  Entries entries_;
  std::uint64_t step_count_ = 0;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& param, std::size_t index)
      : std::runtime_error("non-finite gradient in parameter '" + param + "' at index " +
                           std::to_string(index)),
        parameter(param) {}
  std::string parameter;
};

/// One bias-corrected Adam update over every entry, then zero the gradients.
template <typename T>
void adam_step(ParameterStore<T>& store, const AdamConfig& cfg);

/// Uniform in [-scale, scale] for weights; zero for names flagged as biases.
template <typename T>
void init_uniform(ParameterStore<T>& store, Rng& rng, double scale,
                  const std::function<bool(const std::string&)>& is_bias);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

inline double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

/// Compares analytic gradients against central differences on `n_probes`
/// randomly chosen scalars. `loss_fn(true)` must zero and populate store grads
/// and return the loss; `loss_fn(false)` must return the loss only.
/// Probe choice: entry uniformly, then element uniformly, so every parameter
/// family is reached even when one dominates the scalar count.
GradCheckReport finite_diff_check(const std::function<double(bool)>& loss_fn,
                                  ParameterStore<double>& store, double h,
                                  std::size_t n_probes, std::uint64_t seed);

// Checkpoint format: "SNQN" 0x01, then per entry (sorted by name):
// u32 name length, name bytes, u8 rank, u32 dims[rank], f32 data (little endian).
void write_checkpoint(std::ostream& out, const ParameterStore<float>& store);
ParameterStore<float> read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ParameterStore<float>& store);
ParameterStore<float> load_checkpoint(const std::string& path);

}  // namespace snqn

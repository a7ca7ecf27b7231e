#pragma once

#include <span>
#include <vector>

#include "snqn/encoder.hpp"
#include "snqn/parameter_store.hpp"

namespace snqn {

/// Shared GRU encoder plus the supervised head f(s) and the Q head Q(s, .).
/// Both heads are [64, n_items] weights with [n_items] biases and never score
/// the padding item.
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(std::size_t n_items);

  /// Weights and embeddings uniform in [-0.05, 0.05], biases zero.
  static Network initialized(std::size_t n_items, Rng& rng);
  static bool is_bias(const std::string& name);

  std::size_t n_items() const { return n_items_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }

  GruEncoder<T> encoder() const { return GruEncoder<T>(store_, n_items_); }

  const DenseArray<T>& sup_weight() const { return store_.get("head.sup.weight").value; }
  const DenseArray<T>& sup_bias() const { return store_.get("head.sup.bias").value; }
  const DenseArray<T>& q_weight() const { return store_.get("head.q.weight").value; }
  const DenseArray<T>& q_bias() const { return store_.get("head.q.bias").value; }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.adopt(n_items_, store_.template cast<U>());
    return out;
  }

  /// Takes ownership of a store with this network's layout (e.g. from a checkpoint).
  void adopt(std::size_t n_items, ParameterStore<T> store);
  /// Infers n_items from the Q head width.
  static Network from_store(ParameterStore<T> store);

 private:
  std::size_t n_items_ = 0;
  ParameterStore<T> store_;
};

/// y = s . sup_weight + sup_bias
template <typename T>
std::vector<T> supervised_logits(std::span<const T> state, const Network<T>& net);

/// Q(s, .) = s . q_weight + q_bias (identity activation).
template <typename T>
std::vector<T> q_values(std::span<const T> state, const Network<T>& net);

/// Max-subtracted softmax.
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

}  // namespace snqn

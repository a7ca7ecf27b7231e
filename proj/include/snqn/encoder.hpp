#pragma once

#include <concepts>
#include <span>
#include <vector>

#include "snqn/parameter_store.hpp"
#include "snqn/types.hpp"

namespace snqn {

/// Per-step activations of one forward pass, needed for backprop through time.
template <typename T>
struct GruTrace {
  std::vector<ItemId> items;
  std::vector<T> h_prev;  // steps x 64
  std::vector<T> z;
  std::vector<T> r;
  std::vector<T> cand;

  std::size_t steps() const { return items.size(); }
  void clear() {
    items.clear();
    h_prev.clear();
    z.clear();
    r.clear();
    cand.clear();
  }
};

/// Gate pre-activation gradients of one or more traces, stacked row-wise. They
/// are turned into parameter gradients in one pass by GruEncoder::apply_rows.
template <typename T>
struct BpttRows {
  std::vector<ItemId> items;
  std::vector<T> h_prev;
  std::vector<T> rh;
  std::vector<T> da_z;
  std::vector<T> da_r;
  std::vector<T> da_h;

  std::size_t rows() const { return items.size(); }
  void clear();
  void append(const BpttRows& other);
};

/// Cached input projections e_x . [W_z | W_r | W_h] for the items of a batch.
template <typename T>
class InputProjections {
 public:
  const T* z(ItemId item) const { return pz_.data() + slot(item) * kHiddenDim; }
  const T* r(ItemId item) const { return pr_.data() + slot(item) * kHiddenDim; }
  const T* h(ItemId item) const { return ph_.data() + slot(item) * kHiddenDim; }

 private:
  template <typename>
  friend class GruEncoder;
  std::size_t slot(ItemId item) const;

  std::vector<std::int32_t> slot_of_;
  std::vector<T> pz_, pr_, ph_;
};

/// Single-layer GRU over item embeddings; the final hidden state is the
/// session state. Row-vector convention:
///   z = sigmoid(e W_z + h U_z + b_z),  r = sigmoid(e W_r + h U_r + b_r)
///   c = tanh(e W_h + (r*h) U_h + b_h), h' = (1-z)*h + z*c
/// Padding positions are skipped, so trailing padding never changes the state.
template <typename T>
class GruEncoder {
 public:
  static void declare(ParameterStore<T>& store, std::size_t n_items);
  static bool is_bias(const std::string& name);

  GruEncoder(const ParameterStore<T>& store, std::size_t n_items);

  std::size_t n_items() const { return n_items_; }

  void project(std::span<const ItemId> items, InputProjections<T>& out) const;

  /// Runs the recurrence from h0 = 0 over seq's valid items into h_out (64).
  void forward(const SessionSequence& seq, const InputProjections<T>& proj, T* h_out,
               GruTrace<T>* trace = nullptr) const;
  /// One recurrence step; h_prev and h_out may not alias.
  void step(const T* h_prev, ItemId item, const InputProjections<T>& proj, T* h_out,
            GruTrace<T>* trace = nullptr) const;

  std::vector<T> encode(const SessionSequence& seq) const;

  /// Backprop through `trace` given dL/dh_final, appending gate gradients.
  void backward_rows(const GruTrace<T>& trace, const T* dh_final, BpttRows<T>& rows) const;
  /// Accumulates parameter gradients for stacked rows into `grads` (same layout
  /// as the bound store; may be the same object).
  void apply_rows(const BpttRows<T>& rows, ParameterStore<T>& grads) const;

  /// Single-sequence convenience: backward_rows + apply_rows.
  void encode_backward(const GruTrace<T>& trace, std::span<const T> upstream,
                       ParameterStore<T>& grads) const;

 private:
  std::size_t n_items_;
  const DenseArray<T>* embedding_;
  const DenseArray<T>*w_z_, *w_r_, *w_h_;
  const DenseArray<T>*u_z_, *u_r_, *u_h_;
  const DenseArray<T>*b_z_, *b_r_, *b_h_;
};

/// What a base sequence model must provide to sit under the two heads.
template <typename E, typename T>
concept SequenceEncoder = requires(const E& e, const SessionSequence& seq, GruTrace<T>& trace,
                                   const BpttRows<T>& rows, ParameterStore<T>& grads) {
  { e.encode(seq) } -> std::same_as<std::vector<T>>;
  { e.encode_backward(trace, std::span<const T>{}, grads) };
  { e.apply_rows(rows, grads) };
};

static_assert(SequenceEncoder<GruEncoder<float>, float>);
static_assert(SequenceEncoder<GruEncoder<double>, double>);

}  // namespace snqn

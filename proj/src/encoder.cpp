#include "snqn/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "snqn/kernels.hpp"

namespace snqn {

namespace {
constexpr std::size_t H = kHiddenDim;
constexpr std::size_t E = kEmbeddingDim;
}  // namespace

template <typename T>
void BpttRows<T>::clear() {
  items.clear();
  h_prev.clear();
  rh.clear();
  da_z.clear();
  da_r.clear();
  da_h.clear();
}

template <typename T>
void BpttRows<T>::append(const BpttRows& other) {
  items.insert(items.end(), other.items.begin(), other.items.end());
  h_prev.insert(h_prev.end(), other.h_prev.begin(), other.h_prev.end());
  rh.insert(rh.end(), other.rh.begin(), other.rh.end());
  da_z.insert(da_z.end(), other.da_z.begin(), other.da_z.end());
  da_r.insert(da_r.end(), other.da_r.begin(), other.da_r.end());
  da_h.insert(da_h.end(), other.da_h.begin(), other.da_h.end());
}

template <typename T>
std::size_t InputProjections<T>::slot(ItemId item) const {
  const auto s = (item >= 0 && static_cast<std::size_t>(item) < slot_of_.size())
                     ? slot_of_[static_cast<std::size_t>(item)]
                     : -1;
  if (s < 0) throw std::out_of_range("no input projection for item " + std::to_string(item));
  return static_cast<std::size_t>(s);
}

template <typename T>
void GruEncoder<T>::declare(ParameterStore<T>& store, std::size_t n_items) {
  store.add("encoder.embedding", {n_items + 1, E});
  for (const char* g : {"z", "r", "h"}) {
    store.add(std::string("encoder.W_") + g, {E, H});
    store.add(std::string("encoder.U_") + g, {H, H});
    store.add(std::string("encoder.b_") + g, {H});
  }
}

template <typename T>
bool GruEncoder<T>::is_bias(const std::string& name) {
  return name.rfind("encoder.b_", 0) == 0;
}

template <typename T>
GruEncoder<T>::GruEncoder(const ParameterStore<T>& store, std::size_t n_items)
    : n_items_(n_items),
      embedding_(&store.get("encoder.embedding").value),
      w_z_(&store.get("encoder.W_z").value),
      w_r_(&store.get("encoder.W_r").value),
      w_h_(&store.get("encoder.W_h").value),
      u_z_(&store.get("encoder.U_z").value),
      u_r_(&store.get("encoder.U_r").value),
      u_h_(&store.get("encoder.U_h").value),
      b_z_(&store.get("encoder.b_z").value),
      b_r_(&store.get("encoder.b_r").value),
      b_h_(&store.get("encoder.b_h").value) {
  if (embedding_->dims() != std::vector<std::size_t>{n_items + 1, E})
    throw ShapeError("embedding table has dims " + format_dims(embedding_->dims()) +
                     ", expected [" + std::to_string(n_items + 1) + "x64]");
}

template <typename T>
void GruEncoder<T>::project(std::span<const ItemId> items, InputProjections<T>& out) const {
  out.slot_of_.assign(n_items_ + 1, -1);
  std::vector<ItemId> unique;
  for (ItemId id : items) {
    if (id < 0 || static_cast<std::size_t>(id) > n_items_)
      throw std::out_of_range("item id " + std::to_string(id) + " out of range");
    if (out.slot_of_[static_cast<std::size_t>(id)] < 0) {
      out.slot_of_[static_cast<std::size_t>(id)] = static_cast<std::int32_t>(unique.size());
      unique.push_back(id);
    }
  }
  std::vector<T> gathered(unique.size() * E);
  for (std::size_t i = 0; i < unique.size(); ++i) {
    const auto row = embedding_->row(static_cast<std::size_t>(unique[i]));
    std::copy(row.begin(), row.end(), gathered.begin() + static_cast<std::ptrdiff_t>(i * E));
  }
  out.pz_.resize(unique.size() * H);
  out.pr_.resize(unique.size() * H);
  out.ph_.resize(unique.size() * H);
  kernels::parallel::affine_rows(gathered.data(), unique.size(), E, w_z_->raw(), b_z_->raw(), H,
                                 out.pz_.data());
  kernels::parallel::affine_rows(gathered.data(), unique.size(), E, w_r_->raw(), b_r_->raw(), H,
                                 out.pr_.data());
  kernels::parallel::affine_rows(gathered.data(), unique.size(), E, w_h_->raw(), b_h_->raw(), H,
                                 out.ph_.data());
}

// Projections already include the gate biases.
template <typename T>
void GruEncoder<T>::step(const T* h_prev, ItemId item, const InputProjections<T>& proj,
                         T* h_out, GruTrace<T>* trace) const {
  T az[H], ar[H], ah[H], rh[H];
  const T* pz = proj.z(item);
  const T* pr = proj.r(item);
  const T* ph = proj.h(item);
  std::copy(pz, pz + H, az);
  std::copy(pr, pr + H, ar);
  std::copy(ph, ph + H, ah);
  const T* uz = u_z_->raw();
  const T* ur = u_r_->raw();
  const T* uh = u_h_->raw();
  for (std::size_t k = 0; k < H; ++k) {
    const T hk = h_prev[k];
    if (hk == T{0}) continue;
    kernels::detail::axpy(hk, uz + k * H, az, H);
    kernels::detail::axpy(hk, ur + k * H, ar, H);
  }
  T z[H], r[H];
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = sigmoid(az[i]);
    r[i] = sigmoid(ar[i]);
    rh[i] = r[i] * h_prev[i];
  }
  for (std::size_t k = 0; k < H; ++k) {
    if (rh[k] == T{0}) continue;
    kernels::detail::axpy(rh[k], uh + k * H, ah, H);
  }
  T c[H];
  for (std::size_t i = 0; i < H; ++i) c[i] = std::tanh(ah[i]);
  if (trace) {
    trace->items.push_back(item);
    trace->h_prev.insert(trace->h_prev.end(), h_prev, h_prev + H);
    trace->z.insert(trace->z.end(), z, z + H);
    trace->r.insert(trace->r.end(), r, r + H);
    trace->cand.insert(trace->cand.end(), c, c + H);
  }
  for (std::size_t i = 0; i < H; ++i) h_out[i] = (T{1} - z[i]) * h_prev[i] + z[i] * c[i];
}

template <typename T>
void GruEncoder<T>::forward(const SessionSequence& seq, const InputProjections<T>& proj,
                            T* h_out, GruTrace<T>* trace) const {
  seq.validate(n_items_);
  T h[H] = {};
  T next[H];
  for (ItemId item : seq.items()) {
    step(h, item, proj, next, trace);
    std::copy(next, next + H, h);
  }
  std::copy(h, h + H, h_out);
}

template <typename T>
std::vector<T> GruEncoder<T>::encode(const SessionSequence& seq) const {
  seq.validate(n_items_);
  InputProjections<T> proj;
  project(seq.items(), proj);
  std::vector<T> h(H);
  forward(seq, proj, h.data());
  return h;
}

template <typename T>
void GruEncoder<T>::backward_rows(const GruTrace<T>& trace, const T* dh_final,
                                  BpttRows<T>& rows) const {
  const std::size_t steps = trace.steps();
  if (steps == 0) throw std::logic_error("encode_backward called without a forward trace");
  const std::size_t base = rows.rows();
  rows.items.resize(base + steps);
  for (auto* v : {&rows.h_prev, &rows.rh, &rows.da_z, &rows.da_r, &rows.da_h})
    v->resize((base + steps) * H);

  const T* uz = u_z_->raw();
  const T* ur = u_r_->raw();
  const T* uh = u_h_->raw();
  T dh[H];
  std::copy(dh_final, dh_final + H, dh);
  for (std::size_t s = steps; s-- > 0;) {
    const T* hp = trace.h_prev.data() + s * H;
    const T* z = trace.z.data() + s * H;
    const T* r = trace.r.data() + s * H;
    const T* c = trace.cand.data() + s * H;
    const std::size_t row = base + s;
    T* out_hp = rows.h_prev.data() + row * H;
    T* out_rh = rows.rh.data() + row * H;
    T* daz = rows.da_z.data() + row * H;
    T* dar = rows.da_r.data() + row * H;
    T* dah = rows.da_h.data() + row * H;
    rows.items[row] = trace.items[s];

    T dhp[H];
    for (std::size_t i = 0; i < H; ++i) {
      const T dc = dh[i] * z[i];
      const T dz = dh[i] * (c[i] - hp[i]);
      dhp[i] = dh[i] * (T{1} - z[i]);
      dah[i] = dc * (T{1} - c[i] * c[i]);
      daz[i] = dz * z[i] * (T{1} - z[i]);
      out_hp[i] = hp[i];
      out_rh[i] = r[i] * hp[i];
    }
    // d(r*h_prev) = U_h . da_h
    for (std::size_t k = 0; k < H; ++k) {
      const T drh = kernels::detail::dot8(uh + k * H, dah, H);
      const T dr = drh * hp[k];
      dar[k] = dr * r[k] * (T{1} - r[k]);
      dhp[k] += drh * r[k];
    }
    for (std::size_t k = 0; k < H; ++k) {
      dhp[k] += kernels::detail::dot8(uz + k * H, daz, H) + kernels::detail::dot8(ur + k * H, dar, H);
    }
    std::copy(dhp, dhp + H, dh);
  }
}

template <typename T>
void GruEncoder<T>::apply_rows(const BpttRows<T>& rows, ParameterStore<T>& grads) const {
  const std::size_t n = rows.rows();
  if (n == 0) return;
  namespace kp = kernels::parallel;
  const T one{1};
  kp::accumulate_outer(rows.h_prev.data(), rows.da_z.data(), n, H, H, one,
                       grads.get("encoder.U_z").grad.raw());
  kp::accumulate_outer(rows.h_prev.data(), rows.da_r.data(), n, H, H, one,
                       grads.get("encoder.U_r").grad.raw());
  kp::accumulate_outer(rows.rh.data(), rows.da_h.data(), n, H, H, one,
                       grads.get("encoder.U_h").grad.raw());
  kp::column_sums(rows.da_z.data(), n, H, one, grads.get("encoder.b_z").grad.raw());
  kp::column_sums(rows.da_r.data(), n, H, one, grads.get("encoder.b_r").grad.raw());
  kp::column_sums(rows.da_h.data(), n, H, one, grads.get("encoder.b_h").grad.raw());

  std::vector<T> emb(n * E);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = embedding_->row(static_cast<std::size_t>(rows.items[i]));
    std::copy(row.begin(), row.end(), emb.begin() + static_cast<std::ptrdiff_t>(i * E));
  }
  kp::accumulate_outer(emb.data(), rows.da_z.data(), n, E, H, one,
                       grads.get("encoder.W_z").grad.raw());
  kp::accumulate_outer(emb.data(), rows.da_r.data(), n, E, H, one,
                       grads.get("encoder.W_r").grad.raw());
  kp::accumulate_outer(emb.data(), rows.da_h.data(), n, E, H, one,
                       grads.get("encoder.W_h").grad.raw());

  // d e_x = W_z . da_z + W_r . da_r + W_h . da_h, scattered in row order.
  std::vector<T> de(n * E), tmp(n * E);
  kp::backprop_rows(rows.da_z.data(), n, H, w_z_->raw(), E, de.data());
  kp::backprop_rows(rows.da_r.data(), n, H, w_r_->raw(), E, tmp.data());
  for (std::size_t i = 0; i < de.size(); ++i) de[i] += tmp[i];
  kp::backprop_rows(rows.da_h.data(), n, H, w_h_->raw(), E, tmp.data());
  for (std::size_t i = 0; i < de.size(); ++i) de[i] += tmp[i];
  auto& g_emb = grads.get("encoder.embedding").grad;
  for (std::size_t i = 0; i < n; ++i) {
    T* dst = g_emb.raw() + static_cast<std::size_t>(rows.items[i]) * E;
    const T* src = de.data() + i * E;
    for (std::size_t j = 0; j < E; ++j) dst[j] += src[j];
  }
}

template <typename T>
void GruEncoder<T>::encode_backward(const GruTrace<T>& trace, std::span<const T> upstream,
                                    ParameterStore<T>& grads) const {
  if (upstream.size() != H) throw ShapeError("upstream gradient must have length 64");
  BpttRows<T> rows;
  backward_rows(trace, upstream.data(), rows);
  apply_rows(rows, grads);
}

template struct BpttRows<float>;
template struct BpttRows<double>;
template class InputProjections<float>;
template class InputProjections<double>;
template class GruEncoder<float>;
template class GruEncoder<double>;

}  // namespace snqn

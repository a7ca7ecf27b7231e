#include "snqn/network.hpp"

#include <algorithm>
#include <cmath>

namespace snqn {

template <typename T>
Network<T>::Network(std::size_t n_items) : n_items_(n_items) {
  if (n_items < 2) throw std::invalid_argument("a network needs at least two items");
  GruEncoder<T>::declare(store_, n_items);
  store_.add("head.sup.weight", {kHiddenDim, n_items});
  store_.add("head.sup.bias", {n_items});
  store_.add("head.q.weight", {kHiddenDim, n_items});
  store_.add("head.q.bias", {n_items});
}

template <typename T>
bool Network<T>::is_bias(const std::string& name) {
  return GruEncoder<T>::is_bias(name) || name.ends_with(".bias");
}

template <typename T>
Network<T> Network<T>::initialized(std::size_t n_items, Rng& rng) {
  Network net(n_items);
  init_uniform(net.store_, rng, 0.05, &Network::is_bias);
  return net;
}

template <typename T>
void Network<T>::adopt(std::size_t n_items, ParameterStore<T> store) {
  Network reference(n_items);
  for (const auto& [name, p] : reference.store().entries()) {
    if (!store.contains(name)) throw std::invalid_argument("parameter missing: " + name);
    if (store.get(name).value.dims() != p.value.dims())
      throw ShapeError("parameter " + name + " has dims " +
                       format_dims(store.get(name).value.dims()) + ", expected " +
                       format_dims(p.value.dims()));
  }
  if (store.entries().size() != reference.store().entries().size())
    throw std::invalid_argument("unexpected extra parameters in store");
  n_items_ = n_items;
  store_ = std::move(store);
}

template <typename T>
Network<T> Network<T>::from_store(ParameterStore<T> store) {
  const auto& dims = store.get("head.q.bias").value.dims();
  Network net;
  net.adopt(dims.at(0), std::move(store));
  return net;
}

namespace {

template <typename T>
std::vector<T> affine(std::span<const T> s, const DenseArray<T>& w, const DenseArray<T>& b) {
  if (s.size() != kHiddenDim) throw ShapeError("state vector must have length 64");
  const std::size_t n = b.size();
  std::vector<T> y(b.data().begin(), b.data().end());
  for (std::size_t k = 0; k < kHiddenDim; ++k) {
    const T sk = s[k];
    const T* row = w.raw() + k * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += sk * row[j];
  }
  return y;
}

}  // namespace

template <typename T>
std::vector<T> supervised_logits(std::span<const T> state, const Network<T>& net) {
  return affine(state, net.sup_weight(), net.sup_bias());
}

template <typename T>
std::vector<T> q_values(std::span<const T> state, const Network<T>& net) {
  return affine(state, net.q_weight(), net.q_bias());
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const T mx = *std::max_element(p.begin(), p.end());
  T sum{0};
  for (auto& x : p) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : p) x /= sum;
  return p;
}

template class Network<float>;
template class Network<double>;
template std::vector<float> supervised_logits(std::span<const float>, const Network<float>&);
template std::vector<double> supervised_logits(std::span<const double>, const Network<double>&);
template std::vector<float> q_values(std::span<const float>, const Network<float>&);
template std::vector<double> q_values(std::span<const double>, const Network<double>&);
template std::vector<float> softmax(std::span<const float>);
template std::vector<double> softmax(std::span<const double>);

}  // namespace snqn

#include "snqn/parameter_store.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace snqn {

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, std::vector<std::size_t> dims) {
  if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter<T> p{DenseArray<T>(dims), DenseArray<T>(dims), DenseArray<T>(dims),
                 DenseArray<T>(dims)};
  return entries_.emplace(name, std::move(p)).first->second;
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [name, p] : entries_) p.grad.fill(T{0});
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += p.value.size();
  return n;
}

template <typename T>
bool ParameterStore<T>::values_equal(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto it = other.entries_.begin();
  for (const auto& [name, p] : entries_) {
    if (name != it->first || !p.value.same_shape(it->second.value)) return false;
    if (std::memcmp(p.value.raw(), it->second.value.raw(), p.value.size() * sizeof(T)) != 0)
      return false;
    ++it;
  }
  return true;
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("adam: learning_rate must be positive");
  if (!(beta1 > 0 && beta1 < 1)) throw std::invalid_argument("adam: beta1 must be in (0,1)");
  if (!(beta2 > 0 && beta2 < 1)) throw std::invalid_argument("adam: beta2 must be in (0,1)");
  if (!(epsilon > 0)) throw std::invalid_argument("adam: epsilon must be positive");
}

template <typename T>
void adam_step(ParameterStore<T>& store, const AdamConfig& cfg) {
  for (const auto& [name, p] : store.entries()) {
    const auto& g = p.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NonFiniteGradient(name, i);
    }
  }
  const std::uint64_t t = store.step_count() + 1;
  store.set_step_count(t);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - cfg.beta1);
  const T c2 = static_cast<T>(1.0 - cfg.beta2);
  const T bias1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T bias2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  for (auto& [name, p] : store.entries()) {
    T* x = p.value.raw();
    T* g = p.grad.raw();
    T* m = p.m.raw();
    T* v = p.v.raw();
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + c1 * g[i];
      v[i] = b2 * v[i] + c2 * g[i] * g[i];
      const T mhat = m[i] / bias1;
      const T vhat = v[i] / bias2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[i] = T{0};
    }
  }
}

template <typename T>
void init_uniform(ParameterStore<T>& store, Rng& rng, double scale,
                  const std::function<bool(const std::string&)>& is_bias) {
  for (auto& [name, p] : store.entries()) {
    if (is_bias(name)) {
      p.value.fill(T{0});
      continue;
    }
    for (auto& x : p.value.data()) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * scale);
  }
}

GradCheckReport finite_diff_check(const std::function<double(bool)>& loss_fn,
                                  ParameterStore<double>& store, double h,
                                  std::size_t n_probes, std::uint64_t seed) {
  GradCheckReport report;
  loss_fn(true);
  std::vector<std::pair<std::string, Parameter<double>*>> params;
  for (auto& [name, p] : store.entries()) params.emplace_back(name, &p);
  if (params.empty()) return report;

  Rng rng(seed);
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    auto& [name, p] = params[uniform_index(rng, params.size())];
    const std::size_t idx = uniform_index(rng, p->value.size());
    const double analytic = p->grad[idx];
    const double saved = p->value[idx];
    p->value[idx] = saved + h;
    const double up = loss_fn(false);
    p->value[idx] = saved - h;
    const double down = loss_fn(false);
    p->value[idx] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(analytic, numeric);
    ++report.probes;
    if (report.probes == 1 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = name;
      report.worst_index = idx;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

namespace {

constexpr std::array<char, 4> kMagic{'S', 'N', 'Q', 'N'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF),
                              static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

[[noreturn]] void corrupt(const std::string& why) {
  throw std::runtime_error("corrupt checkpoint: " + why);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterStore<float>& store) {
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(kVersion));
  for (const auto& [name, p] : store.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(p.value.rank()));
    for (auto d : p.value.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float x : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

ParameterStore<float> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) corrupt("bad magic");
  const int version = in.get();
  if (version != kVersion) corrupt("unsupported version " + std::to_string(version));
  ParameterStore<float> store;
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) corrupt("truncated name");
    const int rank = in.get();
    if (rank <= 0) corrupt("bad rank for " + name);
    std::vector<std::size_t> dims(static_cast<std::size_t>(rank));
    for (auto& d : dims) {
      std::uint32_t v = 0;
      if (!get_u32(in, v)) corrupt("truncated dims for " + name);
      d = v;
    }
    auto& p = store.add(name, dims);
    for (auto& x : p.value.data()) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) corrupt("truncated data for " + name);
      x = std::bit_cast<float>(bits);
    }
  }
  return store;
}

void save_checkpoint(const std::string& path, const ParameterStore<float>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, store);
}

ParameterStore<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path);
  return read_checkpoint(in);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step(ParameterStore<float>&, const AdamConfig&);
template void adam_step(ParameterStore<double>&, const AdamConfig&);
template void init_uniform(ParameterStore<float>&, Rng&, double,
                           const std::function<bool(const std::string&)>&);
template void init_uniform(ParameterStore<double>&, Rng&, double,
                           const std::function<bool(const std::string&)>&);

}  // namespace snqn

#include "snqn/objective.hpp"

#include <algorithm>
#include <cmath>

#include "snqn/kernels.hpp"
#include "snqn/losses.hpp"

namespace snqn {

namespace {

constexpr std::size_t H = kHiddenDim;

bool extends(const SessionSequence& state, const SessionSequence& next) {
  if (state.valid_len >= kWindow || next.valid_len != state.valid_len + 1) return false;
  return std::equal(state.item_ids.begin(), state.item_ids.begin() + state.valid_len,
                    next.item_ids.begin());
}

template <typename T>
struct Encoded {
  std::vector<T> current;  // B x 64
  std::vector<T> next;     // B x 64 (rows of terminal items are unused)
};

// Encodes state and next_state of every item; traces are recorded for the
// current state when requested.
template <typename T>
Encoded<T> encode_batch(const Network<T>& net, std::span<const TDBatchItem> batch,
                        bool need_next, std::vector<GruTrace<T>>* traces) {
  const auto enc = net.encoder();
  std::vector<ItemId> items;
  for (const auto& it : batch) {
    items.insert(items.end(), it.state.items().begin(), it.state.items().end());
    if (need_next && !it.is_terminal)
      items.insert(items.end(), it.next_state.items().begin(), it.next_state.items().end());
  }
  InputProjections<T> proj;
  enc.project(items, proj);

  const std::size_t B = batch.size();
  Encoded<T> out;
  out.current.assign(B * H, T{0});
  if (need_next) out.next.assign(B * H, T{0});
  if (traces) traces->assign(B, GruTrace<T>{});
  kernels::parallel_for(B, [&](std::size_t b) {
    const auto& it = batch[b];
    T* cur = out.current.data() + b * H;
    enc.forward(it.state, proj, cur, traces ? &(*traces)[b] : nullptr);
    if (!need_next || it.is_terminal) return;
    T* nxt = out.next.data() + b * H;
    if (extends(it.state, it.next_state)) {
      enc.step(cur, it.next_state.item_ids[it.state.valid_len], proj, nxt);
    } else {
      enc.forward(it.next_state, proj, nxt);
    }
  });
  return out;
}

template <typename T>
double q_at(const Network<T>& net, const T* state, ItemId a) {
  const std::size_t n = net.n_items();
  const T* w = net.q_weight().raw();
  double acc = static_cast<double>(net.q_bias()[static_cast<std::size_t>(a)]);
  T s{0};
  for (std::size_t k = 0; k < H; ++k) s += state[k] * w[k * n + static_cast<std::size_t>(a)];
  return acc + static_cast<double>(s);
}

}  // namespace

template <typename T>
ObjectiveResult batch_objective(Network<T>& online, const Network<T>& target,
                                std::span<const TDBatchItem> batch,
                                const ObjectiveSettings& settings, bool accumulate_grad,
                                const FrozenTerms* frozen, FrozenTerms* capture) {
  ObjectiveResult result;
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("empty training batch");
  const std::size_t N = online.n_items();
  if (target.n_items() != N) throw std::invalid_argument("online and target item counts differ");
  for (const auto& it : batch) {
    if (it.positive < 0 || static_cast<std::size_t>(it.positive) >= N)
      throw std::out_of_range("positive action out of range");
    for (ItemId a : it.negatives)
      if (a < 0 || static_cast<std::size_t>(a) >= N)
        throw std::out_of_range("negative action out of range");
  }

  const bool use_actor = settings.supervised;
  const bool use_q = settings.q_learning;
  const bool need_adv = use_actor && settings.actor != ActorWeight::plain;
  const bool need_rho = use_actor && settings.actor == ActorWeight::advantage_propensity;
  const bool need_q_rows = use_q || need_adv;
  const bool bootstrap_live = use_q && frozen == nullptr;
  if (need_rho && !settings.fixed_rho && settings.behavior.size() != N)
    throw std::invalid_argument("off-policy actor needs a behavior probability per item");

  std::vector<GruTrace<T>> traces;
  auto on = encode_batch(online, batch, bootstrap_live, accumulate_grad ? &traces : nullptr);
  Encoded<T> tg;
  if (bootstrap_live) tg = encode_batch(target, batch, true, static_cast<std::vector<GruTrace<T>>*>(nullptr));

  namespace kp = kernels::parallel;
  std::vector<T> logits, q_cur, q_next;
  if (use_actor) {
    logits.resize(B * N);
    kp::affine_rows(on.current.data(), B, H, online.sup_weight().raw(), online.sup_bias().raw(),
                    N, logits.data());
  }
  if (need_q_rows) {
    q_cur.resize(B * N);
    kp::affine_rows(on.current.data(), B, H, online.q_weight().raw(), online.q_bias().raw(), N,
                    q_cur.data());
  }
  if (bootstrap_live) {
    q_next.resize(B * N);
    kp::affine_rows(on.next.data(), B, H, online.q_weight().raw(), online.q_bias().raw(), N,
                    q_next.data());
  }

  FrozenTerms terms;
  if (frozen) {
    terms = *frozen;
  } else {
    terms.argmax_next.assign(B, -1);
    terms.argmax_current.assign(B, -1);
    terms.boot_next.assign(B, 0.0);
    terms.boot_current.assign(B, 0.0);
    terms.advantage.assign(B, 1.0);
    terms.rho.assign(B, 1.0);
  }

  std::vector<T> d_logits, d_q;
  if (accumulate_grad) {
    if (use_actor) d_logits.assign(B * N, T{0});
    if (use_q) d_q.assign(B * N, T{0});
  }
  std::vector<double> ls(B, 0.0), lp(B, 0.0), ln(B, 0.0), item_total(B, 0.0);
  const T inv_b = T{1} / static_cast<T>(B);

  kernels::parallel_for(B, [&](std::size_t b) {
    const auto& it = batch[b];
    if (!frozen) {
      if (bootstrap_live) {
        const std::span<const T> qc(q_cur.data() + b * N, N);
        terms.argmax_current[b] = argmax(qc);
        terms.boot_current[b] = q_at(target, tg.current.data() + b * H, terms.argmax_current[b]);
        if (!it.is_terminal) {
          const std::span<const T> qn(q_next.data() + b * N, N);
          terms.argmax_next[b] = argmax(qn);
          terms.boot_next[b] = q_at(target, tg.next.data() + b * H, terms.argmax_next[b]);
        }
      }
      if (need_adv) {
        terms.advantage[b] =
            settings.fixed_advantage
                ? *settings.fixed_advantage
                : advantage(std::span<const T>(q_cur.data() + b * N, N), it.positive, it.negatives);
      }
    }

    double total = 0.0;
    if (use_actor) {
      const std::span<const T> y(logits.data() + b * N, N);
      auto ce = cross_entropy(y, it.positive);
      ls[b] = ce.loss;
      double weight = 1.0;
      if (need_adv) weight = terms.advantage[b];
      if (need_rho) {
        if (!frozen) {
          if (settings.fixed_rho) {
            terms.rho[b] = *settings.fixed_rho;
          } else {
            const double pi = std::exp(-ce.loss);
            terms.rho[b] = propensity(pi, settings.behavior[static_cast<std::size_t>(it.positive)],
                                      settings.rho_cap);
          }
        }
        weight *= terms.rho[b];
      }
      total += ce.loss * weight;
      if (accumulate_grad) {
        const T w = static_cast<T>(weight) * inv_b;
        T* dst = d_logits.data() + b * N;
        for (std::size_t i = 0; i < N; ++i) dst[i] = w * ce.grad[i];
      }
    }
    if (use_q) {
      const std::span<const T> qc(q_cur.data() + b * N, N);
      auto td = td_terms(qc, it.positive, it.negatives, it.reward, it.is_terminal,
                         terms.boot_next[b], terms.boot_current[b], settings.rewards);
      lp[b] = td.l_p;
      ln[b] = td.l_n;
      total += td.l_p + td.l_n;
      if (accumulate_grad) {
        T* dst = d_q.data() + b * N;
        for (const auto& [a, g] : td.dq) dst[static_cast<std::size_t>(a)] += static_cast<T>(g) * inv_b;
      }
    }
    item_total[b] = total;
  });

  for (std::size_t b = 0; b < B; ++b) {
    result.l_s += ls[b];
    result.l_p += lp[b];
    result.l_n += ln[b];
    result.total += item_total[b];
    if (need_adv) result.a_mean += terms.advantage[b];
    if (need_rho) result.rho_mean += terms.rho[b];
    if (b == 0 || !(item_total[b] <= result.worst_loss)) {
      result.worst_loss = item_total[b];
      result.worst_item = b;
    }
  }
  const double nb = static_cast<double>(B);
  result.l_s /= nb;
  result.l_p /= nb;
  result.l_n /= nb;
  result.total /= nb;
  result.a_mean /= nb;
  result.rho_mean /= nb;
  if (capture) *capture = terms;
  if (!accumulate_grad) return result;

  auto& store = online.store();
  std::vector<T> d_state(B * H, T{0});
  if (use_actor) {
    kp::accumulate_outer(on.current.data(), d_logits.data(), B, H, N, T{1},
                         store.get("head.sup.weight").grad.raw());
    kp::column_sums(d_logits.data(), B, N, T{1}, store.get("head.sup.bias").grad.raw());
    kp::backprop_rows(d_logits.data(), B, N, online.sup_weight().raw(), H, d_state.data());
  }
  if (use_q) {
    kp::accumulate_outer(on.current.data(), d_q.data(), B, H, N, T{1},
                         store.get("head.q.weight").grad.raw());
    kp::column_sums(d_q.data(), B, N, T{1}, store.get("head.q.bias").grad.raw());
    std::vector<T> tmp(B * H);
    kp::backprop_rows(d_q.data(), B, N, online.q_weight().raw(), H, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) d_state[i] += tmp[i];
  }

  const auto enc = online.encoder();
  std::vector<BpttRows<T>> per_item(B);
  kernels::parallel_for(B, [&](std::size_t b) {
    enc.backward_rows(traces[b], d_state.data() + b * H, per_item[b]);
  });
  BpttRows<T> rows;
  for (const auto& r : per_item) rows.append(r);
  enc.apply_rows(rows, store);
  return result;
}

template ObjectiveResult batch_objective(Network<float>&, const Network<float>&,
                                         std::span<const TDBatchItem>, const ObjectiveSettings&,
                                         bool, const FrozenTerms*, FrozenTerms*);
template ObjectiveResult batch_objective(Network<double>&, const Network<double>&,
                                         std::span<const TDBatchItem>, const ObjectiveSettings&,
                                         bool, const FrozenTerms*, FrozenTerms*);

}  // namespace snqn

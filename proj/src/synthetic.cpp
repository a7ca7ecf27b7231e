#include "snqn/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "snqn/rng.hpp"

namespace snqn {

void SyntheticSpec::validate() const {
  if (n_items < 2 || n_items > 32) throw std::invalid_argument("synthetic n_items must be in [2, 32]");
  if (n_user_types < 1) throw std::invalid_argument("synthetic spec needs at least one user type");
  if (affinity.size() != n_user_types)
    throw std::invalid_argument("affinity needs one row per user type");
  for (const auto& row : affinity) {
    if (row.size() != n_items) throw std::invalid_argument("affinity row length must equal n_items");
    double sum = 0.0;
    for (double a : row) {
      if (!(a >= 0.0)) throw std::invalid_argument("affinity entries must be non-negative");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("affinity rows must sum to 1");
  }
  if (min_len < 2 || max_len > 10 || min_len > max_len)
    throw std::invalid_argument("session lengths must satisfy 2 <= min_len <= max_len <= 10");
  if (!(end_prob > 0.0 && end_prob <= 1.0)) throw std::invalid_argument("end_prob must be in (0, 1]");
  if (!(repeat_factor > 0.0)) throw std::invalid_argument("repeat_factor must be positive");
}

SyntheticSpec SyntheticSpec::small() {
  SyntheticSpec s;
  s.n_items = 5;
  s.n_user_types = 2;
  s.affinity = {{0.7, 0.2, 0.1, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.75, 0.25}};
  s.purchase_threshold = 0.5;
  s.min_len = 3;
  s.max_len = 10;
  s.end_prob = 0.5;
  s.repeat_factor = 0.5;
  s.seed = 1;
  return s;
}

// Four user types with overlapping 10-item supports over 30 items. Within a
// support, one item is a strong favourite that is bought; the others are browsed.
SyntheticSpec SyntheticSpec::medium() {
  SyntheticSpec s;
  s.n_items = 30;
  s.n_user_types = 4;
  s.purchase_threshold = 0.1;
  s.min_len = 3;
  s.max_len = 10;
  s.end_prob = 0.3;
  s.repeat_factor = 0.3;
  s.seed = 7;
  auto rng = make_rng(0x5eed, "medium.affinity");
  for (std::size_t u = 0; u < s.n_user_types; ++u) {
    std::vector<double> row(s.n_items, 0.0);
    std::vector<std::size_t> support;
    for (std::size_t j = 0; j < 10; ++j) support.push_back((u * 7 + j) % s.n_items);
    for (std::size_t j = 0; j < support.size(); ++j)
      row[support[j]] = 0.5 + uniform01(rng);
    // two purchase items per user, each a little below the browsing mass
    row[support[3]] = 1.6;
    row[support[7]] = 1.3;
    double sum = 0.0;
    for (double a : row) sum += a;
    for (double& a : row) a /= sum;
    s.affinity.push_back(row);
  }
  return s;
}

SyntheticSpec SyntheticSpec::preset(const std::string& name) {
  if (name == "small") return small();
  if (name == "medium") return medium();
  throw std::invalid_argument("unknown synthetic preset '" + name + "' (expected small or medium)");
}

BehaviorPolicy parse_behavior(const std::string& name) {
  if (name == "affinity_proportional" || name == "affinity") return BehaviorPolicy::affinity_proportional;
  if (name == "uniform") return BehaviorPolicy::uniform;
  throw std::invalid_argument("unknown behavior policy '" + name + "'");
}

std::vector<double> behavior_probs(const SyntheticSpec& spec, BehaviorPolicy behavior,
                                   std::size_t user, int last) {
  std::vector<double> p(spec.n_items, 1.0 / static_cast<double>(spec.n_items));
  if (behavior == BehaviorPolicy::uniform) return p;
  double sum = 0.0;
  for (std::size_t a = 0; a < spec.n_items; ++a) {
    p[a] = spec.affinity[user][a] * (static_cast<int>(a) == last ? spec.repeat_factor : 1.0);
    sum += p[a];
  }
  for (double& x : p) x /= sum;
  return p;
}

namespace {

std::size_t draw(const std::vector<double>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

// P(session length >= pos) for 1-based positions.
std::vector<double> survival(const SyntheticSpec& spec) {
  std::vector<double> s(spec.max_len + 2, 0.0);
  for (std::size_t pos = 1; pos <= spec.max_len; ++pos) {
    if (pos <= spec.min_len) s[pos] = 1.0;
    else s[pos] = s[pos - 1] * (1.0 - spec.end_prob);
  }
  return s;
}

}  // namespace

std::vector<RawEvent> generate_log(const SyntheticSpec& spec, std::size_t n_sessions,
                                   BehaviorPolicy behavior) {
  spec.validate();
  std::vector<RawEvent> out;
  for (std::size_t i = 0; i < n_sessions; ++i) {
    auto rng = make_rng(spec.seed, "synthetic.session", i);
    const auto user = static_cast<std::size_t>(uniform_index(rng, spec.n_user_types));
    std::size_t len = spec.min_len;
    while (len < spec.max_len && uniform01(rng) >= spec.end_prob) ++len;
    int last = -1;
    const std::string sid = "u" + std::to_string(user) + "-" + std::to_string(i);
    for (std::size_t t = 0; t < len; ++t) {
      const auto a = draw(behavior_probs(spec, behavior, user, last), rng);
      RawEvent ev;
      ev.session_id = sid;
      ev.timestamp = static_cast<std::int64_t>(t);
      ev.item_id = std::to_string(a);
      ev.behavior = spec.affinity[user][a] >= spec.purchase_threshold ? Interaction::purchase
                                                                     : Interaction::click;
      out.push_back(std::move(ev));
      last = static_cast<int>(a);
    }
  }
  return out;
}

double expected_purchase_fraction(const SyntheticSpec& spec, BehaviorPolicy behavior) {
  spec.validate();
  const auto surv = survival(spec);
  double purchases = 0.0, events = 0.0;
  for (std::size_t u = 0; u < spec.n_user_types; ++u) {
    const double pu = 1.0 / static_cast<double>(spec.n_user_types);
    std::vector<double> dist = behavior_probs(spec, behavior, u, -1);
    for (std::size_t pos = 1; pos <= spec.max_len; ++pos) {
      double buy = 0.0;
      for (std::size_t a = 0; a < spec.n_items; ++a)
        if (spec.affinity[u][a] >= spec.purchase_threshold) buy += dist[a];
      purchases += pu * surv[pos] * buy;
      events += pu * surv[pos];
      std::vector<double> next(spec.n_items, 0.0);
      for (std::size_t a = 0; a < spec.n_items; ++a) {
        if (dist[a] == 0.0) continue;
        const auto p = behavior_probs(spec, behavior, u, static_cast<int>(a));
        for (std::size_t b = 0; b < spec.n_items; ++b) next[b] += dist[a] * p[b];
      }
      dist = std::move(next);
    }
  }
  return purchases / events;
}

void TabularMdp::validate() const {
  if (n_states > kMaxOracleStates)
    throw std::length_error("tabular state space of " + std::to_string(n_states) +
                            " states exceeds the 1e6 limit");
  if (outcomes.size() != n_states * n_actions || available.size() != n_states * n_actions)
    throw std::invalid_argument("tabular MDP tables have the wrong size");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!available[i]) continue;
    double total = 0.0;
    for (const auto& o : outcomes[i]) {
      if (o.prob < 0.0) throw std::invalid_argument("negative transition probability");
      if (o.next >= static_cast<int>(n_states)) throw std::invalid_argument("transition to unknown state");
      total += o.prob;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("transition probabilities of state " + std::to_string(i / n_actions) +
                                  " action " + std::to_string(i % n_actions) + " sum to " +
                                  std::to_string(total));
  }
}

double QTable::max_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

QTable value_iteration(const TabularMdp& mdp, double gamma, std::size_t horizon, double tol) {
  mdp.validate();
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  QTable q;
  q.n_states = S;
  q.n_actions = A;
  q.values.assign(S * A, 0.0);
  std::vector<double> v(S, 0.0), next(S * A, 0.0);
  for (std::size_t sweep = 0; sweep < horizon; ++sweep) {
    for (std::size_t s = 0; s < S; ++s) {
      double best = 0.0;
      bool any = false;
      for (std::size_t a = 0; a < A; ++a) {
        if (!mdp.available[s * A + a]) continue;
        best = any ? std::max(best, q.values[s * A + a]) : q.values[s * A + a];
        any = true;
      }
      v[s] = best;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < S * A; ++i) {
      double x = 0.0;
      if (mdp.available[i])
        for (const auto& o : mdp.outcomes[i])
          x += o.prob * (o.reward + (o.next < 0 ? 0.0 : gamma * v[static_cast<std::size_t>(o.next)]));
      delta = std::max(delta, std::abs(x - q.values[i]));
      next[i] = x;
    }
    q.values.swap(next);
    q.sweep_deltas.push_back(delta);
    q.sweeps = sweep + 1;
    if (delta < tol) break;
  }
  return q;
}

int identify_user(const SyntheticSpec& spec, const std::vector<int>& history) {
  int found = -1;
  for (std::size_t u = 0; u < spec.n_user_types; ++u) {
    bool ok = true;
    for (int a : history)
      if (!(spec.affinity[u][static_cast<std::size_t>(a)] > 0.0)) ok = false;
    if (!ok) continue;
    if (found >= 0) return -1;
    found = static_cast<int>(u);
  }
  return found;
}

SyntheticOracle build_oracle(const SyntheticSpec& spec, BehaviorPolicy behavior,
                             const RewardConfig& rewards, std::size_t neg_samples,
                             std::size_t horizon) {
  spec.validate();
  if (spec.min_len > 3)
    throw std::invalid_argument("the two-item oracle state needs min_len <= 3");
  const std::size_t N = spec.n_items;
  if (N > 1 && neg_samples > N - 1) throw std::invalid_argument("neg_samples must be at most n_items - 1");
  const double neg_rate = static_cast<double>(neg_samples) / static_cast<double>(N - 1);

  SyntheticOracle o;
  o.spec = spec;
  std::deque<std::size_t> queue;
  auto intern = [&](const OracleState& s) {
    auto [it, fresh] = o.index.emplace(s, o.states.size());
    if (fresh) {
      if (o.states.size() >= kMaxOracleStates)
        throw std::length_error("synthetic oracle state space exceeds the 1e6 limit");
      o.states.push_back(s);
      queue.push_back(it->second);
    }
    return it->second;
  };
  for (std::size_t u = 0; u < spec.n_user_types; ++u) {
    const auto p0 = behavior_probs(spec, behavior, u, -1);
    for (std::size_t a = 0; a < N; ++a)
      if (p0[a] > 0.0) intern(OracleState{u, {static_cast<int>(a)}});
  }
  struct Pending {
    std::size_t state;
    std::size_t action;
    std::vector<TabularMdp::Outcome> outcomes;
  };
  std::vector<Pending> pending;
  while (!queue.empty()) {
    const std::size_t si = queue.front();
    queue.pop_front();
    const OracleState s = o.states[si];
    const auto beta = behavior_probs(spec, behavior, s.user, s.history.back());
    const std::size_t pos_next = s.history.size() + 1;  // exact for 1, a lower bound for 2
    const double p_term = pos_next >= spec.min_len ? spec.end_prob : 0.0;
    for (std::size_t a = 0; a < N; ++a) {
      const double denom = beta[a] + (1.0 - beta[a]) * neg_rate;
      const double p_acc = denom > 0.0 ? beta[a] / denom : 1.0;
      const double r = spec.affinity[s.user][a] >= spec.purchase_threshold ? rewards.r_purchase
                                                                           : rewards.r_click;
      OracleState nxt{s.user, {s.history.back(), static_cast<int>(a)}};
      Pending p{si, a, {}};
      if (p_acc > 0.0) {
        const auto ni = static_cast<int>(intern(nxt));
        if (p_term < 1.0) p.outcomes.push_back({p_acc * (1.0 - p_term), r, ni});
        if (p_term > 0.0) p.outcomes.push_back({p_acc * p_term, r, -1});
      }
      if (p_acc < 1.0) p.outcomes.push_back({1.0 - p_acc, rewards.r_negative, static_cast<int>(si)});
      pending.push_back(std::move(p));
    }
  }
  o.mdp.n_states = o.states.size();
  o.mdp.n_actions = N;
  o.mdp.outcomes.assign(o.mdp.n_states * N, {});
  o.mdp.available.assign(o.mdp.n_states * N, false);
  for (auto& p : pending) {
    o.mdp.outcomes[p.state * N + p.action] = std::move(p.outcomes);
    o.mdp.available[p.state * N + p.action] = true;
  }
  o.q = value_iteration(o.mdp, rewards.gamma, horizon);
  return o;
}

std::vector<int> synthetic_item_map(const ReplayDataset& ds, const SyntheticSpec& spec) {
  std::vector<int> out;
  for (const auto& key : ds.vocab) {
    int v = -1;
    auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), v);
    if (ec != std::errc() || p != key.data() + key.size() || v < 0 ||
        static_cast<std::size_t>(v) >= spec.n_items)
      throw std::invalid_argument("dataset item '" + key + "' is not an item of the synthetic spec");
    out.push_back(v);
  }
  return out;
}

std::vector<VisitedPair> count_visits(const SyntheticOracle& oracle,
                                      const std::vector<std::vector<TDBatchItem>>& batches,
                                      const std::vector<int>& vocab_to_item,
                                      std::size_t min_visits) {
  const std::size_t N = oracle.spec.n_items;
  std::vector<std::size_t> counts(oracle.states.size() * N, 0);
  for (const auto& batch : batches) {
    for (const auto& it : batch) {
      if (it.state.valid_len > 2) continue;
      std::vector<int> hist;
      for (ItemId id : it.state.items()) hist.push_back(vocab_to_item[static_cast<std::size_t>(id)]);
      const int u = identify_user(oracle.spec, hist);
      if (u < 0) continue;
      auto found = oracle.index.find(OracleState{static_cast<std::size_t>(u), hist});
      if (found == oracle.index.end()) continue;
      const std::size_t base = found->second * N;
      ++counts[base + static_cast<std::size_t>(vocab_to_item[static_cast<std::size_t>(it.positive)])];
      for (ItemId a : it.negatives) ++counts[base + static_cast<std::size_t>(vocab_to_item[static_cast<std::size_t>(a)])];
    }
  }
  std::vector<VisitedPair> out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > 0 && counts[i] >= min_visits)
      out.push_back({i / N, static_cast<int>(i % N), counts[i]});
  return out;
}

QDeviation compare_q(const Network<float>& net, const SyntheticOracle& oracle,
                     const std::vector<VisitedPair>& pairs, const std::vector<int>& vocab_to_item) {
  std::vector<ItemId> item_to_vocab(oracle.spec.n_items, -1);
  for (std::size_t i = 0; i < vocab_to_item.size(); ++i)
    item_to_vocab[static_cast<std::size_t>(vocab_to_item[i])] = static_cast<ItemId>(i);
  const auto pad = static_cast<ItemId>(net.n_items());
  const auto enc = net.encoder();
  QDeviation out;
  for (const auto& p : pairs) {
    const auto& st = oracle.states[p.state];
    std::vector<ItemId> hist;
    for (int a : st.history) hist.push_back(item_to_vocab[static_cast<std::size_t>(a)]);
    const ItemId action = item_to_vocab[static_cast<std::size_t>(p.action)];
    if (action < 0 || std::find(hist.begin(), hist.end(), -1) != hist.end())
      throw std::invalid_argument("visited pair refers to an item missing from the dataset");
    const auto seq = SessionSequence::from_history(hist, {}, pad);
    const auto s = enc.encode(seq);
    const auto q = q_values(std::span<const float>(s), net);
    const double learned = q[static_cast<std::size_t>(action)];
    const double star = oracle.q.at(p.state, static_cast<std::size_t>(p.action));
    out.pairs.push_back({p.state, p.action, p.visits, learned, star});
    out.max_abs = std::max(out.max_abs, std::abs(learned - star));
    out.max_learned = std::max(out.max_learned, learned);
  }
  return out;
}

std::string describe(const OracleState& s) {
  std::ostringstream os;
  os << 'u' << s.user << ":[";
  for (std::size_t i = 0; i < s.history.size(); ++i) os << (i ? "," : "") << s.history[i];
  os << ']';
  return os.str();
}

ReplayDataset simulate_dataset(const SyntheticSpec& spec, const std::string& preset,
                               std::size_t n_sessions, BehaviorPolicy behavior,
                               const PreprocessConfig& pre) {
  auto ds = preprocess(generate_log(spec, n_sessions, behavior), pre);
  ds.notes["synthetic.preset"] = preset;
  ds.notes["synthetic.seed"] = std::to_string(spec.seed);
  ds.notes["synthetic.behavior"] =
      behavior == BehaviorPolicy::uniform ? "uniform" : "affinity_proportional";
  ds.notes["synthetic.n_sessions"] = std::to_string(n_sessions);
  return ds;
}

std::optional<SyntheticOrigin> synthetic_origin(const ReplayDataset& ds) {
  auto preset = ds.notes.find("synthetic.preset");
  if (preset == ds.notes.end()) return std::nullopt;
  SyntheticOrigin o{SyntheticSpec::preset(preset->second), BehaviorPolicy::affinity_proportional};
  if (auto it = ds.notes.find("synthetic.seed"); it != ds.notes.end())
    o.spec.seed = std::stoull(it->second);
  if (auto it = ds.notes.find("synthetic.behavior"); it != ds.notes.end())
    o.behavior = parse_behavior(it->second);
  return o;
}

OracleCheck oracle_check(const Network<float>& net, const ReplayDataset& ds,
                         const SyntheticOrigin& origin, const RewardConfig& rewards,
                         std::size_t batch_size, std::size_t neg_samples, std::uint64_t seed,
                         std::size_t min_visits) {
  const auto oracle = build_oracle(origin.spec, origin.behavior, rewards, neg_samples);
  const auto vocab = synthetic_item_map(ds, origin.spec);
  BatchStream stream(ds, Split::train, rewards, batch_size, neg_samples, seed);
  const auto pairs = count_visits(oracle, stream.epoch_batches(0), vocab, min_visits);
  OracleCheck out;
  out.deviation = compare_q(net, oracle, pairs, vocab);
  out.n_pairs = pairs.size();
  out.n_states = oracle.states.size();
  out.q_star_max = oracle.q.max_abs();
  return out;
}

}  // namespace snqn

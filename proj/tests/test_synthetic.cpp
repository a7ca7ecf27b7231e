#include <doctest.h>

#include <cmath>
#include <map>

#include "snqn/synthetic.hpp"
#include "snqn/training.hpp"

using namespace snqn;

TEST_CASE("spec presets are valid") {
  CHECK_NOTHROW(SyntheticSpec::small().validate());
  CHECK_NOTHROW(SyntheticSpec::medium().validate());
  CHECK(SyntheticSpec::preset("medium").n_items == 30);
  CHECK_THROWS(SyntheticSpec::preset("huge"));
  auto bad = SyntheticSpec::small();
  bad.affinity[0][0] += 0.5;
  CHECK_THROWS(bad.validate());
  bad = SyntheticSpec::small();
  bad.min_len = 1;
  CHECK_THROWS(bad.validate());
  bad = SyntheticSpec::small();
  bad.max_len = 11;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("generate_log") {
  auto spec = SyntheticSpec::small();
  CHECK(generate_log(spec, 0, BehaviorPolicy::uniform).empty());
  const auto a = generate_log(spec, 200, BehaviorPolicy::affinity_proportional);
  CHECK(a == generate_log(spec, 200, BehaviorPolicy::affinity_proportional));
  spec.seed = 2;
  CHECK(a != generate_log(spec, 200, BehaviorPolicy::affinity_proportional));
  spec.purchase_threshold = 0.9;
  for (const auto& e : generate_log(spec, 200, BehaviorPolicy::uniform)) CHECK(e.behavior == Interaction::click);
}

namespace {

// Purchase share of all events, by forward propagation of the item chain.
double purchase_share(const SyntheticSpec& spec) {
  double buys = 0, events = 0;
  for (std::size_t u = 0; u < spec.n_user_types; ++u) {
    std::vector<double> dist(spec.affinity[u]);
    double alive = 1.0;
    for (std::size_t pos = 1; pos <= spec.max_len; ++pos) {
      if (pos > spec.min_len) alive *= 1.0 - spec.end_prob;
      for (std::size_t a = 0; a < spec.n_items; ++a) {
        events += alive * dist[a];
        if (spec.affinity[u][a] >= spec.purchase_threshold) buys += alive * dist[a];
      }
      std::vector<double> next(spec.n_items, 0.0);
      for (std::size_t prev = 0; prev < spec.n_items; ++prev) {
        double z = 0;
        for (std::size_t a = 0; a < spec.n_items; ++a) z += spec.affinity[u][a] * (a == prev ? spec.repeat_factor : 1.0);
        for (std::size_t a = 0; a < spec.n_items; ++a)
          next[a] += dist[prev] * spec.affinity[u][a] * (a == prev ? spec.repeat_factor : 1.0) / z;
      }
      dist = next;
    }
  }
  return buys / events;
}

}  // namespace

TEST_CASE("purchase fraction matches the analytic share") {
  for (const auto& spec : {SyntheticSpec::small(), SyntheticSpec::medium()}) {
    const double p = purchase_share(spec);
    CHECK(expected_purchase_fraction(spec, BehaviorPolicy::affinity_proportional) == doctest::Approx(p).epsilon(1e-12));

    const auto log = generate_log(spec, 10000, BehaviorPolicy::affinity_proportional);
    std::map<std::string, std::pair<double, double>> per;  // session -> (buys, events)
    double buys = 0;
    for (const auto& e : log) {
      auto& s = per[e.session_id];
      s.second += 1;
      if (e.behavior == Interaction::purchase) {
        s.first += 1;
        buys += 1;
      }
    }
    const double n = double(per.size());
    const double frac = buys / double(log.size());
    const double mean_len = double(log.size()) / n;
    // ratio-estimator standard error; events within a session share a user
    double var = 0;
    for (const auto& [_, s] : per) var += std::pow(s.first - p * s.second, 2);
    const double sigma = std::sqrt(var / (n - 1) / n) / mean_len;
    CHECK(std::abs(frac - p) <= 3 * sigma);
  }
}

namespace {

TabularMdp chain_mdp(double r0, double r1) {
  // state 0 --item 0--> state 1 --item 1--> end
  TabularMdp m;
  m.n_states = 2;
  m.n_actions = 2;
  m.outcomes.assign(4, {});
  m.available.assign(4, false);
  m.outcomes[0 * 2 + 0] = {{1.0, r0, 1}};
  m.available[0] = true;
  m.outcomes[1 * 2 + 1] = {{1.0, r1, -1}};
  m.available[3] = true;
  return m;
}

}  // namespace

TEST_CASE("value iteration hand cases") {
  const auto q = value_iteration(chain_mdp(1, 1), 0.5, 100);
  CHECK(q.at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(q.at(1, 1) == 1.0);
  const auto z = value_iteration(chain_mdp(0, 0), 0.5, 100);
  CHECK(z.max_abs() == 0.0);
  const auto myopic = value_iteration(chain_mdp(0.3, 0.7), 0.0, 100);
  CHECK(myopic.at(0, 0) == 0.3);
  CHECK(myopic.at(1, 1) == 0.7);

  TabularMdp big;
  big.n_states = kMaxOracleStates + 1;
  big.n_actions = 1;
  CHECK_THROWS_AS(big.validate(), std::length_error);
}

TEST_CASE("synthetic oracle") {
  RewardConfig rc;
  const auto spec = SyntheticSpec::small();
  for (std::size_t neg : {0, 2, 4}) {
    const auto o = build_oracle(spec, BehaviorPolicy::affinity_proportional, rc, neg);
    CHECK(o.q.sweep_deltas.back() < 1e-10);
    for (std::size_t i = 2; i < o.q.sweep_deltas.size(); ++i) CHECK(o.q.sweep_deltas[i] <= o.q.sweep_deltas[i - 1]);
    CHECK(o.q.max_abs() <= rc.r_max() / (1 - rc.gamma));
    for (const auto& s : o.states) CHECK(s.history.size() <= 2);
  }
  auto zero = rc;
  zero.gamma = 0;
  const auto o = build_oracle(spec, BehaviorPolicy::affinity_proportional, zero, 0);
  // without negatives every update is an acceptance: Q* = r(u, a)
  for (std::size_t s = 0; s < o.states.size(); ++s)
    for (std::size_t a = 0; a < spec.n_items; ++a)
      CHECK(o.q.at(s, a) == (spec.affinity[o.states[s].user][a] >= spec.purchase_threshold ? 1.0 : 0.2));
  CHECK_THROWS(build_oracle(spec, BehaviorPolicy::uniform, rc, 5));
}

TEST_CASE("oracle agrees with the certainty-equivalent model of a large log") {
  const auto spec = SyntheticSpec::small();
  RewardConfig rc;
  const std::size_t neg = 4;
  const auto oracle = build_oracle(spec, BehaviorPolicy::affinity_proportional, rc, neg);
  PreprocessConfig pre;
  pre.seed = 1;
  const auto ds = simulate_dataset(spec, "small", 40000, BehaviorPolicy::affinity_proportional, pre);

  // counts keyed by (user, last <= 2 items)
  using Key = std::pair<std::size_t, std::vector<int>>;
  struct Counts {
    double n = 0;
    std::vector<double> taken, ends;
  };
  std::map<Key, Counts> c;
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    const auto& s = ds.sessions[i];
    const std::size_t user = static_cast<std::size_t>(s.id[1] - '0');
    std::vector<int> items;
    for (auto id : s.items) items.push_back(std::stoi(ds.vocab[static_cast<std::size_t>(id)]));
    for (std::size_t t = 1; t < items.size(); ++t) {
      Key k{user, std::vector<int>(items.begin() + static_cast<std::ptrdiff_t>(t >= 2 ? t - 2 : 0), items.begin() + static_cast<std::ptrdiff_t>(t))};
      auto& e = c[k];
      if (e.taken.empty()) {
        e.taken.assign(spec.n_items, 0);
        e.ends.assign(spec.n_items, 0);
      }
      e.n += 1;
      e.taken[static_cast<std::size_t>(items[t])] += 1;
      if (t + 1 == items.size()) e.ends[static_cast<std::size_t>(items[t])] += 1;
    }
  }
  std::map<Key, std::vector<double>> q;
  for (const auto& [k, _] : c) q[k].assign(spec.n_items, 0.0);
  const double rate = double(neg) / double(spec.n_items - 1);
  auto value = [&](const Key& k) {
    auto it = q.find(k);
    return it == q.end() ? 0.0 : *std::max_element(it->second.begin(), it->second.end());
  };
  for (int sweep = 0; sweep < 200; ++sweep) {
    auto next = q;
    for (const auto& [k, e] : c) {
      for (std::size_t a = 0; a < spec.n_items; ++a) {
        const double b = e.taken[a] / e.n;
        const double acc = b / (b + (1 - b) * rate);
        const double end = e.taken[a] > 0 ? e.ends[a] / e.taken[a] : 0.0;
        const double r = spec.affinity[k.first][a] >= spec.purchase_threshold ? rc.r_purchase : rc.r_click;
        Key nk{k.first, {k.second.back(), static_cast<int>(a)}};
        next[k][a] = acc * (r + rc.gamma * (1 - end) * value(nk)) + (1 - acc) * (rc.r_negative + rc.gamma * value(k));
      }
    }
    q = next;
  }
  std::size_t compared = 0;
  for (const auto& [k, e] : c) {
    if (e.n < 3000) continue;
    const auto found = oracle.index.find(OracleState{k.first, k.second});
    REQUIRE(found != oracle.index.end());
    for (std::size_t a = 0; a < spec.n_items; ++a) {
      CHECK(std::abs(q[k][a] - oracle.q.at(found->second, a)) < 0.02);
      ++compared;
    }
  }
  CHECK(compared >= 40);
}

TEST_CASE("identify_user and item map") {
  const auto spec = SyntheticSpec::small();
  CHECK(identify_user(spec, {0, 2}) == 0);
  CHECK(identify_user(spec, {3}) == 1);
  CHECK(identify_user(spec, {0, 3}) == -1);
  const auto med = SyntheticSpec::medium();
  CHECK(identify_user(med, {8}) == -1);  // shared by users 0 and 1
  CHECK(identify_user(med, {8, 2}) == 0);
}

TEST_CASE("compare_q") {
  const auto spec = SyntheticSpec::small();
  RewardConfig rc;
  const auto oracle = build_oracle(spec, BehaviorPolicy::affinity_proportional, rc, 4);
  PreprocessConfig pre;
  pre.seed = 1;
  const auto ds = simulate_dataset(spec, "small", 500, BehaviorPolicy::affinity_proportional, pre);
  const auto vmap = synthetic_item_map(ds, spec);
  const std::size_t s0 = oracle.index.at(OracleState{0, {0}});
  std::vector<VisitedPair> pairs;
  for (int a = 0; a < 5; ++a) pairs.push_back({s0, a, 100});

  Network<float> zero(ds.n_items());
  const auto dz = compare_q(zero, oracle, pairs, vmap);
  double want = 0;
  for (int a = 0; a < 5; ++a) want = std::max(want, std::abs(oracle.q.at(s0, static_cast<std::size_t>(a))));
  CHECK(dz.max_abs == doctest::Approx(want).epsilon(1e-6));

  // a head whose bias is Q* of the one compared state
  Network<float> exact(ds.n_items());
  for (std::size_t v = 0; v < vmap.size(); ++v)
    exact.store().get("head.q.bias").value[v] = static_cast<float>(oracle.q.at(s0, static_cast<std::size_t>(vmap[v])));
  const auto de = compare_q(exact, oracle, pairs, vmap);
  CHECK(de.max_abs < 1e-6);
  CHECK(de.pairs.size() == 5);
}

TEST_CASE("visits count positives and sampled negatives of short windows") {
  const auto spec = SyntheticSpec::small();
  RewardConfig rc;
  const auto oracle = build_oracle(spec, BehaviorPolicy::affinity_proportional, rc, 2);
  PreprocessConfig pre;
  const auto ds = simulate_dataset(spec, "small", 300, BehaviorPolicy::affinity_proportional, pre);
  const auto vmap = synthetic_item_map(ds, spec);
  BatchStream stream(ds, Split::train, rc, 64, 2, 1);
  const auto batches = stream.epoch_batches(0);
  std::size_t short_windows = 0;
  for (const auto& b : batches)
    for (const auto& it : b) short_windows += it.state.valid_len <= 2;
  const auto pairs = count_visits(oracle, batches, vmap, 1);
  std::size_t total = 0;
  for (const auto& p : pairs) total += p.visits;
  CHECK(total == 3 * short_windows);
  const auto frequent = count_visits(oracle, batches, vmap, 50);
  for (const auto& p : frequent) CHECK(p.visits >= 50);
  CHECK(frequent.size() < pairs.size());
}

TEST_CASE("simulated datasets remember their generator") {
  PreprocessConfig pre;
  const auto ds = simulate_dataset(SyntheticSpec::medium(), "medium", 50, BehaviorPolicy::uniform, pre);
  const auto origin = synthetic_origin(ds);
  REQUIRE(origin.has_value());
  CHECK(origin->spec.n_items == 30);
  CHECK(origin->behavior == BehaviorPolicy::uniform);
  ReplayDataset plain;
  CHECK_FALSE(synthetic_origin(plain).has_value());
}

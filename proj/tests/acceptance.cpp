// Acceptance run: one PASS/FAIL line per criterion.
// Exits 0 once every criterion has been evaluated; --strict exits 1 if any failed.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "snqn/evaluation.hpp"
#include "snqn/rng.hpp"
#include "snqn/synthetic.hpp"
#include "snqn/training.hpp"

using namespace snqn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void gradients() {
  const auto t0 = Clock::now();
  GradcheckOptions opts;  // 200 probes
  double worst = 0;
  std::string where;
  for (auto mode : {TrainMode::supervised_only, TrainMode::snqn, TrainMode::sa2c, TrainMode::sa2c_offpolicy})
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto r = gradcheck_mode(mode, seed, opts);
      if (r.report.max_rel_error >= worst) {
        worst = r.report.max_rel_error;
        where = std::string(to_string(mode)) + " seed " + std::to_string(seed) + " " + r.report.worst_param;
      }
    }
  const double t = seconds_since(t0);
  report(1, worst < 1e-4 && t < 60, fmt("max rel error %.2e (%s), 4 modes x 3 seeds x %zu probes, %.1fs", worst, where.c_str(), opts.probes, t));
}

struct OracleRun {
  OracleCheck check;
  double seconds = 0;
};

// 5 items, 2 user types, gamma 0.5, r_c 0.2, r_p 1.0, 5k sessions
OracleRun oracle_run() {
  const auto t0 = Clock::now();
  const auto spec = SyntheticSpec::small();
  PreprocessConfig pre;
  const auto ds = simulate_dataset(spec, "small", 5000, BehaviorPolicy::affinity_proportional, pre);
  TrainingConfig cfg;
  cfg.mode = TrainMode::snqn;
  cfg.batch_size = 1024;
  cfg.learning_rate_main = 3e-4;
  cfg.neg_samples = 4;
  cfg.max_steps = 2500;
  cfg.eval_every = 0;
  cfg.seed = 1;
  const auto res = run_training(cfg, ds);
  OracleRun r;
  r.check = oracle_check(res.nets.net1, ds, {spec, BehaviorPolicy::affinity_proportional}, cfg.rewards,
                         cfg.batch_size, cfg.neg_samples, cfg.seed, 50);
  r.seconds = seconds_since(t0);
  return r;
}

void oracle_equivalence(const OracleRun& r, const SyntheticSpec& spec) {
  const QDeviation::Pair* worst = nullptr;
  for (const auto& p : r.check.deviation.pairs)
    if (!worst || std::abs(p.learned - p.oracle) > std::abs(worst->learned - worst->oracle)) worst = &p;
  std::string w = "none";
  if (worst) {
    const auto oracle = build_oracle(spec, BehaviorPolicy::affinity_proportional, RewardConfig{}, 4);
    w = describe(oracle.states[worst->state]) + " a=" + std::to_string(worst->action) +
        fmt(" learned %.3f oracle %.3f visits %zu", worst->learned, worst->oracle, worst->visits);
  }
  report(2, r.check.n_pairs > 0 && r.check.deviation.max_abs < 0.05 && r.seconds < 600,
         fmt("max |Q - Q*| = %.4f over %zu pairs with >= 50 visits, 2500 steps, %.0fs; worst %s", r.check.deviation.max_abs,
             r.check.n_pairs, r.seconds, w.c_str()));
}

void metric_exactness() {
  MetricsAccumulator rank3({5});
  rank3.add(Interaction::purchase, std::vector<ItemId>{3, 1, 7, 2, 0}, 7, 0.2);
  const double ndcg3 = rank3.finish("q").ndcg(Interaction::purchase, 5);

  MetricsAccumulator hits({5});
  const std::vector<ItemId> recs{10, 11, 12, 13, 14};
  for (ItemId t : {10, 12, 14, 99}) hits.add(Interaction::click, recs, t, 0.1);
  const double hr = hits.finish("q").hr(Interaction::click, 5);

  MetricsAccumulator uni({5, 10, 20});
  auto rng = make_rng(1, "acceptance.metrics");
  for (int e = 0; e < 1000; ++e) {
    std::vector<ItemId> l(20);
    std::iota(l.begin(), l.end(), 0);
    std::shuffle(l.begin(), l.end(), rng);
    uni.add(Interaction::click, l, static_cast<ItemId>(uniform_index(rng, 40)), 1.0 / 40);
  }
  const auto m = uni.finish("supervised");
  double gap = 0;
  for (std::size_t k : {5, 10, 20}) gap = std::max(gap, std::abs(m.ng_off(Interaction::click, k) - m.ndcg(Interaction::click, k)));
  report(3, ndcg3 == 0.5 && hr == 0.75 && gap < 1e-9,
         fmt("rank-3 NDCG %.17g, 3/4 HR %.17g, uniform NG_off - NDCG %.1e", ndcg3, hr, gap));
}

struct Scores {
  double sup_hr5_p, sup_ndcg5_p, q_hr5_p;
};

Scores train_and_score(const ReplayDataset& ds, TrainMode mode, std::size_t neg, std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.mode = mode;
  cfg.neg_samples = neg;
  cfg.seed = seed;
  cfg.batch_size = 256;
  cfg.max_steps = 2000;
  cfg.learning_rate_main = 5e-3;
  cfg.pretrain_steps = 1000;
  cfg.learning_rate_post_pretrain = 5e-4;
  cfg.eval_every = 0;
  const auto res = run_training(cfg, ds);
  const auto policy = ItemFrequencyPolicy::from_dataset(ds);
  EvalOptions o;
  o.ks = {5};
  const auto sup = evaluate(res.nets.net1, ds, Split::test, policy, o);
  o.head = Head::q;
  const auto q = evaluate(res.nets.net1, ds, Split::test, policy, o);
  return {sup.hr(Interaction::purchase, 5), sup.ndcg(Interaction::purchase, 5), q.hr(Interaction::purchase, 5)};
}

void directional() {
  const auto t0 = Clock::now();
  PreprocessConfig pre;
  const auto ds = simulate_dataset(SyntheticSpec::medium(), "medium", 10000, BehaviorPolicy::affinity_proportional, pre);
  int c4a = 0, c4b = 0, c5 = 0, c6 = 0;
  std::string s4a, s4b, s5, s6;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto sup = train_and_score(ds, TrainMode::supervised_only, 10, seed);
    const auto snqn = train_and_score(ds, TrainMode::snqn, 10, seed);
    const auto snqn0 = train_and_score(ds, TrainMode::snqn, 0, seed);
    const auto sa2c = train_and_score(ds, TrainMode::sa2c, 10, seed);
    const auto dqn = train_and_score(ds, TrainMode::dqn, 10, seed);
    c4a += snqn.sup_hr5_p > sup.sup_hr5_p;
    c4b += snqn.sup_ndcg5_p > snqn0.sup_ndcg5_p;
    c5 += sa2c.sup_ndcg5_p >= snqn.sup_ndcg5_p;
    c6 += snqn.q_hr5_p > dqn.q_hr5_p;
    s4a += fmt(" %.4f/%.4f", snqn.sup_hr5_p, sup.sup_hr5_p);
    s4b += fmt(" %.4f/%.4f", snqn.sup_ndcg5_p, snqn0.sup_ndcg5_p);
    s5 += fmt(" %.4f/%.4f", sa2c.sup_ndcg5_p, snqn.sup_ndcg5_p);
    s6 += fmt(" %.4f/%.4f", snqn.q_hr5_p, dqn.q_hr5_p);
  }
  const double t = seconds_since(t0);
  report(4, c4a >= 2 && c4b >= 2 && t < 1800,
         fmt("HR@5(p) SNQN/supervised%s wins %d/3; NDCG@5(p) 10 neg/0 neg%s wins %d/3; %.0fs", s4a.c_str(), c4a,
             s4b.c_str(), c4b, t));
  report(5, c5 >= 2, fmt("NDCG@5(p) SA2C/SNQN%s wins %d/3", s5.c_str(), c5));
  report(6, c6 >= 2, fmt("Q-head HR@5(p) SNQN/DQN%s wins %d/3", s6.c_str(), c6));
}

void bounded_q(const OracleRun& r) {
  report(7, r.check.deviation.max_learned <= 2.1,
         fmt("max visited Q = %.4f (bound 2.1)", r.check.deviation.max_learned));
}

std::uint64_t digest(const DualNetworks& n) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* net : {&n.net1, &n.net2})
    for (const auto& [_, p] : net->store().entries())
      for (float x : p.value.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        h = (h ^ bits) * 1099511628211ull;
      }
  return h;
}

void lattice() {
  PreprocessConfig pre;
  const auto ds = simulate_dataset(SyntheticSpec::small(), "small", 1000, BehaviorPolicy::affinity_proportional, pre);
  auto trajectory = [&](TrainMode mode) {
    TrainingConfig cfg;
    cfg.mode = mode;
    cfg.pretrain_steps = std::numeric_limits<std::uint64_t>::max();
    cfg.max_steps = 500;
    cfg.batch_size = 64;
    cfg.neg_samples = 4;
    cfg.eval_every = 0;
    std::vector<std::uint64_t> d;
    TrainingHooks hooks;
    hooks.on_step = [&](std::uint64_t, const DualNetworks& n, const StepStats&) { d.push_back(digest(n)); };
    run_training(cfg, ds, hooks);
    return d;
  };
  const auto a = trajectory(TrainMode::snqn), b = trajectory(TrainMode::sa2c);
  std::size_t first_diff = a.size();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (i >= b.size() || a[i] != b[i]) {
      first_diff = i;
      break;
    }
  report(8, a.size() == 500 && b.size() == 500 && first_diff == 500,
         first_diff == 500 ? "500 steps bitwise identical (both networks)" : fmt("diverged at step %zu", first_diff + 1));
}

void determinism() {
  PreprocessConfig pre;
  pre.seed = 5;
  auto run = [&] {
    const auto ds = simulate_dataset(SyntheticSpec::medium(), "medium", 1500, BehaviorPolicy::affinity_proportional, pre);
    TrainingConfig cfg;
    cfg.mode = TrainMode::sa2c;
    cfg.max_steps = 300;
    cfg.pretrain_steps = 150;
    cfg.eval_every = 100;
    cfg.seed = 11;
    const auto res = run_training(cfg, ds);
    return evaluate(res.best, ds, Split::test, ItemFrequencyPolicy::from_dataset(ds), EvalOptions{}).to_json();
  };
  const auto a = run(), b = run();
  report(10, a == b, a == b ? "train + evaluate twice: identical metrics JSON" : "metrics JSON differs between runs");
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const auto t0 = Clock::now();
  gradients();
  const auto oracle = oracle_run();
  oracle_equivalence(oracle, SyntheticSpec::small());
  metric_exactness();
  directional();
  bounded_q(oracle);
  lattice();
  std::printf("criterion  9: SKIP  optional full-scale RC15 comparison, off by default\n");
  determinism();
  std::printf("%d of 9 evaluated criteria failed, %.0fs total\n", failures, seconds_since(t0));
  return strict && failures > 0 ? 1 : 0;
}

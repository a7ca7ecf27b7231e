#include "snqn/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <ostream>

#include <json.hpp>

namespace snqn {

TrainMode parse_mode(const std::string& name) {
  std::string n;
  for (char c : name) n.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (n == "supervised_only" || n == "supervised") return TrainMode::supervised_only;
  if (n == "snqn") return TrainMode::snqn;
  if (n == "sa2c") return TrainMode::sa2c;
  if (n == "sa2c_offpolicy") return TrainMode::sa2c_offpolicy;
  if (n == "dqn") return TrainMode::dqn;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected supervised_only, SNQN, SA2C, SA2C_offpolicy or DQN)");
}

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::supervised_only: return "supervised_only";
    case TrainMode::snqn: return "SNQN";
    case TrainMode::sa2c: return "SA2C";
    case TrainMode::sa2c_offpolicy: return "SA2C_offpolicy";
    case TrainMode::dqn: return "DQN";
  }
  return "?";
}

void TrainingConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate_main > 0) || !(learning_rate_post_pretrain > 0))
    throw std::invalid_argument("learning rates must be positive");
  if (log_every == 0) throw std::invalid_argument("log_every must be positive");
  if (!(rho_cap > 0)) throw std::invalid_argument("rho_cap must be positive");
  if (!(init_scale > 0)) throw std::invalid_argument("init_scale must be positive");
  if (mode != TrainMode::supervised_only) rewards.validate();
}

DualNetworks DualNetworks::initialized(std::size_t n_items, std::uint64_t seed, double scale) {
  DualNetworks d{Network<float>(n_items), Network<float>(n_items)};
  auto r1 = make_rng(seed, "init.net1");
  auto r2 = make_rng(seed, "init.net2");
  init_uniform(d.net1.store(), r1, scale, &Network<float>::is_bias);
  init_uniform(d.net2.store(), r2, scale, &Network<float>::is_bias);
  return d;
}

void DualNetworks::save(const std::string& path) const {
  ParameterStore<float> merged;
  for (const auto* net : {&net1, &net2}) {
    const std::string prefix = net == &net1 ? "net1/" : "net2/";
    for (const auto& [name, p] : net->store().entries()) merged.add(prefix + name, p.value.dims()).value = p.value;
  }
  save_checkpoint(path, merged);
}

DualNetworks DualNetworks::load(const std::string& path) {
  auto store = load_checkpoint(path);
  if (!store.contains("net1/head.q.bias")) {
    auto net = Network<float>::from_store(std::move(store));
    return {net, net};
  }
  ParameterStore<float> s1, s2;
  for (const auto& [name, p] : store.entries()) {
    if (name.starts_with("net1/")) s1.add(name.substr(5), p.value.dims()).value = p.value;
    else if (name.starts_with("net2/")) s2.add(name.substr(5), p.value.dims()).value = p.value;
    else throw std::runtime_error("unexpected checkpoint entry '" + name + "'");
  }
  return {Network<float>::from_store(std::move(s1)), Network<float>::from_store(std::move(s2))};
}

StepPlan plan_step(const TrainingConfig& cfg, std::uint64_t step_index,
                   std::span<const double> behavior) {
  StepPlan p;
  p.settings.rewards = cfg.rewards;
  p.settings.rho_cap = cfg.rho_cap;
  p.learning_rate = cfg.learning_rate_main;
  const bool pretraining = step_index < cfg.pretrain_steps;
  switch (cfg.mode) {
    case TrainMode::supervised_only:
      p.settings.q_learning = false;
      p.coin = false;
      break;
    case TrainMode::snqn:
      break;
    case TrainMode::sa2c:
      if (!pretraining) {
        p.settings.actor = ActorWeight::advantage;
        p.learning_rate = cfg.learning_rate_post_pretrain;
      }
      break;
    case TrainMode::sa2c_offpolicy:
      if (!pretraining) {
        p.settings.actor = ActorWeight::advantage_propensity;
        p.settings.behavior = behavior;
        p.learning_rate = cfg.learning_rate_post_pretrain;
      }
      break;
    case TrainMode::dqn:
      p.settings.supervised = false;
      break;
  }
  return p;
}

StepStats train_step(DualNetworks& nets, std::span<const TDBatchItem> batch,
                     const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng,
                     std::span<const double> behavior) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const auto plan = plan_step(cfg, step_index, behavior);
  bool first = true;
  if (plan.coin) {
    double z = uniform_open01(coin_rng);
    if (cfg.complement_coin) z = 1.0 - z;
    first = z <= 0.5;
  }
  Network<float>& online = first ? nets.net1 : nets.net2;
  const Network<float>& target = first ? nets.net2 : nets.net1;
  const auto r = batch_objective(online, target, batch, plan.settings, true);
  StepStats st;
  st.step = step_index + 1;
  st.updated = first ? 1 : 2;
  st.l_s = r.l_s;
  st.l_p = r.l_p;
  st.l_n = r.l_n;
  st.a_mean = r.a_mean;
  st.rho_mean = r.rho_mean;
  st.total = r.total;
  if (!std::isfinite(r.total)) {
    online.store().zero_grad();
    throw TrainingError("non-finite loss at step " + std::to_string(step_index + 1) +
                        " (worst batch item " + std::to_string(r.worst_item) + ", loss " +
                        std::to_string(r.worst_loss) + ")");
  }
  AdamConfig adam;
  adam.learning_rate = plan.learning_rate;
  try {
    adam_step(online.store(), adam);
  } catch (const NonFiniteGradient& e) {
    online.store().zero_grad();
    throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step_index + 1) +
                        " (worst batch item " + std::to_string(r.worst_item) + ")");
  }
  return st;
}

StepStats train_step_snqn(DualNetworks& nets, std::span<const TDBatchItem> batch,
                          const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng) {
  TrainingConfig c = cfg;
  c.mode = TrainMode::snqn;
  return train_step(nets, batch, c, step_index, coin_rng);
}

StepStats train_step_sa2c(DualNetworks& nets, std::span<const TDBatchItem> batch,
                          const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng,
                          std::span<const double> behavior) {
  TrainingConfig c = cfg;
  if (c.mode != TrainMode::sa2c_offpolicy) c.mode = TrainMode::sa2c;
  return train_step(nets, batch, c, step_index, coin_rng, behavior);
}

Head selection_head(TrainMode mode) { return mode == TrainMode::dqn ? Head::q : Head::supervised; }

namespace {

EvalOptions validation_options(TrainMode mode, std::size_t n_items) {
  EvalOptions o;
  o.head = selection_head(mode);
  o.ks.clear();
  for (std::size_t k : {5, 10, 20})
    if (k <= n_items) o.ks.push_back(k);
  if (o.ks.empty()) o.ks.push_back(n_items);
  return o;
}

double selection_metric(const MetricsReport& r) {
  const std::size_t k = std::find(r.ks.begin(), r.ks.end(), 10) != r.ks.end() ? 10 : r.ks.back();
  const auto t = r.of(Interaction::purchase).events > 0 ? Interaction::purchase : Interaction::click;
  return r.ndcg(t, k);
}

}  // namespace

TrainingResult run_training(const TrainingConfig& cfg, const ReplayDataset& ds,
                            const TrainingHooks& hooks, std::optional<DualNetworks> init) {
  cfg.validate();
  if (ds.sessions.empty() || ds.n_items() < 2)
    throw std::invalid_argument("training needs a non-empty dataset with at least two items");
  TrainingResult res{init ? std::move(*init) : DualNetworks::initialized(ds.n_items(), cfg.seed, cfg.init_scale),
                     {}, 0, -1.0, 0, {}, {}};
  if (res.nets.n_items() != ds.n_items())
    throw std::invalid_argument("initial networks do not match the dataset item count");
  res.best = res.nets.net1;
  if (cfg.max_steps == 0) return res;

  BatchStream stream(ds, Split::train, cfg.rewards, cfg.batch_size, cfg.neg_samples, cfg.seed);
  const auto policy = ItemFrequencyPolicy::from_dataset(ds);
  auto coin = make_rng(cfg.seed, "coin");
  std::uint64_t total = cfg.max_steps;
  if (cfg.max_epochs > 0) total = std::min<std::uint64_t>(total, cfg.max_epochs * stream.batches_per_epoch());
  const bool validate = cfg.eval_every > 0 && !ds.sessions_in(Split::val).empty();
  const auto eval_opts = validation_options(cfg.mode, ds.n_items());

  std::vector<TDBatchItem> batch;
  for (std::uint64_t s = 0; s < total; ++s) {
    stream.next(batch);
    const auto st = train_step(res.nets, batch, cfg, s, coin, policy.beta);
    res.history.push_back(st);
    res.steps = s + 1;
    if (hooks.log && ((s + 1) % cfg.log_every == 0 || s + 1 == total)) {
      nlohmann::ordered_json j;
      j["step"] = st.step;
      j["net"] = st.updated;
      j["L_s"] = st.l_s;
      j["L_p"] = st.l_p;
      j["L_n"] = st.l_n;
      j["A_mean"] = st.a_mean;
      if (cfg.mode == TrainMode::sa2c_offpolicy) j["rho_mean"] = st.rho_mean;
      *hooks.log << j.dump() << '\n';
    }
    if (hooks.on_step) hooks.on_step(s + 1, res.nets, st);
    if (validate && (s + 1) % cfg.eval_every == 0) {
      ValidationRecord v;
      v.step = s + 1;
      v.report = evaluate(res.nets.net1, ds, Split::val, policy, eval_opts);
      v.purchase_ndcg10 = selection_metric(v.report);
      if (v.purchase_ndcg10 > res.best_metric) {
        res.best_metric = v.purchase_ndcg10;
        res.best_step = v.step;
        res.best = res.nets.net1;
      }
      if (hooks.log) {
        nlohmann::ordered_json j;
        j["step"] = v.step;
        j["selection_metric"] = v.purchase_ndcg10;
        j["val"] = nlohmann::ordered_json::parse(v.report.to_json(-1));
        *hooks.log << j.dump() << '\n';
      }
      res.validations.push_back(std::move(v));
    }
  }
  if (res.validations.empty()) {
    res.best = res.nets.net1;
    res.best_step = res.steps;
  }
  return res;
}

GradcheckResult gradcheck_mode(TrainMode mode, std::uint64_t seed, const GradcheckOptions& opts) {
  const std::size_t N = opts.n_items;
  auto rng = make_rng(seed, "gradcheck.init");
  Network<double> online(N), target(N);
  init_uniform(online.store(), rng, opts.init_scale, &Network<double>::is_bias);
  init_uniform(target.store(), rng, opts.init_scale, &Network<double>::is_bias);
  // Non-zero biases so their gradients are exercised.
  for (auto* net : {&online, &target})
    for (auto& [name, p] : net->store().entries())
      if (Network<double>::is_bias(name))
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = opts.init_scale * (2.0 * uniform01(rng) - 1.0);

  RewardConfig rewards;
  std::vector<TDBatchItem> batch;
  const auto pad = static_cast<ItemId>(N);
  for (std::size_t b = 0; b < opts.batch; ++b) {
    const std::size_t len = 1 + uniform_index(rng, 3);
    std::vector<ItemId> hist;
    for (std::size_t t = 0; t < len; ++t) hist.push_back(static_cast<ItemId>(uniform_index(rng, N)));
    TDBatchItem it;
    it.state = SessionSequence::from_history(hist, {}, pad);
    it.positive = static_cast<ItemId>(uniform_index(rng, N));
    hist.push_back(it.positive);
    it.next_state = SessionSequence::from_history(hist, {}, pad);
    it.target_type = uniform01(rng) < 0.3 ? Interaction::purchase : Interaction::click;
    it.reward = rewards.reward_for(it.target_type);
    it.is_terminal = uniform01(rng) < 0.3;
    it.negatives = sample_negatives(it.positive, opts.neg_samples, N, rng);
    batch.push_back(std::move(it));
  }
  std::vector<double> behavior(N);
  double sum = 0.0;
  for (auto& x : behavior) sum += (x = 0.05 + uniform01(rng));
  for (auto& x : behavior) x /= sum;

  TrainingConfig cfg;
  cfg.mode = mode;
  cfg.pretrain_steps = 0;  // the SA2C modes are checked on their post-pretraining loss
  const auto plan = plan_step(cfg, 0, behavior);

  FrozenTerms frozen;
  batch_objective(online, target, std::span<const TDBatchItem>(batch), plan.settings, false, nullptr, &frozen);
  online.store().zero_grad();
  if (!opts.corrupt.empty() && !online.store().contains(opts.corrupt))
    throw std::invalid_argument("unknown parameter '" + opts.corrupt + "'");

  auto loss = [&](bool with_grad) {
    if (with_grad) online.store().zero_grad();
    const auto r = batch_objective(online, target, std::span<const TDBatchItem>(batch), plan.settings,
                                   with_grad, &frozen);
    if (with_grad && !opts.corrupt.empty()) {
      auto& g = online.store().get(opts.corrupt).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1e-3 + 0.5 * std::abs(g[i]);
    }
    return r.total;
  };
  GradcheckResult out{mode, seed, {}};
  out.report = finite_diff_check(loss, online.store(), opts.h, opts.probes, derive_seed(seed, "gradcheck.probes"));
  return out;
}

}  // namespace snqn

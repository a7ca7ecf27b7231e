#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "snqn/data.hpp"
#include "snqn/evaluation.hpp"
#include "snqn/network.hpp"
#include "snqn/objective.hpp"

namespace snqn {

enum class TrainMode { supervised_only, snqn, sa2c, sa2c_offpolicy, dqn };
TrainMode parse_mode(const std::string& name);
const char* to_string(TrainMode m);

struct TrainingConfig {
  TrainMode mode = TrainMode::snqn;
  std::size_t batch_size = 256;
  double learning_rate_main = 0.01;
  double learning_rate_post_pretrain = 0.001;
  std::uint64_t pretrain_steps = 5000;  // T
  std::size_t neg_samples = 10;
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 10000;
  std::uint64_t max_epochs = 0;  // 0 = no epoch limit
  std::uint64_t log_every = 100;
  std::uint64_t eval_every = 2000;  // 0 disables validation
  double rho_cap = 10.0;
  double init_scale = 0.05;
  RewardConfig rewards;
  /// Flips every coin z to 1 - z (test hook for the double-Q symmetry).
  bool complement_coin = false;

  void validate() const;
};

/// net1 and the copy net2 of double Q-learning. Both are trained; net1 serves.
struct DualNetworks {
  Network<float> net1;
  Network<float> net2;

  static DualNetworks initialized(std::size_t n_items, std::uint64_t seed, double scale = 0.05);
  std::size_t n_items() const { return net1.n_items(); }
  /// Checkpoint holding both networks under "net1/" and "net2/".
  void save(const std::string& path) const;
  /// Loads a two-network checkpoint, or a single-network one into both slots.
  static DualNetworks load(const std::string& path);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepStats {
  std::uint64_t step = 0;
  int updated = 1;  // which network took the Adam step
  double l_s = 0.0, l_p = 0.0, l_n = 0.0, a_mean = 0.0, rho_mean = 0.0, total = 0.0;
};

/// Loss settings and learning rate for a given mode and step.
struct StepPlan {
  ObjectiveSettings settings;
  double learning_rate = 0.0;
  bool coin = true;
};
StepPlan plan_step(const TrainingConfig& cfg, std::uint64_t step_index,
                   std::span<const double> behavior);

/// One update. Draws the double-Q coin (except in supervised_only mode, which
/// always trains net1) and takes one Adam step on the chosen network.
StepStats train_step(DualNetworks& nets, std::span<const TDBatchItem> batch,
                     const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng,
                     std::span<const double> behavior = {});

/// SNQN step: coin, double-Q targets, L_s + L_p + L_n.
StepStats train_step_snqn(DualNetworks& nets, std::span<const TDBatchItem> batch,
                          const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng);
/// SNQN before pretrain_steps, then the advantage-weighted actor.
StepStats train_step_sa2c(DualNetworks& nets, std::span<const TDBatchItem> batch,
                          const TrainingConfig& cfg, std::uint64_t step_index, Rng& coin_rng,
                          std::span<const double> behavior = {});

struct TrainingHooks {
  std::ostream* log = nullptr;  // JSON lines
  /// Called after every step with the 1-based step count.
  std::function<void(std::uint64_t, const DualNetworks&, const StepStats&)> on_step;
};

struct ValidationRecord {
  std::uint64_t step = 0;
  double purchase_ndcg10 = 0.0;
  MetricsReport report;
};

struct TrainingResult {
  DualNetworks nets;
  Network<float> best;  // net1 at the best validation point (final when never validated)
  std::uint64_t best_step = 0;
  double best_metric = -1.0;
  std::uint64_t steps = 0;
  std::vector<StepStats> history;
  std::vector<ValidationRecord> validations;
};

/// Head used for validation: the Q head when the supervised head is disabled.
Head selection_head(TrainMode mode);

TrainingResult run_training(const TrainingConfig& cfg, const ReplayDataset& ds,
                            const TrainingHooks& hooks = {},
                            std::optional<DualNetworks> init = std::nullopt);

/// Finite-difference check of one loss mode on a toy batch in 64-bit.
struct GradcheckOptions {
  std::size_t n_items = 6;
  std::size_t batch = 4;
  std::size_t neg_samples = 2;
  std::size_t probes = 200;
  double h = 1e-4;
  double init_scale = 0.6;
  /// Name of a parameter whose analytic gradient is corrupted (fault injection).
  std::string corrupt;
};

struct GradcheckResult {
  TrainMode mode;
  std::uint64_t seed;
  GradCheckReport report;
};

GradcheckResult gradcheck_mode(TrainMode mode, std::uint64_t seed, const GradcheckOptions& opts);

}  // namespace snqn

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "snqn/network.hpp"
#include "snqn/types.hpp"

namespace snqn {

/// How the supervised cross-entropy enters the loss.
enum class ActorWeight {
  plain,                // L_s
  advantage,            // L_s * A
  advantage_propensity  // L_s * A * rho
};

struct ObjectiveSettings {
  bool supervised = true;  // include the supervised head's term
  bool q_learning = true;  // include L_p + L_n
  ActorWeight actor = ActorWeight::plain;
  RewardConfig rewards;
  double rho_cap = 10.0;
  /// Behavior probability per item; required for advantage_propensity.
  std::span<const double> behavior;
  /// Replaces the computed advantage (and rho, when set) with a constant.
  std::optional<double> fixed_advantage;
  std::optional<double> fixed_rho;
};

/// Stop-gradient quantities of one batch. Captured on one call and replayed
/// on another so finite differences see them as constants.
struct FrozenTerms {
  std::vector<ItemId> argmax_next;
  std::vector<ItemId> argmax_current;
  std::vector<double> boot_next;
  std::vector<double> boot_current;
  std::vector<double> advantage;
  std::vector<double> rho;
};

struct ObjectiveResult {
  double l_s = 0.0;     // mean unweighted cross-entropy
  double l_p = 0.0;     // mean positive TD loss
  double l_n = 0.0;     // mean negative TD loss
  double a_mean = 0.0;  // mean advantage (0 when not used)
  double rho_mean = 0.0;
  double total = 0.0;   // mean optimized loss
  std::size_t worst_item = 0;
  double worst_loss = 0.0;
};

/// Mean-reduced loss of `online` on a batch, with bootstrap values taken from
/// `target` (double Q-learning: online picks the argmax, target evaluates).
/// When accumulate_grad is set, gradients are added to online's grad buffers.
/// Bootstrap targets, advantages and propensities carry no gradient.
template <typename T>
ObjectiveResult batch_objective(Network<T>& online, const Network<T>& target,
                                std::span<const TDBatchItem> batch,
                                const ObjectiveSettings& settings, bool accumulate_grad,
                                const FrozenTerms* frozen = nullptr,
                                FrozenTerms* capture = nullptr);

}  // namespace snqn

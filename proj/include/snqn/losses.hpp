#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "snqn/types.hpp"

namespace snqn {

template <typename T>
struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<T> grad;  // p - onehot(target)
};

/// -log softmax(logits)[target], with its gradient w.r.t. the logits.
template <typename T>
CrossEntropyResult<T> cross_entropy(std::span<const T> logits, ItemId target);

/// Lowest index among the maxima.
template <typename T>
ItemId argmax(std::span<const T> values);

struct TdTerms {
  double l_p = 0.0;
  double l_n = 0.0;
  /// dL/dQ_pred(s_t, a) for the positive action (first) and each negative.
  std::vector<std::pair<ItemId, double>> dq;
};

/// Squared TD residuals with precomputed bootstrap values:
///   L_p = (r + gamma * boot_next - Q(s_t, a+))^2   (boot_next ignored when terminal)
///   L_n = sum_{a- in N} (r_n + gamma * boot_current - Q(s_t, a-))^2
template <typename T>
TdTerms td_terms(std::span<const T> q_pred, ItemId positive, std::span<const ItemId> negatives,
                 double reward, bool terminal, double boot_next, double boot_current,
                 const RewardConfig& rewards);

/// Q rows of the two networks. The updated (online) network picks the argmax,
/// the other network supplies its value (double Q-learning).
template <typename T>
struct TdInputs {
  std::span<const T> q_online_t;
  std::span<const T> q_online_next;  // may be empty when terminal
  std::span<const T> q_target_t;
  std::span<const T> q_target_next;  // may be empty when terminal
};

template <typename T>
struct TdLoss {
  TdTerms terms;
  ItemId argmax_next = -1;
  ItemId argmax_current = -1;
};

template <typename T>
TdLoss<T> td_loss(const TdInputs<T>& in, const TDBatchItem& item, const RewardConfig& rewards);

inline double snqn_loss(double l_s, double l_p, double l_n) { return l_s + l_p + l_n; }

/// A = Q(a+) - mean of Q over {a+} and the negatives. Q values are constants.
template <typename T>
double advantage(std::span<const T> q, ItemId positive, std::span<const ItemId> negatives);

inline double sa2c_loss(double l_s, double advantage, double l_p, double l_n) {
  return l_s * advantage + l_p + l_n;
}

inline double off_policy_actor_loss(double l_s, double advantage, double rho) {
  return l_s * advantage * rho;
}

/// rho = pi / beta clipped to [0, cap]; beta == 0 is an error.
inline double propensity(double pi, double beta, double cap) {
  if (!(beta > 0.0))
    throw std::domain_error("behavior probability is zero for the logged action");
  return std::clamp(pi / beta, 0.0, cap);
}

}  // namespace snqn

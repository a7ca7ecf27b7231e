#include "snqn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace snqn {

template <typename T>
CrossEntropyResult<T> cross_entropy(std::span<const T> logits, ItemId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw std::out_of_range("cross_entropy target out of range");
  // log-sum-exp in double so the 32-bit path stays accurate.
  double mx = -INFINITY;
  for (T y : logits) mx = std::max(mx, static_cast<double>(y));
  double sum = 0.0;
  for (T y : logits) sum += std::exp(static_cast<double>(y) - mx);
  const double lse = mx + std::log(sum);
  CrossEntropyResult<T> out;
  out.loss = lse - static_cast<double>(logits[static_cast<std::size_t>(target)]);
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.grad[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - lse));
  out.grad[static_cast<std::size_t>(target)] -= T{1};
  return out;
}

template <typename T>
ItemId argmax(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  return static_cast<ItemId>(std::max_element(values.begin(), values.end()) - values.begin());
}

template <typename T>
TdTerms td_terms(std::span<const T> q_pred, ItemId positive, std::span<const ItemId> negatives,
                 double reward, bool terminal, double boot_next, double boot_current,
                 const RewardConfig& rewards) {
  TdTerms out;
  out.dq.reserve(negatives.size() + 1);
  const double target_pos = reward + (terminal ? 0.0 : rewards.gamma * boot_next);
  const double resid_pos = target_pos - static_cast<double>(q_pred[static_cast<std::size_t>(positive)]);
  out.l_p = resid_pos * resid_pos;
  out.dq.emplace_back(positive, -2.0 * resid_pos);
  const double target_neg = rewards.r_negative + rewards.gamma * boot_current;
  for (ItemId a : negatives) {
    const double resid = target_neg - static_cast<double>(q_pred[static_cast<std::size_t>(a)]);
    out.l_n += resid * resid;
    out.dq.emplace_back(a, -2.0 * resid);
  }
  return out;
}

template <typename T>
TdLoss<T> td_loss(const TdInputs<T>& in, const TDBatchItem& item, const RewardConfig& rewards) {
  TdLoss<T> out;
  double boot_next = 0.0;
  if (!item.is_terminal) {
    out.argmax_next = argmax(in.q_online_next);
    boot_next = static_cast<double>(in.q_target_next[static_cast<std::size_t>(out.argmax_next)]);
  }
  out.argmax_current = argmax(in.q_online_t);
  const double boot_current =
      static_cast<double>(in.q_target_t[static_cast<std::size_t>(out.argmax_current)]);
  out.terms = td_terms(in.q_online_t, item.positive, item.negatives, item.reward,
                       item.is_terminal, boot_next, boot_current, rewards);
  return out;
}

template <typename T>
double advantage(std::span<const T> q, ItemId positive, std::span<const ItemId> negatives) {
  const double q_pos = static_cast<double>(q[static_cast<std::size_t>(positive)]);
  double sum = q_pos;
  for (ItemId a : negatives) {
    if (a == positive) throw std::invalid_argument("positive action listed among negatives");
    sum += static_cast<double>(q[static_cast<std::size_t>(a)]);
  }
  return q_pos - sum / static_cast<double>(negatives.size() + 1);
}

#define SNQN_INSTANTIATE_LOSSES(T)                                                            \
  template CrossEntropyResult<T> cross_entropy(std::span<const T>, ItemId);                   \
  template ItemId argmax(std::span<const T>);                                                 \
  template TdTerms td_terms(std::span<const T>, ItemId, std::span<const ItemId>, double, bool, \
                            double, double, const RewardConfig&);                             \
  template TdLoss<T> td_loss(const TdInputs<T>&, const TDBatchItem&, const RewardConfig&);    \
  template double advantage(std::span<const T>, ItemId, std::span<const ItemId>);

SNQN_INSTANTIATE_LOSSES(float)
SNQN_INSTANTIATE_LOSSES(double)

}  // namespace snqn

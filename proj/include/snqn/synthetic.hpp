#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snqn/data.hpp"
#include "snqn/network.hpp"
#include "snqn/types.hpp"

namespace snqn {

/// A session MDP over a handful of items. A user type is drawn uniformly per
/// session; items are drawn from the behavior policy; an interaction is a
/// purchase iff the user's affinity for the item reaches purchase_threshold.
struct SyntheticSpec {
  std::size_t n_items = 5;
  std::size_t n_user_types = 2;
  std::vector<std::vector<double>> affinity;  // [n_user_types][n_items], rows sum to 1
  double purchase_threshold = 0.3;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  /// After min_len, a session ends after each step with this probability.
  double end_prob = 0.5;
  /// Behavior weight multiplier for repeating the previous item.
  double repeat_factor = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  static SyntheticSpec small();   // 5 items, 2 user types
  static SyntheticSpec medium();  // 30 items, 4 user types
  static SyntheticSpec preset(const std::string& name);
};

enum class BehaviorPolicy { affinity_proportional, uniform };
BehaviorPolicy parse_behavior(const std::string& name);

/// Behavior probability of each item given the user type and the previous item (-1 at the start).
std::vector<double> behavior_probs(const SyntheticSpec& spec, BehaviorPolicy behavior,
                                   std::size_t user, int last);

/// Session ids are "u<type>-<index>", item ids are the decimal item index,
/// timestamps are positions within the session.
std::vector<RawEvent> generate_log(const SyntheticSpec& spec, std::size_t n_sessions,
                                   BehaviorPolicy behavior);

/// Probability that a session has a purchase at a given position, averaged over
/// all events of sessions generated from `spec` (closed form via the Markov chain).
double expected_purchase_fraction(const SyntheticSpec& spec, BehaviorPolicy behavior);

/// Finite MDP: for every (state, action) a list of outcomes.
struct TabularMdp {
  struct Outcome {
    double prob;
    double reward;
    int next;  // -1 = terminal
  };
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<std::vector<Outcome>> outcomes;  // [state * n_actions + action]
  std::vector<bool> available;                 // [state * n_actions + action]
  void validate() const;
};

struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;  // [state * n_actions + action]
  std::vector<double> sweep_deltas;
  std::size_t sweeps = 0;
  double at(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }
  double max_abs() const;
};

inline constexpr std::size_t kMaxOracleStates = 1'000'000;

/// Synchronous Bellman sweeps until the sup-norm change is below tol or
/// `horizon` sweeps have run.
QTable value_iteration(const TabularMdp& mdp, double gamma, std::size_t horizon,
                       double tol = 1e-10);

/// Oracle state: user type plus the last (at most 2) items of the history.
struct OracleState {
  std::size_t user = 0;
  std::vector<int> history;
  auto operator<=>(const OracleState&) const = default;
};

/// The synthetic environment seen through SNQN's training signal. A logged
/// transition (s, a) is the user accepting the recommendation a; a sampled
/// negative is a rejected one that leaves the user state unchanged with reward
/// r_negative. With uniform negatives of size n over N items, the share of
/// updates of (s, a) that are acceptances is
///   P_acc = beta(a|s) / (beta(a|s) + (1 - beta(a|s)) * n / (N - 1)),
/// so the oracle MDP accepts with P_acc, pays r(u, a) and moves to s + a
/// (terminal with the session end probability), or else pays r_negative and
/// stays in s.
struct SyntheticOracle {
  SyntheticSpec spec;
  std::vector<OracleState> states;
  std::map<OracleState, std::size_t> index;
  TabularMdp mdp;
  QTable q;
};

SyntheticOracle build_oracle(const SyntheticSpec& spec, BehaviorPolicy behavior,
                             const RewardConfig& rewards, std::size_t neg_samples,
                             std::size_t horizon = 10'000);

/// Unique user type whose support contains every item of the history, or -1.
int identify_user(const SyntheticSpec& spec, const std::vector<int>& history);

struct VisitedPair {
  std::size_t state = 0;  // oracle state index
  int action = 0;         // synthetic item index
  std::size_t visits = 0;
};

/// Counts (state, action) appearances, as positive or sampled negative, in the
/// given batches. Only windows of at most 2 items whose user type is
/// identifiable are counted. `vocab` maps dataset indices to synthetic items.
std::vector<VisitedPair> count_visits(const SyntheticOracle& oracle,
                                      const std::vector<std::vector<TDBatchItem>>& batches,
                                      const std::vector<int>& vocab_to_item,
                                      std::size_t min_visits);

/// Dataset index -> synthetic item (vocab keys are decimal item indices).
std::vector<int> synthetic_item_map(const ReplayDataset& ds, const SyntheticSpec& spec);

struct QDeviation {
  struct Pair {
    std::size_t state;
    int action;
    std::size_t visits;
    double learned;
    double oracle;
  };
  double max_abs = 0.0;
  double max_learned = 0.0;
  std::vector<Pair> pairs;
};

/// Learned Q of `net` (encoding each oracle state's history) against Q*.
QDeviation compare_q(const Network<float>& net, const SyntheticOracle& oracle,
                     const std::vector<VisitedPair>& pairs, const std::vector<int>& vocab_to_item);

std::string describe(const OracleState& s);

/// generate_log + preprocess; records the generator in the dataset notes so
/// the oracle can be rebuilt from the dataset alone.
ReplayDataset simulate_dataset(const SyntheticSpec& spec, const std::string& preset,
                               std::size_t n_sessions, BehaviorPolicy behavior,
                               const PreprocessConfig& pre);

struct SyntheticOrigin {
  SyntheticSpec spec;
  BehaviorPolicy behavior;
};
/// The generator of a simulated dataset, if its notes name one.
std::optional<SyntheticOrigin> synthetic_origin(const ReplayDataset& ds);

struct OracleCheck {
  QDeviation deviation;
  std::size_t n_pairs = 0;
  std::size_t n_states = 0;
  double q_star_max = 0.0;
};

/// Learned Q of `net` against the oracle over pairs with at least min_visits
/// visits in epoch 0 of the training stream (batch_size, neg_samples, seed).
OracleCheck oracle_check(const Network<float>& net, const ReplayDataset& ds,
                         const SyntheticOrigin& origin, const RewardConfig& rewards,
                         std::size_t batch_size, std::size_t neg_samples, std::uint64_t seed,
                         std::size_t min_visits);

}  // namespace snqn

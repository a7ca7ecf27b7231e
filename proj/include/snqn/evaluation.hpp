#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "snqn/data.hpp"
#include "snqn/network.hpp"

namespace snqn {

/// State-independent behavior policy: item frequency over the training split.
struct ItemFrequencyPolicy {
  std::vector<double> beta;

  static ItemFrequencyPolicy from_dataset(const ReplayDataset& ds);
  static ItemFrequencyPolicy uniform(std::size_t n_items);
};

enum class Head { supervised, q };
Head parse_head(const std::string& name);
const char* to_string(Head h);

/// Top-k item indices by descending score; ties go to the lower index.
std::vector<ItemId> recommend(std::span<const float> scores, std::size_t k);
std::vector<ItemId> recommend(const Network<float>& net, Head head, std::span<const float> state,
                              std::size_t k);

struct HitRank {
  int hit = 0;
  double dcg = 0.0;
};
HitRank hit_and_rank(std::span<const ItemId> recs, ItemId truth);

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

struct TypeMetrics {
  std::vector<double> hr, ndcg, ng_off;  // one per k
  std::size_t events = 0;
  std::size_t ng_off_excluded = 0;
};

struct MetricsReport {
  std::string head = "supervised";
  std::vector<std::size_t> ks{5, 10, 20};
  std::array<TypeMetrics, 2> by_type;  // indexed by Interaction
  std::size_t runs = 1;

  const TypeMetrics& of(Interaction t) const { return by_type[static_cast<std::size_t>(t)]; }
  double hr(Interaction t, std::size_t k) const;
  double ndcg(Interaction t, std::size_t k) const;
  double ng_off(Interaction t, std::size_t k) const;

  /// Keys "HR@5", "NDCG@5", "NG_off@5", ... per interaction type.
  std::string to_json(int indent = 2) const;
  static MetricsReport from_json(const std::string& text);
  /// Aligned table in the layout HR@5 NG@5 HR@10 NG@10 HR@20 NG@20.
  std::string to_table() const;
};

/// Accumulates per-event hits in arrival order.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::vector<std::size_t> ks);
  /// `ranked` must hold at least max(ks) items; beta <= 0 excludes the event from NG_off.
  void add(Interaction type, std::span<const ItemId> ranked, ItemId truth, double beta);
  MetricsReport finish(const std::string& head) const;

 private:
  std::vector<std::size_t> ks_;
  struct Sums {
    std::vector<CompensatedSum> hits, dcg, w_dcg;
    CompensatedSum w;
    std::size_t events = 0, excluded = 0;
  };
  std::array<Sums, 2> sums_;
};

struct EvalOptions {
  Head head = Head::supervised;
  std::vector<std::size_t> ks{5, 10, 20};
  /// Events are processed in chunks of this many states.
  std::size_t chunk = 512;
};

/// Scores every event x_{t+1} (t >= 1) of the split from its ground-truth
/// history. Per-event work runs in parallel; sums run serially in event order.
MetricsReport evaluate(const Network<float>& net, const ReplayDataset& ds, Split split,
                       const ItemFrequencyPolicy& policy, const EvalOptions& opts);

/// Arithmetic mean of reports with identical ks.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

}  // namespace snqn

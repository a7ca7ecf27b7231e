#include "snqn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "snqn/kernels.hpp"

namespace snqn {

ItemFrequencyPolicy ItemFrequencyPolicy::from_dataset(const ReplayDataset& ds) {
  ItemFrequencyPolicy p;
  p.beta.assign(ds.n_items(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    if (ds.split[i] != Split::train) continue;
    for (ItemId a : ds.sessions[i].items) {
      p.beta[static_cast<std::size_t>(a)] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw DataError("training split is empty; cannot estimate item frequencies");
  for (double& b : p.beta) b /= total;
  return p;
}

ItemFrequencyPolicy ItemFrequencyPolicy::uniform(std::size_t n_items) {
  return {std::vector<double>(n_items, 1.0 / static_cast<double>(n_items))};
}

Head parse_head(const std::string& name) {
  if (name == "supervised" || name == "sup") return Head::supervised;
  if (name == "q") return Head::q;
  throw std::invalid_argument("unknown head '" + name + "' (expected supervised or q)");
}

const char* to_string(Head h) { return h == Head::q ? "q" : "supervised"; }

std::vector<ItemId> recommend(std::span<const float> scores, std::size_t k) {
  if (k > scores.size()) throw std::invalid_argument("k exceeds the number of items");
  std::vector<ItemId> out(k);
  kernels::top_k_indices(scores.data(), scores.size(), k, out.data());
  return out;
}

std::vector<ItemId> recommend(const Network<float>& net, Head head, std::span<const float> state,
                              std::size_t k) {
  const auto scores = head == Head::q ? q_values(state, net) : supervised_logits(state, net);
  return recommend(std::span<const float>(scores), k);
}

HitRank hit_and_rank(std::span<const ItemId> recs, ItemId truth) {
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i] == truth) return {1, 1.0 / std::log2(static_cast<double>(i) + 2.0)};
  return {};
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) c_ += (sum_ - t) + x;
  else c_ += (x - t) + sum_;
  sum_ = t;
}

namespace {

std::size_t k_index(const std::vector<std::size_t>& ks, std::size_t k) {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw std::out_of_range("k=" + std::to_string(k) + " not in report");
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double MetricsReport::hr(Interaction t, std::size_t k) const { return of(t).hr[k_index(ks, k)]; }
double MetricsReport::ndcg(Interaction t, std::size_t k) const { return of(t).ndcg[k_index(ks, k)]; }
double MetricsReport::ng_off(Interaction t, std::size_t k) const {
  return of(t).ng_off[k_index(ks, k)];
}

std::string MetricsReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["head"] = head;
  j["ks"] = ks;
  j["runs"] = runs;
  for (auto t : {Interaction::click, Interaction::purchase}) {
    const auto& m = of(t);
    nlohmann::ordered_json o;
    o["events"] = m.events;
    o["ng_off_excluded"] = m.ng_off_excluded;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto k = std::to_string(ks[i]);
      o["HR@" + k] = m.hr[i];
      o["NDCG@" + k] = m.ndcg[i];
      o["NG_off@" + k] = m.ng_off[i];
    }
    j[to_string(t)] = o;
  }
  return j.dump(indent);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.head = j.at("head").get<std::string>();
  r.ks = j.at("ks").get<std::vector<std::size_t>>();
  r.runs = j.value("runs", std::size_t{1});
  for (auto t : {Interaction::click, Interaction::purchase}) {
    const auto& o = j.at(to_string(t));
    auto& m = r.by_type[static_cast<std::size_t>(t)];
    m.events = o.at("events").get<std::size_t>();
    m.ng_off_excluded = o.at("ng_off_excluded").get<std::size_t>();
    for (auto k : r.ks) {
      const auto ks = std::to_string(k);
      m.hr.push_back(o.at("HR@" + ks).get<double>());
      m.ndcg.push_back(o.at("NDCG@" + ks).get<double>());
      m.ng_off.push_back(o.at("NG_off@" + ks).get<double>());
    }
  }
  return r;
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "head: " + head << "\n";
  os << std::left << std::setw(10) << "type" << std::setw(8) << "events";
  for (auto k : ks) {
    os << std::right << std::setw(10) << "HR@" + std::to_string(k) << std::setw(10)
       << "NG@" + std::to_string(k) << std::setw(12) << "NGoff@" + std::to_string(k);
  }
  os << "\n";
  os << std::fixed << std::setprecision(4);
  for (auto t : {Interaction::purchase, Interaction::click}) {
    const auto& m = of(t);
    os << std::left << std::setw(10) << to_string(t) << std::setw(8) << m.events;
    for (std::size_t i = 0; i < ks.size(); ++i)
      os << std::right << std::setw(10) << m.hr[i] << std::setw(10) << m.ndcg[i] << std::setw(12)
         << m.ng_off[i];
    os << "\n";
  }
  return os.str();
}

MetricsAccumulator::MetricsAccumulator(std::vector<std::size_t> ks) : ks_(std::move(ks)) {
  if (ks_.empty()) throw std::invalid_argument("need at least one cutoff k");
  for (auto& s : sums_) {
    s.hits.resize(ks_.size());
    s.dcg.resize(ks_.size());
    s.w_dcg.resize(ks_.size());
  }
}

void MetricsAccumulator::add(Interaction type, std::span<const ItemId> ranked, ItemId truth,
                             double beta) {
  auto& s = sums_[static_cast<std::size_t>(type)];
  ++s.events;
  const bool weighted = beta > 0.0;
  if (weighted) s.w.add(1.0 / beta);
  else ++s.excluded;
  for (std::size_t i = 0; i < ks_.size(); ++i) {
    if (ranked.size() < ks_[i]) throw std::invalid_argument("ranked list shorter than k");
    const auto hr = hit_and_rank(ranked.first(ks_[i]), truth);
    s.hits[i].add(hr.hit);
    s.dcg[i].add(hr.dcg);
    if (weighted) s.w_dcg[i].add(hr.dcg / beta);
  }
}

MetricsReport MetricsAccumulator::finish(const std::string& head) const {
  MetricsReport r;
  r.head = head;
  r.ks = ks_;
  for (std::size_t t = 0; t < 2; ++t) {
    const auto& s = sums_[t];
    auto& m = r.by_type[t];
    m.events = s.events;
    m.ng_off_excluded = s.excluded;
    const double n = static_cast<double>(s.events);
    const double w = s.w.value();
    for (std::size_t i = 0; i < ks_.size(); ++i) {
      m.hr.push_back(s.events ? s.hits[i].value() / n : 0.0);
      m.ndcg.push_back(s.events ? s.dcg[i].value() / n : 0.0);
      m.ng_off.push_back(w > 0.0 ? s.w_dcg[i].value() / w : 0.0);
    }
  }
  return r;
}

MetricsReport evaluate(const Network<float>& net, const ReplayDataset& ds, Split split,
                       const ItemFrequencyPolicy& policy, const EvalOptions& opts) {
  const std::size_t N = net.n_items();
  if (N != ds.n_items()) throw std::invalid_argument("network and dataset item counts differ");
  if (policy.beta.size() != N) throw std::invalid_argument("behavior policy size mismatch");
  if (opts.ks.empty()) throw std::invalid_argument("need at least one cutoff k");
  const std::size_t kmax = *std::max_element(opts.ks.begin(), opts.ks.end());
  if (kmax > N) throw std::invalid_argument("k exceeds the number of items");

  RewardConfig rewards;
  const auto events = make_transitions(ds, split, rewards);
  if (events.empty()) throw DataError(std::string("split '") + to_string(split) + "' has no events");

  const auto enc = net.encoder();
  const auto& w = opts.head == Head::q ? net.q_weight() : net.sup_weight();
  const auto& b = opts.head == Head::q ? net.q_bias() : net.sup_bias();
  MetricsAccumulator acc(opts.ks);
  const std::size_t chunk = std::max<std::size_t>(opts.chunk, 1);
  std::vector<float> states, scores;
  std::vector<ItemId> ranked;
  for (std::size_t begin = 0; begin < events.size(); begin += chunk) {
    const std::size_t B = std::min(chunk, events.size() - begin);
    std::vector<ItemId> items;
    for (std::size_t i = 0; i < B; ++i) {
      const auto seq = events[begin + i].state.items();
      items.insert(items.end(), seq.begin(), seq.end());
    }
    InputProjections<float> proj;
    enc.project(items, proj);
    states.assign(B * kHiddenDim, 0.0f);
    kernels::parallel_for(B, [&](std::size_t i) {
      enc.forward(events[begin + i].state, proj, states.data() + i * kHiddenDim);
    });
    scores.resize(B * N);
    kernels::parallel::affine_rows(states.data(), B, kHiddenDim, w.raw(), b.raw(), N, scores.data());
    ranked.resize(B * kmax);
    kernels::parallel::top_k_rows(scores.data(), B, N, kmax, ranked.data());
    for (std::size_t i = 0; i < B; ++i) {
      const auto& ev = events[begin + i];
      acc.add(ev.target_type, std::span<const ItemId>(ranked.data() + i * kmax, kmax), ev.positive,
              policy.beta[static_cast<std::size_t>(ev.positive)]);
    }
  }
  return acc.finish(to_string(opts.head));
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to average");
  MetricsReport out = reports.front();
  for (std::size_t r = 1; r < reports.size(); ++r)
    if (reports[r].ks != out.ks) throw std::invalid_argument("reports use different cutoffs");
  const double n = static_cast<double>(reports.size());
  for (std::size_t t = 0; t < 2; ++t) {
    auto& m = out.by_type[t];
    for (std::size_t i = 0; i < out.ks.size(); ++i) {
      CompensatedSum hr, nd, ng;
      for (const auto& r : reports) {
        hr.add(r.by_type[t].hr[i]);
        nd.add(r.by_type[t].ndcg[i]);
        ng.add(r.by_type[t].ng_off[i]);
      }
      m.hr[i] = hr.value() / n;
      m.ndcg[i] = nd.value() / n;
      m.ng_off[i] = ng.value() / n;
    }
  }
  out.runs = reports.size();
  return out;
}

}  // namespace snqn

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "snqn/data.hpp"
#include "snqn/evaluation.hpp"
#include "snqn/rng.hpp"

using namespace snqn;

TEST_CASE("recommend") {
  CHECK(recommend(std::vector<float>(8, 0.3f), 5) == std::vector<ItemId>{0, 1, 2, 3, 4});
  std::vector<float> one(8, 0.0f);
  one[6] = 1.0f;
  CHECK(recommend(one, 3).front() == 6);

  auto rng = make_rng(2, "test.rec");
  std::vector<float> s(300);
  for (auto& x : s) x = static_cast<float>(uniform_index(rng, 40));  // many ties
  std::vector<ItemId> idx(300);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](ItemId a, ItemId b) { return s[a] > s[b]; });
  idx.resize(20);
  CHECK(recommend(s, 20) == idx);
}

TEST_CASE("hit_and_rank") {
  const std::vector<ItemId> recs{4, 2, 9, 1, 0};
  auto r = hit_and_rank(recs, 4);
  CHECK(r.hit == 1);
  CHECK(r.dcg == 1.0);
  r = hit_and_rank(recs, 9);
  CHECK(r.hit == 1);
  CHECK(r.dcg == 0.5);
  r = hit_and_rank(recs, 7);
  CHECK(r.hit == 0);
  CHECK(r.dcg == 0.0);
}

TEST_CASE("metrics hand values") {
  MetricsAccumulator acc({5});
  const std::vector<ItemId> recs{10, 11, 12, 13, 14};
  acc.add(Interaction::click, recs, 10, 0.1);  // rank 1
  acc.add(Interaction::click, recs, 11, 0.1);  // rank 2
  acc.add(Interaction::click, recs, 13, 0.1);  // rank 4
  acc.add(Interaction::click, recs, 99, 0.1);  // miss
  const auto m = acc.finish("supervised");
  CHECK(m.hr(Interaction::click, 5) == 0.75);
  const double want = (1.0 + 1.0 / std::log2(3.0) + 1.0 / std::log2(5.0)) / 4.0;
  CHECK(m.ndcg(Interaction::click, 5) == doctest::Approx(want).epsilon(1e-15));
  CHECK(m.of(Interaction::click).events == 4);
  CHECK(m.of(Interaction::purchase).events == 0);
  CHECK(m.hr(Interaction::purchase, 5) == 0.0);
}

TEST_CASE("single rank-3 event has NDCG 0.5") {
  MetricsAccumulator acc({5});
  acc.add(Interaction::purchase, std::vector<ItemId>{3, 1, 7, 2, 0}, 7, 0.2);
  CHECK(acc.finish("q").ndcg(Interaction::purchase, 5) == 0.5);
}

TEST_CASE("NG_off") {
  auto rng = make_rng(4, "test.ngoff");
  std::vector<std::vector<ItemId>> lists;
  std::vector<ItemId> truths;
  for (int e = 0; e < 500; ++e) {
    std::vector<ItemId> l(20);
    std::iota(l.begin(), l.end(), 0);
    std::shuffle(l.begin(), l.end(), rng);
    lists.push_back(l);
    truths.push_back(static_cast<ItemId>(uniform_index(rng, 30)));
  }
  SUBCASE("uniform behavior reduces to NDCG") {
    MetricsAccumulator acc({5, 10, 20});
    for (std::size_t e = 0; e < lists.size(); ++e) acc.add(Interaction::click, lists[e], truths[e], 1.0 / 30);
    const auto m = acc.finish("supervised");
    for (std::size_t k : {5, 10, 20})
      CHECK(std::abs(m.ng_off(Interaction::click, k) - m.ndcg(Interaction::click, k)) < 1e-9);
  }
  SUBCASE("weights are inverse propensities") {
    MetricsAccumulator acc({10});
    double num = 0, den = 0;
    for (std::size_t e = 0; e < lists.size(); ++e) {
      const double beta = 0.01 + 0.02 * double(truths[e] % 5);
      acc.add(Interaction::purchase, lists[e], truths[e], beta);
      const auto hr = hit_and_rank(std::span<const ItemId>(lists[e]).first(10), truths[e]);
      num += hr.dcg / beta;
      den += 1.0 / beta;
    }
    CHECK(acc.finish("q").ng_off(Interaction::purchase, 10) == doctest::Approx(num / den).epsilon(1e-12));
  }
  SUBCASE("zero propensity is excluded and counted") {
    MetricsAccumulator acc({5});
    acc.add(Interaction::click, std::vector<ItemId>{1, 2, 3, 4, 5}, 1, 0.5);
    acc.add(Interaction::click, std::vector<ItemId>{1, 2, 3, 4, 5}, 9, 0.0);
    const auto m = acc.finish("supervised");
    CHECK(m.of(Interaction::click).ng_off_excluded == 1);
    CHECK(m.hr(Interaction::click, 5) == 0.5);
    CHECK(m.ng_off(Interaction::click, 5) == 1.0);
  }
  SUBCASE("all misses give zeros") {
    MetricsAccumulator acc({5});
    for (int e = 0; e < 10; ++e) acc.add(Interaction::click, std::vector<ItemId>{1, 2, 3, 4, 5}, 7, 0.3);
    const auto m = acc.finish("supervised");
    CHECK(m.hr(Interaction::click, 5) == 0.0);
    CHECK(m.ndcg(Interaction::click, 5) == 0.0);
    CHECK(m.ng_off(Interaction::click, 5) == 0.0);
  }
}

TEST_CASE("compensated summation") {
  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000; ++i) s.add(1e-16);
  s.add(-1.0);
  CHECK(s.value() == doctest::Approx(1e-13).epsilon(1e-6));
}

namespace {

// every session is [a, t, t], so every evaluated target is t
ReplayDataset constant_target_dataset() {
  std::vector<RawEvent> ev;
  for (int s = 0; s < 40; ++s) {
    const std::string id = "s" + std::to_string(s);
    ev.push_back({id, 1, "a" + std::to_string(s % 6), Interaction::click});
    ev.push_back({id, 2, "t", Interaction::click});
    ev.push_back({id, 3, "t", Interaction::purchase});
  }
  return preprocess(ev, PreprocessConfig{});
}

}  // namespace

TEST_CASE("evaluate with a one-hot Q head") {
  const auto ds = constant_target_dataset();
  const auto t = ds.index().at("t");
  Network<float> net(ds.n_items());
  net.store().get("head.q.bias").value[static_cast<std::size_t>(t)] = 1.0f;
  EvalOptions opts;
  opts.head = Head::q;
  opts.ks = {1, 5};  // 7 items
  const auto m = evaluate(net, ds, Split::test, ItemFrequencyPolicy::from_dataset(ds), opts);
  CHECK(m.hr(Interaction::click, 5) == 1.0);
  CHECK(m.hr(Interaction::purchase, 5) == 1.0);
  CHECK(m.ndcg(Interaction::purchase, 1) == 1.0);
  CHECK(m.of(Interaction::click).events == 4);
  CHECK(m.head == "q");

  opts.head = Head::supervised;  // all-zero logits rank t by index only
  const auto sup = evaluate(net, ds, Split::test, ItemFrequencyPolicy::from_dataset(ds), opts);
  CHECK(sup.hr(Interaction::click, 5) == (t < 5 ? 1.0 : 0.0));
}

TEST_CASE("evaluate is independent of the chunk size and HR grows with k") {
  PreprocessConfig pre;
  std::vector<RawEvent> ev;
  auto rng = make_rng(8, "test.evalds");
  for (int s = 0; s < 200; ++s)
    for (int t = 0; t < 5; ++t)
      ev.push_back({"s" + std::to_string(s), t, "i" + std::to_string(uniform_index(rng, 40)),
                    uniform_index(rng, 4) == 0 ? Interaction::purchase : Interaction::click});
  const auto ds = preprocess(ev, pre);
  Network<float> net(ds.n_items());
  auto init = make_rng(1, "test.evalnet");
  init_uniform(net.store(), init, 0.5, Network<float>::is_bias);
  EvalOptions a, b;
  a.chunk = 512;
  b.chunk = 7;
  const auto policy = ItemFrequencyPolicy::from_dataset(ds);
  const auto ra = evaluate(net, ds, Split::test, policy, a);
  const auto rb = evaluate(net, ds, Split::test, policy, b);
  CHECK(ra.to_json() == rb.to_json());
  for (auto t : {Interaction::click, Interaction::purchase}) {
    CHECK(ra.hr(t, 5) <= ra.hr(t, 10));
    CHECK(ra.hr(t, 10) <= ra.hr(t, 20));
    CHECK(ra.ndcg(t, 20) <= 1.0);
  }
}

TEST_CASE("item frequency policy") {
  const auto ds = constant_target_dataset();
  const auto p = ItemFrequencyPolicy::from_dataset(ds);
  CHECK(std::accumulate(p.beta.begin(), p.beta.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  const auto t = static_cast<std::size_t>(ds.index().at("t"));
  for (std::size_t i = 0; i < p.beta.size(); ++i)
    if (i != t) CHECK(p.beta[i] < p.beta[t]);
  const auto u = ItemFrequencyPolicy::uniform(4);
  CHECK(u.beta == std::vector<double>(4, 0.25));
}

TEST_CASE("report json round trip and mean") {
  MetricsAccumulator a({5, 10}), b({5, 10});
  a.add(Interaction::click, std::vector<ItemId>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 3, 0.1);
  b.add(Interaction::click, std::vector<ItemId>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 8, 0.1);
  const auto ra = a.finish("supervised"), rb = b.finish("supervised");
  const auto back = MetricsReport::from_json(ra.to_json());
  CHECK(back.to_json() == ra.to_json());
  const auto mean = mean_report({ra, rb});
  CHECK(mean.runs == 2);
  CHECK(mean.hr(Interaction::click, 5) == 0.5);
  CHECK(mean.ndcg(Interaction::click, 10) ==
        doctest::Approx((ra.ndcg(Interaction::click, 10) + rb.ndcg(Interaction::click, 10)) / 2));
  CHECK(ra.to_json().find("\"HR@5\"") != std::string::npos);
  CHECK(ra.to_table().find("HR@10") != std::string::npos);
  CHECK(parse_head("q") == Head::q);
  CHECK_THROWS(parse_head("policy"));
}

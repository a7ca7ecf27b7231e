#include <doctest.h>

#include <cmath>

#include "snqn/encoder.hpp"
#include "snqn/network.hpp"
#include "snqn/rng.hpp"

using namespace snqn;

namespace {

constexpr std::size_t H = kHiddenDim;

Network<double> random_net(std::size_t n_items, std::uint64_t seed, double scale = 0.5) {
  Network<double> net(n_items);
  auto rng = make_rng(seed, "test.net");
  init_uniform(net.store(), rng, scale, [](const std::string&) { return false; });
  return net;
}

SessionSequence window(std::vector<ItemId> items, std::size_t n_items) {
  return SessionSequence::from_history(items, {}, static_cast<ItemId>(n_items));
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar GRU with x W + h U + b per gate, skipping padding.
std::vector<double> gru_oracle(const Network<double>& net, const SessionSequence& seq) {
  const auto& s = net.store();
  const auto& emb = s.get("encoder.embedding").value;
  auto w = [&](const char* n) -> const DenseArray<double>& { return s.get(n).value; };
  std::vector<double> h(H, 0.0);
  for (std::size_t t = 0; t < kWindow; ++t) {
    const ItemId item = seq.item_ids[t];
    if (static_cast<std::size_t>(item) == net.n_items()) continue;
    std::vector<double> z(H), r(H), c(H);
    for (std::size_t j = 0; j < H; ++j) {
      double az = w("encoder.b_z")[j], ar = w("encoder.b_r")[j];
      for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
        az += emb.at(item, i) * w("encoder.W_z").at(i, j);
        ar += emb.at(item, i) * w("encoder.W_r").at(i, j);
      }
      for (std::size_t k = 0; k < H; ++k) {
        az += h[k] * w("encoder.U_z").at(k, j);
        ar += h[k] * w("encoder.U_r").at(k, j);
      }
      z[j] = sig(az);
      r[j] = sig(ar);
    }
    for (std::size_t j = 0; j < H; ++j) {
      double ah = w("encoder.b_h")[j];
      for (std::size_t i = 0; i < kEmbeddingDim; ++i) ah += emb.at(item, i) * w("encoder.W_h").at(i, j);
      for (std::size_t k = 0; k < H; ++k) ah += r[k] * h[k] * w("encoder.U_h").at(k, j);
      c[j] = std::tanh(ah);
    }
    for (std::size_t j = 0; j < H; ++j) h[j] = (1 - z[j]) * h[j] + z[j] * c[j];
  }
  return h;
}

}  // namespace

TEST_CASE("encoder with zero parameters outputs zeros") {
  Network<double> net(5);
  const auto h = net.encoder().encode(window({0, 3, 2}, 5));
  for (double x : h) CHECK(x == 0.0);
}

TEST_CASE("padding positions are skipped") {
  const auto net = random_net(6, 1);
  auto seq = window({4}, 6);
  CHECK(seq.valid_len == 1);
  for (std::size_t i = 1; i < kWindow; ++i) CHECK(seq.item_ids[i] == 6);
  const auto a = net.encoder().encode(seq);
  // a sequence whose padding was written explicitly encodes the same
  SessionSequence manual;
  manual.item_ids.fill(6);
  manual.item_ids[0] = 4;
  manual.valid_len = 1;
  CHECK(net.encoder().encode(manual) == a);
}

TEST_CASE("encoder matches the scalar GRU recurrence") {
  const auto net = random_net(7, 2);
  for (const auto& items : {std::vector<ItemId>{3}, {1, 5, 2}, {0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4}}) {
    const auto seq = window(items, 7);
    const auto got = net.encoder().encode(seq);
    const auto want = gru_oracle(net, seq);
    for (std::size_t j = 0; j < H; ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
  }
}

TEST_CASE("windows keep the most recent ten items") {
  std::vector<ItemId> items;
  for (int i = 0; i < 12; ++i) items.push_back(i % 9);
  const auto seq = window(items, 9);
  CHECK(seq.valid_len == 10);
  CHECK(seq.item_ids[0] == items[2]);
  CHECK(seq.item_ids[9] == items[11]);
  CHECK_NOTHROW(seq.validate(9));
  auto bad = seq;
  bad.item_ids[3] = 9;
  CHECK_THROWS_AS(bad.validate(9), std::out_of_range);
  auto oob = window({0, 12}, 9);
  CHECK_THROWS_AS(oob.validate(9), std::out_of_range);
}

TEST_CASE("encoder rejects out-of-range items") {
  const auto net = random_net(4, 3);
  SessionSequence seq = window({1, 2}, 4);
  seq.item_ids[1] = 7;
  CHECK_THROWS_AS(net.encoder().encode(seq), std::out_of_range);
}

namespace {

// Loss = upstream . encode(seq); analytic gradients via encode_backward.
double encoder_grad_error(std::size_t len, std::uint64_t seed) {
  auto net = random_net(5, seed, 0.6);
  std::vector<ItemId> items;
  auto rng = make_rng(seed, "test.seq");
  for (std::size_t t = 0; t < len; ++t) items.push_back(static_cast<ItemId>(uniform_index(rng, 5)));
  const auto seq = window(items, 5);
  std::vector<double> up(H);
  for (auto& u : up) u = uniform_open01(rng) - 0.5;
  auto loss = [&](bool grad) {
    const auto enc = net.encoder();
    InputProjections<double> proj;
    enc.project(seq.items(), proj);
    std::vector<double> h(H);
    GruTrace<double> trace;
    enc.forward(seq, proj, h.data(), &trace);
    double l = 0;
    for (std::size_t j = 0; j < H; ++j) l += up[j] * h[j];
    if (grad) {
      net.store().zero_grad();
      enc.encode_backward(trace, up, net.store());
    }
    return l;
  };
  return finite_diff_check(loss, net.store(), 1e-5, 300, seed).max_rel_error;
}

}  // namespace

TEST_CASE("encoder backward matches finite differences") {
  CHECK(encoder_grad_error(1, 1) < 1e-4);
  CHECK(encoder_grad_error(3, 2) < 1e-4);
  CHECK(encoder_grad_error(10, 3) < 1e-4);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  auto net = random_net(5, 4);
  const auto enc = net.encoder();
  const auto seq = window({1, 2, 3}, 5);
  InputProjections<double> proj;
  enc.project(seq.items(), proj);
  std::vector<double> h(H);
  GruTrace<double> trace;
  enc.forward(seq, proj, h.data(), &trace);
  enc.encode_backward(trace, std::vector<double>(H, 0.0), net.store());
  for (const auto& [_, p] : net.store().entries())
    for (double g : p.grad.data()) CHECK(g == 0.0);
}

TEST_CASE("heads") {
  SUBCASE("zero parameters give zero outputs") {
    Network<double> net(4);
    std::vector<double> s(H, 0.3);
    for (double y : supervised_logits<double>(s, net)) CHECK(y == 0.0);
    for (double q : q_values<double>(s, net)) CHECK(q == 0.0);
  }
  SUBCASE("basis projection") {
    Network<double> net(4);
    const std::size_t i = 5, j = 2;
    net.store().get("head.sup.weight").value.at(i, j) = 1.75;
    net.store().get("head.q.weight").value.at(i, j) = -0.5;
    std::vector<double> e(H, 0.0);
    e[i] = 1.0;
    const auto y = supervised_logits<double>(e, net);
    const auto q = q_values<double>(e, net);
    for (std::size_t n = 0; n < 4; ++n) {
      CHECK(y[n] == (n == j ? 1.75 : 0.0));
      CHECK(q[n] == (n == j ? -0.5 : 0.0));
    }
  }
  SUBCASE("random inputs match dot products") {
    const auto net = random_net(9, 5);
    auto rng = make_rng(5, "test.state");
    std::vector<double> s(H);
    for (auto& x : s) x = uniform_open01(rng) - 0.5;
    const auto y = supervised_logits<double>(s, net);
    const auto q = q_values<double>(s, net);
    for (std::size_t n = 0; n < 9; ++n) {
      double ys = net.sup_bias()[n], qs = net.q_bias()[n];
      for (std::size_t k = 0; k < H; ++k) {
        ys += s[k] * net.sup_weight().at(k, n);
        qs += s[k] * net.q_weight().at(k, n);
      }
      CHECK(y[n] == doctest::Approx(ys).epsilon(1e-13));
      CHECK(q[n] == doctest::Approx(qs).epsilon(1e-13));
    }
  }
}

TEST_CASE("softmax") {
  const auto u = softmax<double>(std::vector<double>(4, 2.0));
  for (double p : u) CHECK(p == doctest::Approx(0.25));
  const auto big = softmax<double>(std::vector<double>{1000.0, 0.0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  const auto p = softmax<double>(std::vector<double>{0.0, std::log(3.0)});
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-14));
}

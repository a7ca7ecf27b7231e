#include <doctest.h>

#include <sstream>

#include "snqn/config.hpp"

using namespace snqn;

namespace {

RunConfig parsed(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  c.parse(in, "test.cfg");
  return c;
}

std::string error_of(const std::string& text) {
  try {
    parsed(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.text("mode") == "SNQN");
  CHECK(c.count("batch_size") == 256);
  CHECK(c.real("gamma") == 0.5);
  CHECK(c.counts("ks") == std::vector<std::uint64_t>{5, 10, 20});
  CHECK(c.counts("seeds").empty());
  const auto t = c.training();
  CHECK(t.neg_samples == 10);
  CHECK(t.init_scale == 0.05);
  CHECK(t.rewards.r_purchase == 1.0);
  CHECK(t.rewards.r_purchase / t.rewards.r_click == doctest::Approx(5.0));  // r_p / r_c = 5
  CHECK(t.rewards.gamma == 0.5);
}

TEST_CASE("parsing") {
  const auto c = parsed(
      "# a run\n"
      "mode = SA2C   # trailing comment\n"
      "\n"
      "batch-size=32\n"
      "ks = 1, 3 ,7\n"
      "gamma = 0.25\n"
      "gamma = 0.75\n");
  CHECK(c.text("mode") == "SA2C");
  CHECK(c.count("batch_size") == 32);
  CHECK(c.counts("ks") == std::vector<std::uint64_t>{1, 3, 7});
  CHECK(c.real("gamma") == 0.75);
  CHECK(c.training().mode == TrainMode::sa2c);

  RunConfig o = c;
  o.set("gamma", "0.1");  // a command-line override after the file
  CHECK(o.rewards().gamma == 0.1);
}

TEST_CASE("errors") {
  CHECK(error_of("colour = red\n").find("unknown config key 'colour'") != std::string::npos);
  CHECK(error_of("mode = SNQN\nbatch_size = -3\n").find("test.cfg:2:") != std::string::npos);
  CHECK(error_of("batch_size = 3.5\n").find("non-negative integer") != std::string::npos);
  CHECK(error_of("gamma = fast\n").find("finite number") != std::string::npos);
  CHECK(error_of("gamma = nan\n").find("finite number") != std::string::npos);
  CHECK(error_of("ks = 5,x\n").find("list") != std::string::npos);
  CHECK(error_of("just words\n").find("expected key = value") != std::string::npos);
  CHECK_THROWS_AS(RunConfig().text("nope"), ConfigError);
  CHECK_THROWS_AS(RunConfig().load_file("/nonexistent/run.cfg"), ConfigError);

  CHECK_THROWS_AS(parsed("mode = PPO\n").training(), ConfigError);
  CHECK_THROWS_AS(parsed("gamma = 1\n").training(), ConfigError);
  CHECK_THROWS_AS(parsed("batch_size = 0\n").training(), ConfigError);
  CHECK_THROWS_AS(parsed("min_session_len = 1\n").preprocessing(), ConfigError);
}

TEST_CASE("json lists every key") {
  const auto j = RunConfig().to_json();
  for (const auto& k : config_schema()) CHECK(j.find("\"" + k.name + "\"") != std::string::npos);
}

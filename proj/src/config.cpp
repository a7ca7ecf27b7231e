#include "snqn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include <json.hpp>

namespace snqn {

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      // data
      {"format", ValueType::text, "generic_tsv", "input log format: generic_tsv, rc15 or retailrocket"},
      {"input", ValueType::text, "", "input log file (rc15: the clicks file)"},
      {"buys", ValueType::text, "", "rc15 buys file"},
      {"out", ValueType::text, "", "output directory or file"},
      {"min_session_len", ValueType::count, "3", "drop sessions shorter than this"},
      {"min_item_freq", ValueType::count, "0", "drop items with fewer interactions (0 = off)"},
      {"sample_sessions", ValueType::count, "0", "keep this many sessions (0 = all)"},
      {"dataset", ValueType::text, "", "preprocessed dataset directory"},
      {"checkpoint", ValueType::text, "", "checkpoint file; {seed} expands per seed"},
      // training
      {"mode", ValueType::text, "SNQN", "supervised_only, SNQN, SA2C, SA2C_offpolicy or DQN"},
      {"batch_size", ValueType::count, "256", "mini-batch size"},
      {"learning_rate_main", ValueType::real, "0.01", "Adam learning rate"},
      {"learning_rate_post_pretrain", ValueType::real, "0.001", "Adam learning rate after pretrain_steps (SA2C)"},
      {"pretrain_steps", ValueType::count, "5000", "SNQN steps before the SA2C actor starts"},
      {"neg_samples", ValueType::count, "10", "negative actions per transition"},
      {"seed", ValueType::count, "1", "root seed"},
      {"seeds", ValueType::count_list, "", "comma-separated seeds for repeated runs"},
      {"max_steps", ValueType::count, "10000", "training steps"},
      {"max_epochs", ValueType::count, "0", "epoch limit (0 = none)"},
      {"log_every", ValueType::count, "100", "steps between training log lines"},
      {"eval_every", ValueType::count, "2000", "steps between validation runs (0 = never)"},
      {"rho_cap", ValueType::real, "10", "upper clip of the propensity ratio"},
      {"init_scale", ValueType::real, "0.05", "uniform initialization half-width"},
      {"r_click", ValueType::real, "0.2", "reward of a click"},
      {"r_purchase", ValueType::real, "1.0", "reward of a purchase"},
      {"r_negative", ValueType::real, "0", "reward of a negative action"},
      {"gamma", ValueType::real, "0.5", "discount factor"},
      // evaluation
      {"head", ValueType::text, "supervised", "head used for recommendations: supervised or q"},
      {"ks", ValueType::count_list, "5,10,20", "cutoffs"},
      {"split", ValueType::text, "test", "split to evaluate: train, val or test"},
      // synthetic environment
      {"preset", ValueType::text, "small", "synthetic spec: small or medium"},
      {"n_sessions", ValueType::count, "5000", "synthetic sessions to generate"},
      {"behavior", ValueType::text, "affinity_proportional", "synthetic behavior policy: affinity_proportional or uniform"},
      {"synthetic_seed", ValueType::count, "1", "seed of the synthetic generator"},
      {"min_visits", ValueType::count, "50", "visits needed for a pair to enter the oracle comparison"},
      // gradient check
      {"modes", ValueType::text_list, "supervised_only,SNQN,SA2C,SA2C_offpolicy", "loss modes to check"},
      {"probes", ValueType::count, "200", "finite-difference probes per mode and seed"},
      {"threads", ValueType::count, "0", "OpenMP threads (0 = runtime default)"},
  };
  return schema;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(',', start);
    auto part = trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (!part.empty()) out.push_back(part);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

void check_value(const ConfigKey& k, const std::string& v) {
  auto fail = [&](const char* what) {
    throw ConfigError("config key '" + k.name + "': '" + v + "' is not " + what);
  };
  switch (k.type) {
    case ValueType::text:
    case ValueType::text_list:
      break;
    case ValueType::integer: {
      std::int64_t x;
      if (!parse_number(v, x)) fail("an integer");
      break;
    }
    case ValueType::count: {
      std::uint64_t x;
      if (!parse_number(v, x)) fail("a non-negative integer");
      break;
    }
    case ValueType::real: {
      double x;
      if (!parse_number(v, x) || !std::isfinite(x)) fail("a finite number");
      break;
    }
    case ValueType::count_list:
      for (const auto& part : split_list(v)) {
        std::uint64_t x;
        if (!parse_number(part, x)) fail("a comma-separated list of non-negative integers");
      }
      break;
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

const ConfigKey& RunConfig::key(const std::string& name) const {
  for (const auto& k : config_schema())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + name + "'");
}

void RunConfig::set(const std::string& name, const std::string& value) {
  const auto& k = key(name);
  const auto v = trim(value);
  check_value(k, v);
  values_[name] = v;
}

void RunConfig::parse(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    auto name = trim(line.substr(0, eq));
    std::replace(name.begin(), name.end(), '-', '_');
    try {
      set(name, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  parse(in, path);
}

const std::string& RunConfig::text(const std::string& name) const {
  key(name);
  return values_.at(name);
}

std::int64_t RunConfig::integer(const std::string& name) const {
  std::int64_t x = 0;
  parse_number(text(name), x);
  return x;
}

std::uint64_t RunConfig::count(const std::string& name) const {
  std::uint64_t x = 0;
  parse_number(text(name), x);
  return x;
}

double RunConfig::real(const std::string& name) const {
  double x = 0;
  parse_number(text(name), x);
  return x;
}

std::vector<std::uint64_t> RunConfig::counts(const std::string& name) const {
  std::vector<std::uint64_t> out;
  for (const auto& part : split_list(text(name))) {
    std::uint64_t x = 0;
    parse_number(part, x);
    out.push_back(x);
  }
  return out;
}

std::vector<std::string> RunConfig::texts(const std::string& name) const {
  return split_list(text(name));
}

RewardConfig RunConfig::rewards() const {
  RewardConfig r;
  r.r_click = real("r_click");
  r.r_purchase = real("r_purchase");
  r.r_negative = real("r_negative");
  r.gamma = real("gamma");
  return r;
}

TrainingConfig RunConfig::training() const {
  TrainingConfig c;
  try {
    c.mode = parse_mode(text("mode"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.batch_size = count("batch_size");
  c.learning_rate_main = real("learning_rate_main");
  c.learning_rate_post_pretrain = real("learning_rate_post_pretrain");
  c.pretrain_steps = count("pretrain_steps");
  c.neg_samples = count("neg_samples");
  c.seed = count("seed");
  c.max_steps = count("max_steps");
  c.max_epochs = count("max_epochs");
  c.log_every = count("log_every");
  c.eval_every = count("eval_every");
  c.rho_cap = real("rho_cap");
  c.init_scale = real("init_scale");
  c.rewards = rewards();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

PreprocessConfig RunConfig::preprocessing() const {
  PreprocessConfig p;
  p.min_session_len = count("min_session_len");
  p.min_item_freq = count("min_item_freq");
  p.sample_sessions = count("sample_sessions");
  p.seed = count("seed");
  if (p.min_session_len < 2) throw ConfigError("min_session_len must be at least 2");
  return p;
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& k : config_schema()) j[k.name] = values_.at(k.name);
  return j.dump();
}

}  // namespace snqn

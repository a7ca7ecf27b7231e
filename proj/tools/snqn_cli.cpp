// snqn: preprocess / train / evaluate / simulate / gradcheck.
// Exit codes: 0 success, 1 check or runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "snqn/config.hpp"
#include "snqn/data.hpp"
#include "snqn/evaluation.hpp"
#include "snqn/kernels.hpp"
#include "snqn/synthetic.hpp"
#include "snqn/training.hpp"

namespace fs = std::filesystem;
using namespace snqn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string dashed(std::string name) {
  std::replace(name.begin(), name.end(), '_', '-');
  return name;
}

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string require(const RunConfig& rc, const std::string& key) {
  const auto& v = rc.text(key);
  if (v.empty()) throw UsageError("missing required --" + dashed(key));
  return v;
}

void apply_threads(const RunConfig& rc) {
  if (auto n = rc.count("threads"); n > 0) kernels::set_threads(static_cast<int>(n));
}

std::string expand_seed(std::string pattern, std::uint64_t seed) {
  const std::string tag = "{seed}";
  for (auto pos = pattern.find(tag); pos != std::string::npos; pos = pattern.find(tag))
    pattern.replace(pos, tag.size(), std::to_string(seed));
  return pattern;
}

void print_stats(const ReplayDataset& ds) {
  const auto s = ds.stats();
  std::printf("%-12s %10s %8s %10s %10s\n", "", "sequences", "items", "clicks", "purchases");
  std::printf("%-12s %10zu %8zu %10zu %10zu\n", "dataset", s.sequences, s.items, s.clicks, s.purchases);
  std::printf("digest %s  split train/val/test = %zu/%zu/%zu\n", ds.digest().c_str(),
              ds.sessions_in(Split::train).size(), ds.sessions_in(Split::val).size(),
              ds.sessions_in(Split::test).size());
}

int cmd_preprocess(const RunConfig& rc) {
  const auto input = require(rc, "input");
  const auto out = require(rc, "out");
  const auto format = parse_log_format(rc.text("format"));
  if (!fs::exists(input)) throw UsageError("input not found: " + input);
  if (format == LogFormat::rc15 && !fs::exists(rc.text("buys")))
    throw UsageError("input not found: " + (rc.text("buys").empty() ? "<buys file>" : rc.text("buys")));
  const auto events = ingest(format, input, rc.text("buys"));
  auto ds = preprocess(events, rc.preprocessing());
  ds.notes["format"] = rc.text("format");
  if (format == LogFormat::retailrocket)
    ds.notes["behavior_mapping"] = "view->click; addtocart->purchase; transaction->purchase";
  save_dataset(ds, out, rc.to_json());
  print_stats(ds);
  return 0;
}

int cmd_simulate(const RunConfig& rc) {
  const auto out = require(rc, "out");
  const auto& preset = rc.text("preset");
  auto spec = SyntheticSpec::preset(preset);
  spec.seed = rc.count("synthetic_seed");
  const auto behavior = parse_behavior(rc.text("behavior"));
  const auto n = rc.count("n_sessions");
  const auto events = generate_log(spec, n, behavior);
  fs::create_directories(out);
  {
    std::ofstream log(fs::path(out) / "log.tsv");
    write_generic_tsv(log, events);
  }
  std::size_t buys = 0;
  for (const auto& e : events) buys += e.behavior == Interaction::purchase;
  nlohmann::ordered_json j;
  j["preset"] = preset;
  j["sessions"] = n;
  j["events"] = events.size();
  j["purchase_fraction"] = events.empty() ? 0.0 : static_cast<double>(buys) / events.size();
  j["expected_purchase_fraction"] = expected_purchase_fraction(spec, behavior);
  if (n > 0) {
    auto ds = simulate_dataset(spec, preset, n, behavior, rc.preprocessing());
    save_dataset(ds, (fs::path(out) / "dataset").string(), rc.to_json());
    j["dataset"] = (fs::path(out) / "dataset").string();
    j["digest"] = ds.digest();
  }
  write_file(fs::path(out) / "simulate.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

nlohmann::ordered_json train_one(const RunConfig& rc, const ReplayDataset& ds, std::uint64_t seed,
                                 const fs::path& out) {
  auto cfg = rc.training();
  cfg.seed = seed;
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl");
  TrainingHooks hooks;
  hooks.log = &log;
  auto res = run_training(cfg, ds, hooks);
  res.nets.save((out / "final.ckpt").string());
  save_checkpoint((out / "best.ckpt").string(), res.best.store());

  nlohmann::ordered_json summary;
  summary["mode"] = to_string(cfg.mode);
  summary["seed"] = seed;
  summary["steps"] = res.steps;
  summary["best_step"] = res.best_step;
  summary["best_metric"] = res.best_metric;
  if (auto origin = synthetic_origin(ds); origin && cfg.mode != TrainMode::supervised_only) {
    const auto chk = oracle_check(res.nets.net1, ds, *origin, cfg.rewards, cfg.batch_size,
                                  cfg.neg_samples, cfg.seed, rc.count("min_visits"));
    nlohmann::ordered_json o;
    o["step"] = res.steps;
    o["oracle_max_abs_deviation"] = chk.deviation.max_abs;
    o["max_visited_q"] = chk.deviation.max_learned;
    o["pairs"] = chk.n_pairs;
    o["min_visits"] = rc.count("min_visits");
    o["oracle_states"] = chk.n_states;
    log << o.dump() << "\n";
    summary["oracle"] = o;
  }
  write_file(out / "summary.json", summary.dump(2) + "\n");
  return summary;
}

int cmd_train(const RunConfig& rc) {
  const auto dataset = require(rc, "dataset");
  const auto out = require(rc, "out");
  rc.training();  // schema-level checks before any work
  apply_threads(rc);
  const auto ds = load_dataset(dataset);
  auto seeds = rc.counts("seeds");
  if (seeds.empty()) {
    const auto s = train_one(rc, ds, rc.count("seed"), out);
    std::cout << s.dump(2) << "\n";
  } else {
    for (auto seed : seeds) {
      const auto s = train_one(rc, ds, seed, fs::path(out) / ("seed-" + std::to_string(seed)));
      std::cout << s.dump() << "\n";
    }
  }
  return 0;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

int cmd_evaluate(const RunConfig& rc) {
  const auto dataset = require(rc, "dataset");
  const auto checkpoint = require(rc, "checkpoint");
  Head head;
  try {
    head = parse_head(rc.text("head"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  apply_threads(rc);
  const auto ds = load_dataset(dataset);
  EvalOptions opts;
  opts.head = head;
  opts.ks.clear();
  for (auto k : rc.counts("ks")) opts.ks.push_back(k);
  if (opts.ks.empty()) throw ConfigError("ks must list at least one cutoff");
  for (auto k : opts.ks)
    if (k == 0 || k > ds.n_items())
      throw ConfigError("cutoff " + std::to_string(k) + " outside [1, n_items]");
  const auto split = parse_split(rc.text("split"));
  const auto policy = ItemFrequencyPolicy::from_dataset(ds);

  auto run = [&](const std::string& path) {
    if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
    return evaluate(DualNetworks::load(path).net1, ds, split, policy, opts);
  };
  auto with_timestamp = [](const MetricsReport& r) {
    auto j = nlohmann::ordered_json::parse(r.to_json());
    j["timestamp"] = now_iso();
    return j.dump(2) + "\n";
  };
  const fs::path out = rc.text("out");
  std::vector<MetricsReport> reports;
  const auto seeds = rc.counts("seeds");
  if (seeds.empty()) {
    reports.push_back(run(checkpoint));
  } else {
    for (auto seed : seeds) {
      reports.push_back(run(expand_seed(checkpoint, seed)));
      if (!out.empty()) write_file(out / ("metrics-seed-" + std::to_string(seed) + ".json"), with_timestamp(reports.back()));
    }
  }
  const auto report = mean_report(reports);
  if (!out.empty()) {
    write_file(out / "metrics.json", with_timestamp(report));
    write_file(out / "metrics.txt", report.to_table());
  }
  std::cout << report.to_table();
  return 0;
}

int cmd_gradcheck(const RunConfig& rc, const std::string& corrupt) {
  apply_threads(rc);
  std::vector<TrainMode> modes;
  for (const auto& m : rc.texts("modes")) {
    try {
      modes.push_back(parse_mode(m));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (modes.empty()) throw ConfigError("modes must name at least one loss mode");
  auto seeds = rc.counts("seeds");
  if (seeds.empty()) seeds = {1, 2, 3};
  GradcheckOptions opts;
  opts.probes = rc.count("probes");
  opts.corrupt = corrupt;
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  nlohmann::ordered_json results = nlohmann::ordered_json::array();
  std::printf("%-16s %6s %7s %12s  %s\n", "mode", "seed", "probes", "max_rel_err", "worst parameter");
  for (auto mode : modes) {
    for (auto seed : seeds) {
      const auto r = gradcheck_mode(mode, seed, opts);
      const bool pass = r.report.max_rel_error < kTolerance;
      ok = ok && pass;
      std::printf("%-16s %6llu %7zu %12.3e  %s[%zu]%s\n", to_string(mode),
                  static_cast<unsigned long long>(seed), r.report.probes, r.report.max_rel_error,
                  r.report.worst_param.c_str(), r.report.worst_index, pass ? "" : "  FAIL");
      if (!pass)
        std::fprintf(stderr, "gradcheck failed: mode %s seed %llu parameter '%s' (analytic %.6e, numeric %.6e)\n",
                     to_string(mode), static_cast<unsigned long long>(seed), r.report.worst_param.c_str(),
                     r.report.worst_analytic, r.report.worst_numeric);
      nlohmann::ordered_json j;
      j["mode"] = to_string(mode);
      j["seed"] = seed;
      j["probes"] = r.report.probes;
      j["max_rel_error"] = r.report.max_rel_error;
      j["worst_param"] = r.report.worst_param;
      j["pass"] = pass;
      results.push_back(j);
    }
  }
  if (!rc.text("out").empty()) write_file(fs::path(rc.text("out")) / "gradcheck.json", results.dump(2) + "\n");
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session recommendation with supervised negative Q-learning (SNQN) and SA2C"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Sub {
    CLI::App* app;
    std::string config;
    std::map<std::string, std::string> values;
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"preprocess", "Ingest a session log, filter, split 8:1:1 and write a dataset directory"},
      {"train", "Train networks on a dataset and write checkpoints plus a JSON-lines log"},
      {"evaluate", "Compute HR/NDCG/NG_off of a checkpoint on a dataset split"},
      {"simulate", "Generate a synthetic session log and dataset"},
      {"gradcheck", "Finite-difference check of every loss mode in 64-bit"},
  };
  std::map<std::string, Sub> subs;
  std::string corrupt;
  for (const auto& [name, help] : commands) {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, help);
    s.app->add_option("--config", s.config, "key = value configuration file (command-line flags override it)");
    for (const auto& k : config_schema()) {
      std::string desc = k.help;
      if (!k.default_value.empty()) desc += " [default: " + k.default_value + "]";
      std::string flags = "--" + dashed(k.name);
      if (k.name == "input") flags += ",--in";
      if (k.name == "ks") flags += ",--k";
      s.app->add_option(flags, s.values[k.name], desc);
    }
    if (name == "gradcheck")
      s.app->add_option("--corrupt-param", corrupt, "test hook: perturb this parameter's analytic gradient");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    try {
      RunConfig rc;
      if (!s.config.empty()) rc.load_file(s.config);
      for (const auto& k : config_schema())
        if (s.app->count("--" + dashed(k.name)) > 0) rc.set(k.name, s.values[k.name]);
      if (name == "preprocess") return cmd_preprocess(rc);
      if (name == "train") return cmd_train(rc);
      if (name == "evaluate") return cmd_evaluate(rc);
      if (name == "simulate") return cmd_simulate(rc);
      if (name == "gradcheck") return cmd_gradcheck(rc, corrupt);
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return 2;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}

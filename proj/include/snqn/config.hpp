#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "snqn/data.hpp"
#include "snqn/training.hpp"

namespace snqn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ValueType { text, integer, count, real, count_list, text_list };

struct ConfigKey {
  std::string name;
  ValueType type;
  std::string default_value;
  std::string help;
};

/// Every key a run configuration may contain.
const std::vector<ConfigKey>& config_schema();

/// key=value settings checked against config_schema(). Later assignments win,
/// so load the file first and apply command-line overrides after it.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  /// Lines of "key = value"; '#' starts a comment.
  void parse(std::istream& in, const std::string& source);
  void load_file(const std::string& path);

  const std::string& text(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t count(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<std::uint64_t> counts(const std::string& key) const;
  std::vector<std::string> texts(const std::string& key) const;

  RewardConfig rewards() const;
  TrainingConfig training() const;
  PreprocessConfig preprocessing() const;

  /// All values in schema order.
  std::string to_json() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const ConfigKey& key(const std::string& name) const;
  std::map<std::string, std::string> values_;
};

}  // namespace snqn

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bddm::cli {

/// Reads parameters from a JSON object and records the value actually used
/// (given or defaulted) into a resolved copy, which is written next to every output.
class ConfigView {
 public:
  ConfigView(const nlohmann::json* source, nlohmann::json* resolved)
      : source_(source), resolved_(resolved) {}

  template <typename T>
  T get(const std::string& key, const T& fallback) const {
    T value = fallback;
    if (source_ && source_->contains(key)) {
      try {
        value = source_->at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw_bad(key, e.what());
      }
    }
    (*resolved_)[key] = value;
    return value;
  }

  template <typename T>
  T require(const std::string& key) const {
    if (!source_ || !source_->contains(key)) throw_missing(key);
    return get<T>(key, T{});
  }

  bool has(const std::string& key) const { return source_ && source_->contains(key); }
  ConfigView sub(const std::string& key) const;

 private:
  [[noreturn]] static void throw_bad(const std::string& key, const std::string& why);
  [[noreturn]] static void throw_missing(const std::string& key);

  const nlohmann::json* source_;
  nlohmann::json* resolved_;
};

struct Context {
  nlohmann::json config;
  std::filesystem::path config_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  bool quiet = false;
};

/// Loads the config; `--out` and `--seed` take precedence over the file's values.
Context make_context(const std::string& config_path, const std::optional<std::string>& out_dir,
                     const std::optional<std::uint64_t>& seed);

const std::vector<std::string>& command_names();

/// Runs one command; throws ConfigError / NumericalFailure / DomainError on failure.
void run_command(const std::string& name, const Context& ctx);

/// 0 success, 2 configuration error, 3 numerical failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace bddm::cli

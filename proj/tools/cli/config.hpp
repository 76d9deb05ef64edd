#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polypforge/dataset.hpp"
#include "polypforge/error.hpp"

namespace polypforge::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kValidation = 2, kMissingUpstream = 3 };

/// Maps a library error onto the exit-code contract.
int exit_code_for(ErrorKind kind) noexcept;
std::string_view category_for(int exit_code) noexcept;

/// Throws spec_validation with a message that starts with the field name.
[[noreturn]] void invalid(std::string_view field, const std::string& why);

/// Runs `fn`, renaming validation failures after `field`.
template <class F>
auto checked(std::string_view field, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    invalid(field, e.what());
  } catch (const Error& e) {
    if (exit_code_for(e.kind()) == kValidation) invalid(field, e.what());
    throw;
  }
}

/// Settings common to every command. Flags win over the config file.
struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> out;
  std::string log_level = "info";
};

/// A pipeline document: one JSON object with a section per stage. Relative
/// paths inside it resolve against the directory of the file.
class PipelineConfig {
 public:
  PipelineConfig();
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(nlohmann::json doc, std::filesystem::path base);

  /// The named object, or an empty one when absent.
  const nlohmann::json& section(std::string_view name) const;
  std::filesystem::path resolve(const std::string& path) const;
  const nlohmann::json& doc() const noexcept { return doc_; }

  std::uint64_t seed(const GlobalOptions& g) const;
  int jobs(const GlobalOptions& g) const;
  /// --out, then the file's "out", then $POLYPFORGE_OUT, then ./polypforge-out.
  std::filesystem::path output_root(const GlobalOptions& g) const;
  /// Label set from the "labels" array, if any.
  std::optional<data::LabelSet> labels() const;

 private:
  nlohmann::json doc_;
  std::filesystem::path base_;
};

/// Typed lookup of `section.key`, with the field named in any error.
template <class T>
T value_or(const nlohmann::json& section, std::string_view section_name, const std::string& key, T fallback) {
  if (!section.contains(key)) return fallback;
  return checked(std::string(section_name) + "." + key, [&] { return section.at(key).get<T>(); });
}

template <class T>
std::optional<T> optional_value(const nlohmann::json& section, std::string_view section_name,
                                const std::string& key) {
  if (!section.contains(key) || section.at(key).is_null()) return std::nullopt;
  return checked(std::string(section_name) + "." + key, [&] { return section.at(key).get<T>(); });
}

/// Splits "a,b , c" into trimmed non-empty parts.
std::vector<std::string> split_list(std::string_view text);

}  // namespace polypforge::cli

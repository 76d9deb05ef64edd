#include "cli/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace polypforge::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string, std::less<>> kSections{"out",   "seed",      "jobs",     "labels",     "data",
                                                   "toy",   "classifier", "filter",   "gan",        "dcgan",
                                                   "translate", "ablation", "experiment", "service"};

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::spec_validation:
    case ErrorKind::unknown_label:
    case ErrorKind::unknown_class:
      return kValidation;
    case ErrorKind::missing_file:
    case ErrorKind::dangling_reference:
      return kMissingUpstream;
    default:
      return kRuntime;
  }
}

std::string_view category_for(int exit_code) noexcept {
  switch (exit_code) {
    case kValidation: return "validation";
    case kMissingUpstream: return "missing-upstream";
    default: return "runtime";
  }
}

void invalid(std::string_view field, const std::string& why) {
  throw Error(ErrorKind::spec_validation, "invalid " + std::string(field) + ": " + why);
}

PipelineConfig::PipelineConfig() : doc_(json::object()), base_(fs::current_path()) {}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::missing_file, "config file " + path.string() + " not found");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    invalid("config", path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(std::move(doc), fs::absolute(path).parent_path());
}

PipelineConfig PipelineConfig::from_json(json doc, fs::path base) {
  if (!doc.is_object()) invalid("config", "top level must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!kSections.contains(key)) invalid(key, "unknown config section");
    const bool scalar = key == "out" || key == "seed" || key == "jobs" || key == "labels";
    if (!scalar && !value.is_object()) invalid(key, "must be an object");
  }
  PipelineConfig c;
  c.doc_ = std::move(doc);
  c.base_ = std::move(base);
  return c;
}

const json& PipelineConfig::section(std::string_view name) const {
  static const json empty = json::object();
  auto it = doc_.find(std::string(name));
  return it == doc_.end() ? empty : *it;
}

fs::path PipelineConfig::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : base_ / p;
}

std::uint64_t PipelineConfig::seed(const GlobalOptions& g) const {
  if (g.seed) return *g.seed;
  return value_or<std::uint64_t>(doc_, "config", "seed", 1);
}

int PipelineConfig::jobs(const GlobalOptions& g) const {
  const int j = g.jobs ? *g.jobs : value_or<int>(doc_, "config", "jobs", 1);
  if (j < 1) invalid("jobs", "must be at least 1");
  return j;
}

fs::path PipelineConfig::output_root(const GlobalOptions& g) const {
  if (g.out) return *g.out;
  if (doc_.contains("out")) return resolve(value_or<std::string>(doc_, "config", "out", ""));
  if (const char* env = std::getenv("POLYPFORGE_OUT"); env && *env) return env;
  return "polypforge-out";
}

std::optional<data::LabelSet> PipelineConfig::labels() const {
  if (!doc_.contains("labels")) return std::nullopt;
  return checked("labels", [&] {
    data::LabelSet set;
    for (const auto& l : doc_.at("labels")) set.push_back({l.at("name").get<std::string>(), l.value("adenomatous", false)});
    return set;
  });
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto part = text.substr(start, end - start);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    if (!part.empty()) out.emplace_back(part);
    start = end + 1;
  }
  return out;
}

}  // namespace polypforge::cli

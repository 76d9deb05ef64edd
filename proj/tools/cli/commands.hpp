#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cli/config.hpp"

namespace polypforge::cli {

struct Context {
  GlobalOptions global;
  PipelineConfig config;
  std::vector<std::string> argv;
  std::ostream* out = nullptr;
  /// run.json of a run that stopped early, so the error can be recorded.
  std::optional<std::filesystem::path> unfinished_run;
};

struct ToygenOptions {
  std::optional<std::filesystem::path> spec;
};

struct TrainClassifierOptions {
  std::optional<std::filesystem::path> manifest;
  std::optional<int> epochs;
};

struct FilterOptions {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> classifier;
  std::optional<std::string> target_class;
  std::optional<std::string> alpha;
  std::optional<std::string> scoring;
};

struct TrainGanOptions {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> subset;
  std::optional<std::string> source_class;
  std::optional<std::string> target_class;
  std::optional<std::string> model;
  std::optional<int> epochs;
};

struct TranslateOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::string> source_class;
  std::optional<std::string> target_class;
  std::optional<std::string> direction;
  std::optional<int> count;
};

struct AblationOptions {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::string> alphas;
  std::optional<std::string> classes;
  std::optional<std::string> source_class;
  std::optional<std::string> scoring;
};

struct ExperimentOptions {
  std::optional<std::filesystem::path> manifest;
  std::vector<std::string> arms;  // NAME=PATH
  std::optional<std::string> positive_class;
  bool synthetic_only = false;
};

struct ServeOptions {
  std::vector<std::filesystem::path> manifests;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<std::filesystem::path> state_dir;
  std::optional<std::filesystem::path> ui_dir;
  /// Cleared to stop the server; the CLI wires it to SIGINT and SIGTERM.
  std::atomic<bool>* keep_running = nullptr;
};

void cmd_toygen(Context& ctx, const ToygenOptions& o);
void cmd_train_classifier(Context& ctx, const TrainClassifierOptions& o);
void cmd_filter(Context& ctx, const FilterOptions& o);
void cmd_train_gan(Context& ctx, const TrainGanOptions& o);
void cmd_translate(Context& ctx, const TranslateOptions& o);
void cmd_ablation(Context& ctx, const AblationOptions& o);
void cmd_experiment(Context& ctx, const ExperimentOptions& o);
void cmd_serve(Context& ctx, const ServeOptions& o);

}  // namespace polypforge::cli

#include "cli/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <fstream>
#include <functional>

#include "cli/commands.hpp"
#include "polypforge/logging.hpp"

namespace polypforge::cli {

namespace {

std::atomic<bool> g_keep_serving{true};

extern "C" void on_signal(int) { g_keep_serving = false; }

void record_failure(const Context& ctx, const std::string& message) {
  if (!ctx.unfinished_run) return;
  try {
    std::ifstream in(*ctx.unfinished_run);
    auto j = nlohmann::json::parse(in);
    j["error"] = message;
    std::ofstream(*ctx.unfinished_run) << j.dump(2) << "\n";
  } catch (...) {
    // run.json stays marked failed without the message
  }
}

template <class T>
CLI::Option* optional_flag(CLI::App* app, const std::string& name, std::optional<T>& target,
                           const std::string& help) {
  return app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"polypforge: filtered cycle-consistent synthesis pipeline", "polypforge"};
  app.require_subcommand(1);
  Context ctx;
  ctx.argv = args;
  ctx.out = &out;

  std::string config_path;
  app.add_option("--config", config_path, "Pipeline config (JSON)");
  optional_flag(&app, "--seed", ctx.global.seed, "Seed overriding the config");
  optional_flag(&app, "--jobs", ctx.global.jobs, "Concurrent cells for ablation and experiment");
  optional_flag(&app, "--out", ctx.global.out, "Output root (default $POLYPFORGE_OUT)");
  app.add_option("--log-level", ctx.global.log_level, "trace, debug, info, warn, error or off");

  std::function<void()> action;

  ToygenOptions toygen;
  auto* c_toygen = app.add_subcommand("toygen", "Generate the synthetic toy dataset");
  optional_flag(c_toygen, "--spec", toygen.spec, "Toy domain spec (JSON)");
  c_toygen->callback([&] { action = [&] { cmd_toygen(ctx, toygen); }; });

  TrainClassifierOptions tc;
  auto* c_tc = app.add_subcommand("train-classifier", "Train a residual tile classifier");
  optional_flag(c_tc, "--manifest", tc.manifest, "Dataset manifest");
  optional_flag(c_tc, "--epochs", tc.epochs, "Epochs");
  c_tc->callback([&] { action = [&] { cmd_train_classifier(ctx, tc); }; });

  FilterOptions fo;
  auto* c_filter = app.add_subcommand("filter", "Rank a class by classifier confidence and keep the top alpha");
  optional_flag(c_filter, "--manifest", fo.manifest, "Dataset manifest");
  optional_flag(c_filter, "--classifier", fo.classifier, "Trained classifier checkpoint");
  optional_flag(c_filter, "--target-class", fo.target_class, "Class to rank");
  optional_flag(c_filter, "--alpha", fo.alpha, "Kept fraction in (0, 1], e.g. 0.25 or 1/4");
  optional_flag(c_filter, "--scoring", fo.scoring, "in_sample or cross_fit");
  c_filter->callback([&] { action = [&] { cmd_filter(ctx, fo); }; });

  TrainGanOptions go;
  auto* c_gan = app.add_subcommand("train-gan", "Train a CycleGAN (or DCGAN baseline)");
  optional_flag(c_gan, "--manifest", go.manifest, "Dataset manifest");
  optional_flag(c_gan, "--subset", go.subset, "subset.csv from filter restricting the target domain");
  optional_flag(c_gan, "--source-class", go.source_class, "Domain X class");
  optional_flag(c_gan, "--target-class", go.target_class, "Domain Y class");
  optional_flag(c_gan, "--model", go.model, "cyclegan or dcgan");
  optional_flag(c_gan, "--epochs", go.epochs, "Epochs");
  c_gan->callback([&] { action = [&] { cmd_train_gan(ctx, go); }; });

  TranslateOptions to;
  auto* c_tr = app.add_subcommand("translate", "Generate synthetic tiles from a checkpoint");
  optional_flag(c_tr, "--checkpoint", to.checkpoint, "GAN checkpoint");
  optional_flag(c_tr, "--manifest", to.manifest, "Manifest holding the source tiles");
  optional_flag(c_tr, "--source-class", to.source_class, "Class to translate");
  optional_flag(c_tr, "--target-class", to.target_class, "Label of the synthetic tiles");
  optional_flag(c_tr, "--direction", to.direction, "x_to_y or y_to_x");
  optional_flag(c_tr, "--count", to.count, "Tiles to generate");
  c_tr->callback([&] { action = [&] { cmd_translate(ctx, to); }; });

  AblationOptions ao;
  auto* c_ab = app.add_subcommand("ablation", "Alpha ablation grid");
  optional_flag(c_ab, "--manifest", ao.manifest, "Dataset manifest");
  optional_flag(c_ab, "--alphas", ao.alphas, "Comma-separated alphas, e.g. 1,0.5,1/4");
  optional_flag(c_ab, "--classes", ao.classes, "Comma-separated target classes");
  optional_flag(c_ab, "--source-class", ao.source_class, "Domain X class");
  optional_flag(c_ab, "--scoring", ao.scoring, "in_sample or cross_fit");
  c_ab->callback([&] { action = [&] { cmd_ablation(ctx, ao); }; });

  ExperimentOptions eo;
  auto* c_ex = app.add_subcommand("experiment", "Classification with and without synthetic tiles");
  optional_flag(c_ex, "--manifest", eo.manifest, "Real dataset manifest with a test split");
  c_ex->add_option("--arm", eo.arms, "NAME=MANIFEST synthetic arm (repeatable)");
  optional_flag(c_ex, "--positive-class", eo.positive_class, "Positive class for AUC");
  c_ex->add_flag("--synthetic-only", eo.synthetic_only, "Represent the positive class by synthetic tiles only");
  c_ex->callback([&] { action = [&] { cmd_experiment(ctx, eo); }; });

  ServeOptions so;
  auto* c_serve = app.add_subcommand("serve", "Run the Turing test service");
  c_serve->add_option("--manifest", so.manifests, "Manifest with real or synthetic tiles (repeatable)");
  optional_flag(c_serve, "--host", so.host, "Bind address");
  optional_flag(c_serve, "--port", so.port, "Port (0 picks one)");
  optional_flag(c_serve, "--state-dir", so.state_dir, "Session directory");
  optional_flag(c_serve, "--ui-dir", so.ui_dir, "Static review UI bundle served at /ui/");
  c_serve->callback([&] { action = [&] { cmd_serve(ctx, so); }; });

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    log_to_stderr();
    init_logging_from_env(ctx.global.log_level);
    if (!config_path.empty()) ctx.config = PipelineConfig::load(config_path);
    ctx.global.config = config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path);
    so.keep_running = &g_keep_serving;
    g_keep_serving = true;
    auto previous_int = std::signal(SIGINT, on_signal);
    auto previous_term = std::signal(SIGTERM, on_signal);
    try {
      action();
    } catch (...) {
      std::signal(SIGINT, previous_int);
      std::signal(SIGTERM, previous_term);
      throw;
    }
    std::signal(SIGINT, previous_int);
    std::signal(SIGTERM, previous_term);
    return kOk;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    err << "error[" << category_for(code) << "/" << to_string(e.kind()) << "]: " << e.what() << "\n";
    record_failure(ctx, e.what());
    return code;
  } catch (const std::exception& e) {
    err << "error[runtime]: " << e.what() << "\n";
    record_failure(ctx, e.what());
    return kRuntime;
  }
}

}  // namespace polypforge::cli

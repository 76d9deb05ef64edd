#include "cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "polypforge/classifier.hpp"
#include "polypforge/filter.hpp"
#include "polypforge/gan.hpp"
#include "polypforge/hash.hpp"
#include "polypforge/image.hpp"
#include "polypforge/synthesis_eval.hpp"
#include "polypforge/toy_domain.hpp"
#include "polypforge/turing.hpp"
#include "polypforge/turing_service.hpp"

namespace polypforge::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";
// Stands in for the tile size when configs are checked before any data is read.
constexpr int kPreflightSize = 64;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(out.good(), ErrorKind::io, "cannot write " + path.string());
}

/// Fails with missing_file unless the upstream artifact exists.
fs::path upstream(const fs::path& path, std::string_view what) {
  require(fs::exists(path), ErrorKind::missing_file,
          std::string(what) + " " + path.string() + " not found; run the producing command first");
  return path;
}

json input_record(const fs::path& path) {
  return {{"path", fs::absolute(path).lexically_normal().string()}, {"sha256", sha256_file(path)}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Run directories

class RunDir {
 public:
  RunDir(Context& ctx, std::string command, json config, json inputs)
      : ctx_(ctx), command_(std::move(command)), config_(std::move(config)), inputs_(std::move(inputs)) {
    const json identity = {{"command", command_}, {"config", config_}, {"inputs", inputs_}};
    hash_ = sha256_hex(identity.dump());
    path_ = ctx.config.output_root(ctx.global) / "runs" / (command_ + "-" + hash_.substr(0, 12));
    fs::create_directories(path_);
    write("running", {});
  }
  ~RunDir() {
    if (!finished_) {
      write("failed", {});
      ctx_.unfinished_run = path_ / "run.json";
    }
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const fs::path& path() const noexcept { return path_; }

  /// Registers an artifact and returns its absolute path.
  fs::path add(const fs::path& relative) {
    artifacts_.push_back(relative.generic_string());
    return path_ / relative;
  }

  void finish() {
    finished_ = true;
    write("ok", {});
    *ctx_.out << (path_ / "run.json").string() << "\n";
    for (const auto& a : artifacts_) *ctx_.out << (path_ / a).string() << "\n";
  }

 private:
  void write(const std::string& status, const std::string& error) const {
    json j = {{"command", command_},
              {"argv", ctx_.argv},
              {"config", config_},
              {"config_hash", hash_},
              {"inputs", inputs_},
              {"artifacts", artifacts_},
              {"status", status},
              {"version", kVersion}};
    if (!error.empty()) j["error"] = error;
    write_text(path_ / "run.json", j.dump(2) + "\n");
  }

  Context& ctx_;
  std::string command_;
  json config_;
  json inputs_;
  std::string hash_;
  fs::path path_;
  std::vector<std::string> artifacts_;
  bool finished_ = false;
};

namespace {

// ---------------------------------------------------------------------------
// Shared resolution

template <class T>
T pick(const std::optional<T>& flag, const json& section, std::string_view name, const std::string& key,
       T fallback) {
  if (flag) return *flag;
  return value_or<T>(section, name, key, fallback);
}

template <class T>
std::optional<T> pick(const std::optional<T>& flag, const json& section, std::string_view name,
                      const std::string& key) {
  if (flag) return flag;
  return optional_value<T>(section, name, key);
}

std::string required(std::optional<std::string> v, std::string_view field) {
  if (!v || v->empty()) invalid(field, "required");
  return *v;
}

/// --seed, then the section's seed, then the top-level seed.
std::uint64_t stage_seed(const Context& ctx, const json& section, std::string_view name) {
  if (ctx.global.seed) return *ctx.global.seed;
  if (section.contains("seed")) return value_or<std::uint64_t>(section, name, "seed", 0);
  return ctx.config.seed(ctx.global);
}

fs::path manifest_path(const Context& ctx, const std::optional<fs::path>& flag, const json& section,
                       std::string_view name) {
  if (flag) return *flag;
  if (auto p = optional_value<std::string>(section, name, "manifest")) return ctx.config.resolve(*p);
  if (auto p = optional_value<std::string>(ctx.config.section("data"), "data", "manifest")) {
    return ctx.config.resolve(*p);
  }
  invalid(std::string(name) + ".manifest", "required (or data.manifest, or --manifest)");
}

data::LabelSet read_labels_file(const fs::path& path) {
  std::ifstream in(path);
  return checked(path.string(), [&] {
    data::LabelSet set;
    for (const auto& l : json::parse(in)) set.push_back({l.at("name").get<std::string>(), l.value("adenomatous", false)});
    return set;
  });
}

void write_labels_file(const fs::path& path, const data::LabelSet& labels) {
  json j = json::array();
  for (const auto& l : labels) j.push_back({{"name", l.name}, {"adenomatous", l.is_adenomatous}});
  write_text(path, j.dump(2) + "\n");
}

/// labels.json beside the manifest, then the config's labels, then the
/// reference set.
data::DatasetManifest open_manifest(const Context& ctx, const fs::path& path) {
  upstream(path, "manifest");
  data::LoadOptions opts;
  if (fs::exists(path.parent_path() / "labels.json")) {
    opts.label_set = read_labels_file(path.parent_path() / "labels.json");
  } else if (auto labels = ctx.config.labels()) {
    opts.label_set = *labels;
  }
  return data::load_manifest(path, opts);
}

std::vector<data::ImageTile> tiles_in(const data::DatasetManifest& m, data::Split split) {
  return data::load_tiles(m.with_split(split));
}

std::vector<data::ImageTile> with_label(const std::vector<data::ImageTile>& tiles, std::string_view label) {
  std::vector<data::ImageTile> out;
  for (const auto& t : tiles) {
    if (t.label == label) out.push_back(t);
  }
  return out;
}

/// Label-set order, restricted to labels that occur in `tiles`.
std::vector<std::string> present_labels(const data::LabelSet& set, std::span<const data::ImageTile> tiles) {
  std::set<std::string> seen;
  for (const auto& t : tiles) seen.insert(t.label);
  std::vector<std::string> out;
  for (const auto& l : set) {
    if (seen.contains(l.name)) out.push_back(l.name);
  }
  return out;
}

int tile_size(std::span<const data::ImageTile> tiles) {
  require(!tiles.empty(), ErrorKind::empty_input, "no tiles to infer the image size from");
  return tiles.front().pixels.width;
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const auto* k : keys) j.erase(k);
  return j;
}

classify::ClassifierConfig classifier_config(const Context& ctx, int image_size, std::optional<int> epochs = {}) {
  const auto& sec = ctx.config.section("classifier");
  classify::ClassifierConfig base;
  base.input_size = image_size;
  auto c = checked("classifier", [&] { return classify::classifier_config_from_json(sec, base); });
  c.seed = stage_seed(ctx, sec, "classifier");
  if (epochs) c.epochs = *epochs;
  checked("classifier", [&] { classify::validate(c); });
  return c;
}

gan::GanConfig gan_config(const Context& ctx, int image_size, std::optional<int> epochs = {}) {
  const auto& sec = ctx.config.section("gan");
  gan::GanConfig base;
  base.image_size = image_size;
  auto c = checked("gan", [&] { return gan::gan_config_from_json(without(sec, {"model", "source_class", "target_class", "subset", "manifest"}), base); });
  c.seed = stage_seed(ctx, sec, "gan");
  if (epochs) c.epochs = *epochs;
  checked("gan", [&] { gan::validate(c); });
  return c;
}

gan::DcganConfig dcgan_config(const Context& ctx, int image_size, std::optional<int> epochs = {}) {
  const auto& sec = ctx.config.section("dcgan");
  gan::DcganConfig base;
  base.image_size = image_size;
  auto c = checked("dcgan", [&] { return gan::dcgan_config_from_json(sec, base); });
  c.seed = stage_seed(ctx, sec, "dcgan");
  if (epochs) c.epochs = *epochs;
  checked("dcgan", [&] { gan::validate(c); });
  return c;
}

filter::ScoringMode parse_scoring(const std::string& text, std::string_view field) {
  if (text == "in_sample" || text == "in-sample") return filter::ScoringMode::in_sample;
  if (text == "cross_fit" || text == "cross-fit") return filter::ScoringMode::cross_fit;
  invalid(field, "expected in_sample or cross_fit, got '" + text + "'");
}

std::string history_csv(const std::vector<classify::EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ','
        << r.val_accuracy << ',' << r.learning_rate << '\n';
  }
  return out.str();
}

std::set<std::string> read_id_list(const fs::path& path) {
  std::ifstream in(path);
  std::set<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ids.insert(line);
  }
  return ids;
}

std::string id_list(const std::set<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += id + "\n";
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_toygen(Context& ctx, const ToygenOptions& o) {
  toy::ToyDomainSpec spec;
  json inputs = json::object();
  if (o.spec) {
    upstream(*o.spec, "toy spec");
    spec = checked("toy", [&] { return toy::load_toy_spec(*o.spec); });
    inputs["spec"] = input_record(*o.spec);
  } else if (ctx.config.doc().contains("toy")) {
    spec = checked("toy", [&] { return toy::parse_toy_spec(ctx.config.section("toy")); });
  } else {
    invalid("toy", "required (config section or --spec)");
  }
  if (ctx.global.seed) spec.seed = *ctx.global.seed;
  checked("toy", [&] { toy::validate(spec); });

  RunDir run(ctx, "toygen", toy::to_json(spec), inputs);
  const auto manifest = toy::generate_toy_dataset(spec, run.path());
  write_labels_file(run.add("labels.json"), toy::label_set(spec));
  run.add("manifest.jsonl");
  (void)manifest;
  run.finish();
}

void cmd_train_classifier(Context& ctx, const TrainClassifierOptions& o) {
  const auto& sec = ctx.config.section("classifier");
  const auto mpath = manifest_path(ctx, o.manifest, sec, "classifier");
  if (o.epochs && *o.epochs < 1) invalid("classifier.epochs", "must be at least 1");
  classifier_config(ctx, kPreflightSize, o.epochs);
  const auto manifest = open_manifest(ctx, mpath);
  const auto train = tiles_in(manifest, data::Split::train);
  const auto val = tiles_in(manifest, data::Split::val);
  require(!train.empty(), ErrorKind::empty_input, "manifest has no train tiles");
  const auto labels = present_labels(manifest.label_set, train);
  auto cc = classifier_config(ctx, tile_size(train), o.epochs);
  cc.num_classes = static_cast<int>(labels.size());

  json resolved = classify::to_json(cc);
  resolved["labels"] = labels;
  RunDir run(ctx, "train-classifier", resolved, {{"manifest", input_record(mpath)}});
  auto model = classify::train_classifier(classify::build_classifier(cc, labels), train, val);
  model.save(run.add("classifier.bin"));
  write_text(run.add("history.csv"), history_csv(model.history()));
  run.finish();
}

void cmd_filter(Context& ctx, const FilterOptions& o) {
  const auto& sec = ctx.config.section("filter");
  // Every field is checked before any upstream artifact is touched.
  const auto alpha_text = pick<std::string>(o.alpha, sec, "filter", "alpha", "1");
  const auto alpha = checked("filter.alpha", [&] { return filter::Alpha::parse(alpha_text); });
  const auto target_class = required(pick<std::string>(o.target_class, sec, "filter", "target_class"), "filter.target_class");
  // A supplied scorer is used as is; otherwise the class is cross-fitted.
  const bool has_scorer = o.classifier || sec.contains("classifier");
  const auto scoring = parse_scoring(pick<std::string>(o.scoring, sec, "filter", "scoring", has_scorer ? "in_sample" : "cross_fit"),
                                     "filter.scoring");
  std::optional<fs::path> scorer_path = o.classifier;
  if (!scorer_path) {
    if (auto p = optional_value<std::string>(sec, "filter", "classifier")) scorer_path = ctx.config.resolve(*p);
  }
  if (scoring == filter::ScoringMode::cross_fit) classifier_config(ctx, kPreflightSize);
  if (scoring == filter::ScoringMode::in_sample && !scorer_path) {
    invalid("filter.classifier", "in_sample scoring needs a trained classifier (--classifier)");
  }
  const auto mpath = manifest_path(ctx, o.manifest, sec, "filter");

  const auto manifest = open_manifest(ctx, mpath);
  json inputs = {{"manifest", input_record(mpath)}};
  if (scoring == filter::ScoringMode::in_sample) inputs["classifier"] = input_record(upstream(*scorer_path, "classifier"));
  const auto train = tiles_in(manifest, data::Split::train);
  const auto pool = with_label(train, target_class);
  require(!pool.empty(), ErrorKind::unknown_class, "no train tiles of class '" + target_class + "'");

  json resolved = {{"alpha", alpha.to_string()}, {"target_class", target_class}, {"scoring", filter::to_string(scoring)}};
  std::optional<classify::ClassifierConfig> cross_cfg;
  if (scoring == filter::ScoringMode::cross_fit) {
    cross_cfg = classifier_config(ctx, tile_size(train));
    resolved["classifier"] = classify::to_json(*cross_cfg);
  }
  RunDir run(ctx, "filter", resolved, inputs);
  filter::RankedSet ranking;
  if (scoring == filter::ScoringMode::in_sample) {
    const auto scorer = classify::TrainedClassifier::load(*scorer_path);
    ranking = filter::rank_by_target_probability(scorer, pool, target_class);
  } else {
    const auto labels = present_labels(manifest.label_set, train);
    cross_cfg->num_classes = static_cast<int>(labels.size());
    ranking = filter::cross_fit_ranking(train, target_class, *cross_cfg, labels);
  }
  const auto subset = filter::select_top_alpha(ranking, alpha);
  const auto audit = filter::audit_for(ranking, subset);
  const auto files = filter::write_filter_artifacts(run.path(), ranking, subset, audit);
  run.add(files.ranking_csv.filename());
  run.add(files.subset_csv.filename());
  run.add(files.audit_json.filename());
  run.finish();
}

void cmd_train_gan(Context& ctx, const TrainGanOptions& o) {
  const auto& sec = ctx.config.section("gan");
  const auto model = pick<std::string>(o.model, sec, "gan", "model", "cyclegan");
  if (model != "cyclegan" && model != "dcgan") invalid("gan.model", "expected cyclegan or dcgan, got '" + model + "'");
  const auto target_class = required(pick<std::string>(o.target_class, sec, "gan", "target_class"), "gan.target_class");
  std::string source_class;
  if (model == "cyclegan") source_class = required(pick<std::string>(o.source_class, sec, "gan", "source_class"), "gan.source_class");
  if (o.epochs && *o.epochs < 1) invalid("gan.epochs", "must be at least 1");
  std::optional<fs::path> subset_path = o.subset;
  if (!subset_path) {
    if (auto p = optional_value<std::string>(sec, "gan", "subset")) subset_path = ctx.config.resolve(*p);
  }
  const auto mpath = manifest_path(ctx, o.manifest, sec, "gan");
  if (model == "dcgan") {
    dcgan_config(ctx, kPreflightSize, o.epochs);
  } else {
    gan_config(ctx, kPreflightSize, o.epochs);
  }

  const auto manifest = open_manifest(ctx, mpath);
  json inputs = {{"manifest", input_record(mpath)}};
  const auto train = tiles_in(manifest, data::Split::train);
  auto Y = with_label(train, target_class);
  if (subset_path) {
    inputs["subset"] = input_record(upstream(*subset_path, "filtered subset"));
    const auto subset = filter::read_ranking_csv(*subset_path);
    std::map<std::string, const data::ImageTile*> by_id;
    for (const auto& t : Y) by_id.emplace(t.id, &t);
    std::vector<data::ImageTile> kept;
    for (const auto& e : subset.entries) {
      auto it = by_id.find(e.tile_id);
      require(it != by_id.end(), ErrorKind::dangling_reference,
              "subset tile '" + e.tile_id + "' is not a " + target_class + " train tile of the manifest");
      kept.push_back(*it->second);
    }
    Y = std::move(kept);
  }
  require(!Y.empty(), ErrorKind::empty_input, "no train tiles of class '" + target_class + "'");

  if (model == "dcgan") {
    const auto cfg = dcgan_config(ctx, tile_size(Y), o.epochs);
    json resolved = {{"model", model}, {"target_class", target_class}, {"dcgan", gan::to_json(cfg)}};
    RunDir run(ctx, "train-gan", resolved, inputs);
    const auto result = gan::train_dcgan(Y, cfg, [&](const gan::Checkpoint& c) {
      c.save(run.add("checkpoint-e" + std::to_string(c.epoch) + ".bin"));
    });
    result.final.save(run.add("checkpoint.bin"));
    write_text(run.add("losses.csv"), gan::dcgan_loss_csv(result.log));
    write_text(run.add("training_ids.txt"), id_list(eval::ids_of(Y)));
    run.finish();
    return;
  }

  const auto X = with_label(train, source_class);
  require(!X.empty(), ErrorKind::empty_input, "no train tiles of class '" + source_class + "'");
  const auto cfg = gan_config(ctx, tile_size(X), o.epochs);
  json resolved = {{"model", model}, {"source_class", source_class}, {"target_class", target_class}, {"gan", gan::to_json(cfg)}};
  RunDir run(ctx, "train-gan", resolved, inputs);
  auto ids = eval::ids_of(X);
  for (const auto& t : Y) ids.insert(t.id);
  write_text(run.add("training_ids.txt"), id_list(ids));
  try {
    const auto result = gan::train_cyclegan(X, Y, cfg, [&](const gan::Checkpoint& c) {
      c.save(run.add("checkpoint-e" + std::to_string(c.epoch) + ".bin"));
    });
    result.final.save(run.add("checkpoint.bin"));
    write_text(run.add("losses.csv"), gan::cycle_loss_csv(result.log));
  } catch (const gan::TrainingDiverged& e) {
    if (e.last_good()) e.last_good()->save(run.add("last-good.bin"));
    throw;
  }
  run.finish();
}

void cmd_translate(Context& ctx, const TranslateOptions& o) {
  const auto& sec = ctx.config.section("translate");
  std::optional<fs::path> ckpt_path = o.checkpoint;
  if (!ckpt_path) {
    if (auto p = optional_value<std::string>(sec, "translate", "checkpoint")) ckpt_path = ctx.config.resolve(*p);
  }
  if (!ckpt_path) invalid("translate.checkpoint", "required (--checkpoint)");
  const auto target_class = required(pick<std::string>(o.target_class, sec, "translate", "target_class"), "translate.target_class");
  const auto direction_text = pick<std::string>(o.direction, sec, "translate", "direction", "x_to_y");
  if (direction_text != "x_to_y" && direction_text != "y_to_x") {
    invalid("translate.direction", "expected x_to_y or y_to_x, got '" + direction_text + "'");
  }
  const auto split_text = value_or<std::string>(sec, "translate", "split", "train");
  const auto count = pick<int>(o.count, sec, "translate", "count");
  if (count && *count < 1) invalid("translate.count", "must be at least 1");
  const auto source_class = pick<std::string>(o.source_class, sec, "translate", "source_class");
  const auto mpath = manifest_path(ctx, o.manifest, sec, "translate");

  upstream(*ckpt_path, "checkpoint");
  const auto checkpoint = gan::Checkpoint::load(*ckpt_path);
  const auto manifest = open_manifest(ctx, mpath);
  json inputs = {{"manifest", input_record(mpath)}, {"checkpoint", input_record(*ckpt_path)}};
  json resolved = {{"target_class", target_class}, {"kind", checkpoint.kind}, {"checkpoint_id", checkpoint.id}};

  std::vector<data::ImageTile> synthetic;
  std::vector<data::ImageTile> sources;
  if (checkpoint.kind == "cyclegan") {
    const auto name = required(source_class, "translate.source_class");
    std::vector<data::ImageTile> all;
    if (split_text == "all") {
      all = data::load_tiles(manifest);
    } else {
      all = tiles_in(manifest, checked("translate.split", [&] { return data::parse_split(split_text); }));
    }
    sources = with_label(all, name);
    require(!sources.empty(), ErrorKind::empty_input, "no " + split_text + " tiles of class '" + name + "'");
    if (count && static_cast<std::size_t>(*count) < sources.size()) sources.resize(static_cast<std::size_t>(*count));
    resolved["source_class"] = name;
    resolved["direction"] = direction_text;
    resolved["split"] = split_text;
  } else {
    resolved["count"] = count.value_or(100);
    resolved["seed"] = stage_seed(ctx, sec, "translate");
  }
  RunDir run(ctx, "translate", resolved, inputs);
  if (checkpoint.kind == "cyclegan") {
    const auto dir = direction_text == "x_to_y" ? gan::Direction::x_to_y : gan::Direction::y_to_x;
    synthetic = gan::translate(checkpoint, dir, sources, target_class);
  } else {
    synthetic = gan::sample_dcgan(checkpoint, count.value_or(100), stage_seed(ctx, sec, "translate"), target_class);
  }

  data::DatasetManifest out;
  out.root = run.path();
  out.label_set = manifest.label_set;
  for (const auto& t : synthetic) {
    write_png(t.pixels, run.path() / t.id);
    data::ManifestEntry e;
    e.path = t.id;
    e.label = t.label;
    e.split = data::Split::train;
    e.provenance = t.provenance;
    e.source_ref = t.source_ref;
    e.generator_ref = t.generator_ref;
    out.entries.push_back(std::move(e));
  }
  data::write_manifest(out, run.add("manifest.jsonl"));
  write_labels_file(run.add("labels.json"), manifest.label_set);
  // Carry the generator's training ids along so experiments can check leakage.
  if (const auto ids = ckpt_path->parent_path() / "training_ids.txt"; fs::exists(ids)) {
    fs::copy_file(ids, run.add("gan_training_ids.txt"), fs::copy_options::overwrite_existing);
  }
  run.finish();
}

void cmd_ablation(Context& ctx, const AblationOptions& o) {
  const auto& sec = ctx.config.section("ablation");
  std::vector<filter::Alpha> alphas;
  if (o.alphas) {
    for (const auto& a : split_list(*o.alphas)) alphas.push_back(checked("ablation.alphas", [&] { return filter::Alpha::parse(a); }));
  } else if (sec.contains("alphas")) {
    for (const auto& a : checked("ablation.alphas", [&] { return sec.at("alphas").get<std::vector<std::string>>(); })) {
      alphas.push_back(checked("ablation.alphas", [&] { return filter::Alpha::parse(a); }));
    }
  } else {
    alphas = filter::reference_alpha_grid();
  }
  if (alphas.empty()) invalid("ablation.alphas", "empty");
  std::vector<std::string> classes;
  if (o.classes) {
    classes = split_list(*o.classes);
  } else if (sec.contains("classes")) {
    classes = checked("ablation.classes", [&] { return sec.at("classes").get<std::vector<std::string>>(); });
  }
  const auto source_class = required(pick<std::string>(o.source_class, sec, "ablation", "source_class"), "ablation.source_class");
  const auto scoring = parse_scoring(pick<std::string>(o.scoring, sec, "ablation", "scoring", "cross_fit"), "ablation.scoring");
  const auto judge_fraction = value_or<double>(sec, "ablation", "judge_fraction", 0.3);
  if (!(judge_fraction > 0.0 && judge_fraction < 1.0)) invalid("ablation.judge_fraction", "must lie in (0, 1)");
  const auto experiment_id = value_or<std::string>(sec, "ablation", "experiment_id", "alpha-ablation");
  const auto mpath = manifest_path(ctx, o.manifest, sec, "ablation");
  classifier_config(ctx, kPreflightSize);
  gan_config(ctx, kPreflightSize);

  const auto manifest = open_manifest(ctx, mpath);
  const auto train = tiles_in(manifest, data::Split::train);
  const int size = tile_size(train);
  if (classes.empty()) {
    // Default grid: every adenomatous class present in the training data.
    for (const auto& l : present_labels(manifest.label_set, train)) {
      if (manifest.find_label(l)->is_adenomatous) classes.push_back(l);
    }
    if (classes.empty()) invalid("ablation.classes", "no adenomatous classes in the manifest; list them explicitly");
  }

  const auto seed = stage_seed(ctx, sec, "ablation");
  auto [judge_fold, generation_fold] = eval::split_judge_fold(train, judge_fraction, seed);
  eval::AblationConfig cfg;
  cfg.experiment_id = experiment_id;
  cfg.scorer = classifier_config(ctx, size);
  cfg.gan = gan_config(ctx, size);
  cfg.scoring = scoring;
  cfg.jobs = ctx.config.jobs(ctx.global);

  json resolved = eval::to_json(cfg);
  for (const auto& a : alphas) resolved["alphas"].push_back(a.to_string());
  resolved["classes"] = classes;
  resolved["source_class"] = source_class;
  resolved["judge_fraction"] = judge_fraction;
  resolved["seed"] = seed;
  RunDir run(ctx, "ablation", resolved, {{"manifest", input_record(mpath)}});

  const auto judge_labels = present_labels(manifest.label_set, judge_fold);
  auto jc = cfg.scorer;
  jc.num_classes = static_cast<int>(judge_labels.size());
  const auto judge = classify::train_classifier(classify::build_classifier(jc, judge_labels), judge_fold, {});
  judge.save(run.add("judge.bin"));

  eval::AblationInputs in;
  in.source = with_label(generation_fold, source_class);
  require(!in.source.empty(), ErrorKind::empty_input, "no generation-fold tiles of class '" + source_class + "'");
  in.train = generation_fold;
  in.judge = &judge;
  in.judge_training_ids = eval::ids_of(judge_fold);
  const auto report = eval::run_alpha_ablation(alphas, classes, in, cfg,
                                               [&](const eval::AblationReport& partial) { partial.write(run.path()); });
  report.write(run.path());
  run.add(report.file_stem() + ".csv");
  run.add(report.file_stem() + ".json");
  run.finish();
}

void cmd_experiment(Context& ctx, const ExperimentOptions& o) {
  const auto& sec = ctx.config.section("experiment");
  const auto positive = required(pick<std::string>(o.positive_class, sec, "experiment", "positive_class"), "experiment.positive_class");
  std::map<std::string, fs::path> arm_paths;
  if (sec.contains("arms")) {
    for (const auto& [name, p] : checked("experiment.arms", [&] { return sec.at("arms").get<std::map<std::string, std::string>>(); })) {
      arm_paths[name] = ctx.config.resolve(p);
    }
  }
  for (const auto& spec : o.arms) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) invalid("--arm", "expected NAME=MANIFEST, got '" + spec + "'");
    arm_paths[spec.substr(0, eq)] = spec.substr(eq + 1);
  }
  if (arm_paths.empty()) invalid("experiment.arms", "at least one synthetic arm is required");
  if (arm_paths.contains(std::string(eval::kNoAugmentation))) invalid("experiment.arms", "'no-augmentation' is reserved");
  const bool synthetic_only = o.synthetic_only || value_or<bool>(sec, "experiment", "synthetic_only", false);
  const bool baseline = value_or<bool>(sec, "experiment", "baseline", true);

  eval::ExperimentConfig cfg;
  cfg.experiment_id = value_or<std::string>(sec, "experiment", "experiment_id", synthetic_only ? "synthetic-only" : "augmentation");
  cfg.positive_class = positive;
  cfg.synthetic_ratio = value_or<double>(sec, "experiment", "synthetic_ratio", 1.0);
  if (!(cfg.synthetic_ratio > 0.0 && cfg.synthetic_ratio <= 1.0)) invalid("experiment.synthetic_ratio", "must lie in (0, 1]");
  cfg.generator_alpha = value_or<std::string>(sec, "experiment", "generator_alpha", "1");
  if (ctx.global.seed) {
    cfg.seeds = {*ctx.global.seed};
  } else {
    cfg.seeds = value_or<std::vector<std::uint64_t>>(sec, "experiment", "seeds", {1, 2, 3});
  }
  if (cfg.seeds.empty()) invalid("experiment.seeds", "empty");
  cfg.jobs = ctx.config.jobs(ctx.global);
  const auto mpath = manifest_path(ctx, o.manifest, sec, "experiment");
  classifier_config(ctx, kPreflightSize);

  const auto manifest = open_manifest(ctx, mpath);
  json inputs = {{"manifest", input_record(mpath)}};
  eval::ExperimentInputs in;
  in.real_train = tiles_in(manifest, data::Split::train);
  in.test = tiles_in(manifest, data::Split::test);
  require(!in.test.empty(), ErrorKind::empty_input, "manifest has no test split");
  std::vector<std::string> arms;
  if (baseline && !synthetic_only) arms.emplace_back(eval::kNoAugmentation);
  for (const auto& [name, path] : arm_paths) {
    const auto syn_manifest = open_manifest(ctx, path);
    inputs["arm:" + name] = input_record(path);
    in.synthetic[name] = data::load_tiles(syn_manifest);
    if (const auto ids = path.parent_path() / "gan_training_ids.txt"; fs::exists(ids)) {
      const auto more = read_id_list(ids);
      in.gan_training_ids.insert(more.begin(), more.end());
    }
    arms.push_back(name);
  }
  if (sec.contains("gan_training_ids")) {
    for (const auto& p : checked("experiment.gan_training_ids", [&] { return sec.at("gan_training_ids").get<std::vector<std::string>>(); })) {
      const auto path = upstream(ctx.config.resolve(p), "GAN training id list");
      inputs["gan_training_ids:" + p] = input_record(path);
      const auto more = read_id_list(path);
      in.gan_training_ids.insert(more.begin(), more.end());
    }
  }
  cfg.classifier = classifier_config(ctx, tile_size(in.real_train));

  json resolved = eval::to_json(cfg);
  resolved["arms"] = arms;
  resolved["synthetic_only"] = synthetic_only;
  RunDir run(ctx, "experiment", resolved, inputs);
  const auto report = synthetic_only ? eval::run_synthetic_only_experiment(in, arms, cfg)
                                     : eval::run_augmentation_experiment(in, arms, cfg);
  report.write(run.path());
  run.add(report.file_stem() + ".csv");
  run.add(report.file_stem() + ".json");
  run.finish();
}

void cmd_serve(Context& ctx, const ServeOptions& o) {
  const auto& sec = ctx.config.section("service");
  turing::ServiceConfig sc;
  sc.host = pick<std::string>(o.host, sec, "service", "host", sc.host);
  sc.port = pick<int>(o.port, sec, "service", "port", sc.port);
  if (sc.port < 0 || sc.port > 65535) invalid("service.port", "must lie in [0, 65535]");
  sc.x0 = value_or<double>(sec, "service", "x0", sc.x0);
  if (!(sc.x0 > 0.0 && sc.x0 < 1.0)) invalid("service.x0", "must lie in (0, 1)");
  const auto sided = value_or<std::string>(sec, "service", "sidedness", "two_sided");
  if (sided == "two_sided") {
    sc.sidedness = turing::Sidedness::two_sided;
  } else if (sided == "one_sided_greater") {
    sc.sidedness = turing::Sidedness::one_sided_greater;
  } else {
    invalid("service.sidedness", "expected two_sided or one_sided_greater, got '" + sided + "'");
  }
  if (o.ui_dir) {
    sc.ui_dir = *o.ui_dir;
  } else if (auto p = optional_value<std::string>(sec, "service", "ui_dir")) {
    sc.ui_dir = ctx.config.resolve(*p);
  }
  std::vector<fs::path> manifests = o.manifests;
  if (sec.contains("manifests")) {
    for (const auto& p : checked("service.manifests", [&] { return sec.at("manifests").get<std::vector<std::string>>(); })) {
      manifests.push_back(ctx.config.resolve(p));
    }
  }
  if (manifests.empty()) invalid("service.manifests", "at least one manifest is required (--manifest)");

  json inputs = json::object();
  std::vector<data::ImageTile> tiles;
  for (const auto& m : manifests) {
    const auto manifest = open_manifest(ctx, m);
    inputs[m.string()] = input_record(m);
    auto loaded = data::load_tiles(manifest);
    tiles.insert(tiles.end(), std::make_move_iterator(loaded.begin()), std::make_move_iterator(loaded.end()));
  }
  json resolved = {{"x0", sc.x0}, {"sidedness", sided}};
  RunDir run(ctx, "serve", resolved, inputs);
  fs::path state = o.state_dir ? *o.state_dir : run.path() / "sessions";
  if (!o.state_dir) {
    if (auto p = optional_value<std::string>(sec, "service", "state_dir")) state = ctx.config.resolve(*p);
  }
  fs::create_directories(state);
  turing::SessionStore store(state);
  store.add_tiles(tiles);
  turing::TuringService service(store, sc);
  const int port = service.start();
  *ctx.out << "listening on http://" << sc.host << ":" << port << "\n" << std::flush;
  run.add(fs::relative(state, run.path()));
  while (o.keep_running == nullptr || o.keep_running->load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  service.stop();
  run.finish();
}

}  // namespace polypforge::cli

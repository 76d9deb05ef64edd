#include "polypforge/synthesis_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "log.hpp"
#include "parallel.hpp"
#include "polypforge/hash.hpp"

namespace polypforge::eval {

using nlohmann::json;

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

std::vector<std::string> sorted_labels(std::span<const data::ImageTile> tiles) {
  std::set<std::string> s;
  for (const auto& t : tiles) s.insert(t.label);
  return {s.begin(), s.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Judging

std::vector<JudgedTile> judge_tiles(const classify::TrainedClassifier& judge,
                                    std::span<const data::ImageTile> synthetic, std::string_view target_class) {
  require(!synthetic.empty(), ErrorKind::empty_input, "no synthetic tiles to judge");
  require(judge.has_label(target_class), ErrorKind::unknown_class,
          "judge has no class '" + std::string(target_class) + "'");
  const auto proba = classify::predict_proba(judge, synthetic);
  const auto target = judge.label_index(target_class);
  const auto classes = proba.dim(1);
  std::vector<JudgedTile> out;
  out.reserve(synthetic.size());
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    const double* row = proba.data() + static_cast<std::int64_t>(i) * classes;
    const auto best = std::max_element(row, row + classes) - row;
    out.push_back({synthetic[i].id, judge.labels()[static_cast<std::size_t>(best)], row[target]});
  }
  return out;
}

double fraction_from_predictions(std::span<const JudgedTile> predictions, std::string_view target_class) {
  require(!predictions.empty(), ErrorKind::empty_input, "no predictions");
  const auto hits = std::count_if(predictions.begin(), predictions.end(),
                                  [&](const JudgedTile& p) { return p.predicted == target_class; });
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double target_class_fraction(const classify::TrainedClassifier& judge, std::span<const data::ImageTile> synthetic,
                             std::string_view target_class) {
  return fraction_from_predictions(judge_tiles(judge, synthetic, target_class), target_class);
}

std::string predictions_csv(std::span<const JudgedTile> predictions) {
  std::string out = "tile_id,predicted,target_probability\n";
  for (const auto& p : predictions) {
    out += csv_field(p.tile_id) + "," + csv_field(p.predicted) + "," + shortest(p.target_probability) + "\n";
  }
  return out;
}

std::vector<JudgedTile> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing_file, "predictions not found: " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "tile_id,predicted,target_probability", ErrorKind::format,
          path.string() + ": unexpected header '" + line + "'");
  std::vector<JudgedTile> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.rfind(',');
    if (a == std::string::npos || a == b) throw LineError(ErrorKind::malformed_line, n, "expected 3 fields");
    JudgedTile t{line.substr(0, a), line.substr(a + 1, b - a - 1), 0.0};
    const auto* first = line.data() + b + 1;
    const auto* last = line.data() + line.size();
    auto [p, ec] = std::from_chars(first, last, t.target_probability);
    if (ec != std::errc() || p != last) throw LineError(ErrorKind::malformed_line, n, "bad probability");
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leakage

std::set<std::string> ids_of(std::span<const data::ImageTile> tiles) {
  std::set<std::string> out;
  for (const auto& t : tiles) out.insert(t.id);
  return out;
}

std::set<std::string> source_ids_of(std::span<const data::ImageTile> synthetic) {
  std::set<std::string> out;
  for (const auto& t : synthetic) {
    if (t.source_ref) out.insert(*t.source_ref);
  }
  return out;
}

void check_leakage(const std::set<std::string>& protected_ids, std::string_view what,
                   const std::map<std::string, std::set<std::string>>& stages) {
  for (const auto& [stage, ids] : stages) {
    const auto& small = ids.size() < protected_ids.size() ? ids : protected_ids;
    const auto& large = ids.size() < protected_ids.size() ? protected_ids : ids;
    for (const auto& id : small) {
      if (large.contains(id)) {
        fail(ErrorKind::leakage,
             std::string(what) + " tile '" + id + "' also appears in " + stage + " (leakage)");
      }
    }
  }
}

void check_leakage(std::span<const data::ImageTile> test,
                   const std::map<std::string, std::set<std::string>>& stages) {
  check_leakage(ids_of(test), "test", stages);
}

std::pair<std::vector<data::ImageTile>, std::vector<data::ImageTile>> split_judge_fold(
    std::span<const data::ImageTile> tiles, double judge_fraction, std::uint64_t seed) {
  require(judge_fraction > 0.0 && judge_fraction < 1.0, ErrorKind::invalid_argument,
          "judge fraction must lie in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < tiles.size(); ++i) by_class[tiles[i].label].push_back(i);
  std::vector<data::ImageTile> judge, rest;
  for (auto& [label, idx] : by_class) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return tiles[a].id < tiles[b].id; });
    Rng rng(mix_seed(seed, fnv1a(label)));
    rng.shuffle(std::span(idx));
    auto k = static_cast<std::size_t>(std::llround(judge_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) k = std::clamp<std::size_t>(k, 1, idx.size() - 1);
    for (std::size_t j = 0; j < idx.size(); ++j) (j < k ? judge : rest).push_back(tiles[idx[j]]);
  }
  return {judge, rest};
}

// ---------------------------------------------------------------------------
// Alpha ablation

json to_json(const AblationConfig& c) {
  return {{"experiment_id", c.experiment_id},
          {"scorer", classify::to_json(c.scorer)},
          {"gan", gan::to_json(c.gan)},
          {"scoring", filter::to_string(c.scoring)}};
}

std::string AblationReport::to_csv() const {
  std::string out = "target_class,alpha,status,subset_size,generated,target_class_fraction,checkpoint_id\n";
  for (const auto& r : rows) {
    out += csv_field(r.target_class) + "," + r.alpha.to_string() + "," + (r.ok ? "ok" : "failed") + "," +
           std::to_string(r.subset_size) + "," + std::to_string(r.generated) + "," +
           (r.ok ? shortest(r.fraction) : std::string()) + "," + r.checkpoint_id + "\n";
  }
  return out;
}

json AblationReport::to_json() const {
  json cells = json::array();
  for (const auto& r : rows) {
    json preds = json::array();
    for (const auto& p : r.predictions) preds.push_back({p.tile_id, p.predicted, p.target_probability});
    cells.push_back({{"target_class", r.target_class},
                     {"alpha", r.alpha.to_string()},
                     {"ok", r.ok},
                     {"error", r.error},
                     {"subset_size", r.subset_size},
                     {"generated", r.generated},
                     {"target_class_fraction", r.fraction},
                     {"scorer_id", r.scorer_id},
                     {"ranking_hash", r.ranking_hash},
                     {"audit_hash", r.audit_hash},
                     {"checkpoint_id", r.checkpoint_id},
                     {"predictions", preds}});
  }
  return {{"experiment_id", experiment_id},
          {"config_hash", config_hash},
          {"judge_id", judge_id},
          {"config", config},
          {"rows", cells}};
}

AblationReport AblationReport::from_json(const json& j) {
  AblationReport r;
  try {
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.judge_id = j.at("judge_id").get<std::string>();
    r.config = j.at("config");
    for (const auto& c : j.at("rows")) {
      AblationCell cell;
      cell.target_class = c.at("target_class").get<std::string>();
      cell.alpha = filter::Alpha::parse(c.at("alpha").get<std::string>());
      cell.ok = c.at("ok").get<bool>();
      cell.error = c.at("error").get<std::string>();
      cell.subset_size = c.at("subset_size").get<std::size_t>();
      cell.generated = c.at("generated").get<std::size_t>();
      cell.fraction = c.at("target_class_fraction").get<double>();
      cell.scorer_id = c.at("scorer_id").get<std::string>();
      cell.ranking_hash = c.at("ranking_hash").get<std::string>();
      cell.audit_hash = c.at("audit_hash").get<std::string>();
      cell.checkpoint_id = c.at("checkpoint_id").get<std::string>();
      for (const auto& p : c.at("predictions")) {
        cell.predictions.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>(), p.at(2).get<double>()});
      }
      r.rows.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("ablation report: ") + e.what());
  }
  return r;
}

void AblationReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto stem = file_stem();
  write_text(dir / (stem + ".csv"), to_csv());
  write_text(dir / (stem + ".json"), to_json().dump(2) + "\n");
  for (const auto& r : rows) {
    if (!r.ok) continue;
    auto alpha = r.alpha.to_string();
    std::replace(alpha.begin(), alpha.end(), '/', '-');
    write_text(dir / (stem + "-predictions-" + r.target_class + "-a" + alpha + ".csv"),
               predictions_csv(r.predictions));
  }
}

AblationReport run_alpha_ablation(std::span<const filter::Alpha> alphas,
                                  std::span<const std::string> target_classes, const AblationInputs& inputs,
                                  const AblationConfig& config, const AblationProgress& progress) {
  require(!alphas.empty() && !target_classes.empty(), ErrorKind::empty_input,
          "ablation needs at least one alpha and one target class");
  require(inputs.judge != nullptr, ErrorKind::invalid_argument, "ablation needs a judge classifier");
  require(!inputs.source.empty(), ErrorKind::empty_input, "ablation source domain is empty");
  gan::validate(config.gan);
  const auto& judge = *inputs.judge;
  for (const auto& cls : target_classes) {
    require(judge.has_label(cls), ErrorKind::unknown_class, "judge has no class '" + cls + "'");
  }
  check_leakage(inputs.judge_training_ids, "judge training", {{"the ablation source domain", ids_of(inputs.source)}});

  AblationReport report;
  report.experiment_id = config.experiment_id;
  json cfg = to_json(config);
  json alpha_list = json::array();
  for (const auto& a : alphas) alpha_list.push_back(a.to_string());
  cfg["alphas"] = alpha_list;
  cfg["target_classes"] = std::vector<std::string>(target_classes.begin(), target_classes.end());
  report.config = cfg;
  report.config_hash = json_hash(cfg);
  report.judge_id = judge.id();

  const auto labels = sorted_labels(inputs.train);
  std::optional<classify::TrainedClassifier> scorer;
  std::string scorer_error;
  if (config.scoring == filter::ScoringMode::in_sample) {
    try {
      auto sc = config.scorer;
      sc.num_classes = static_cast<int>(labels.size());
      scorer = classify::train_classifier(classify::build_classifier(sc, labels), inputs.train, {});
    } catch (const Error& e) {
      scorer_error = std::string("scorer training failed: ") + e.what();
    }
  }

  struct ClassPlan {
    std::vector<data::ImageTile> pool;
    std::optional<filter::RankedSet> ranking;
    std::string error;
  };
  std::vector<ClassPlan> plans;
  for (const auto& cls : target_classes) {
    ClassPlan plan;
    for (const auto& t : inputs.train) {
      if (t.label == cls) plan.pool.push_back(t);
    }
    plan.error = scorer_error;
    if (plan.error.empty()) {
      try {
        if (config.scoring == filter::ScoringMode::in_sample) {
          plan.ranking = filter::rank_by_target_probability(*scorer, plan.pool, cls);
        } else {
          auto sc = config.scorer;
          sc.num_classes = static_cast<int>(labels.size());
          plan.ranking = filter::cross_fit_ranking(inputs.train, cls, sc, labels);
        }
      } catch (const Error& e) {
        plan.error = std::string("ranking failed: ") + e.what();
      }
    }
    plans.push_back(std::move(plan));
  }

  const std::size_t n_cells = target_classes.size() * alphas.size();
  std::vector<std::optional<AblationCell>> cells(n_cells);
  std::mutex progress_mutex;
  detail::parallel_for(n_cells, config.jobs, [&](std::size_t index) {
    const auto& cls = target_classes[index / alphas.size()];
    const auto& alpha = alphas[index % alphas.size()];
    const auto& plan = plans[index / alphas.size()];
    AblationCell cell;
    cell.target_class = cls;
    cell.alpha = alpha;
    try {
      if (!plan.ranking) fail(ErrorKind::empty_input, plan.error);
      auto pair = filter::build_filtered_training_pair(inputs.source, plan.pool, *plan.ranking, alpha);
      cell.scorer_id = plan.ranking->scorer_id;
      cell.ranking_hash = plan.ranking->content_hash();
      cell.audit_hash = pair.audit.content_hash();
      cell.subset_size = pair.subset.ids.size();
      auto gan_ids = ids_of(pair.source);
      for (const auto& id : pair.subset.ids) gan_ids.insert(id);
      check_leakage(inputs.judge_training_ids, "judge training", {{"GAN training", gan_ids}});
      const auto trained = gan::train_cyclegan(pair.source, pair.target, config.gan);
      cell.checkpoint_id = trained.final.id;
      const auto synthetic = gan::translate(trained.final, gan::Direction::x_to_y, inputs.source, cls);
      cell.generated = synthetic.size();
      cell.predictions = judge_tiles(judge, synthetic, cls);
      cell.fraction = fraction_from_predictions(cell.predictions, cls);
      cell.ok = true;
      log::info("ablation {} alpha {}: {} of {} judged {}", cls, alpha.to_string(),
                std::llround(cell.fraction * static_cast<double>(cell.generated)), cell.generated, cls);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::leakage) throw;
      cell.ok = false;
      cell.error = std::string(to_string(e.kind())) + ": " + e.what();
      log::warn("ablation {} alpha {} failed: {}", cls, alpha.to_string(), cell.error);
    }
    std::lock_guard lock(progress_mutex);
    cells[index] = std::move(cell);
    if (progress) {
      AblationReport partial = report;
      for (const auto& c : cells) {
        if (c) partial.rows.push_back(*c);
      }
      progress(partial);
    }
  });
  for (auto& c : cells) report.rows.push_back(std::move(*c));
  return report;
}

// ---------------------------------------------------------------------------
// Classification experiments

double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::empty_input, "median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json to_json(const ExperimentConfig& c) {
  return {{"experiment_id", c.experiment_id},
          {"classifier", classify::to_json(c.classifier)},
          {"seeds", c.seeds},
          {"positive_class", c.positive_class},
          {"synthetic_ratio", c.synthetic_ratio},
          {"generator_alpha", c.generator_alpha}};
}

std::vector<ArmSummary> AugmentationReport::summary() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> aucs;
  for (const auto& r : records) {
    if (!aucs.contains(r.arm)) order.push_back(r.arm);
    aucs[r.arm].push_back(r.auc);
  }
  std::vector<ArmSummary> out;
  for (const auto& arm : order) {
    const auto& v = aucs[arm];
    out.push_back({arm, median(v), *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end()),
                   v.size()});
  }
  return out;
}

std::optional<ArmSummary> AugmentationReport::arm(std::string_view name) const {
  for (auto& s : summary()) {
    if (s.arm == name) return s;
  }
  return std::nullopt;
}

std::string AugmentationReport::to_csv() const {
  const std::string positive = config.value("positive_class", "");
  std::string out = "arm,seed,real,synthetic,positive,negative,auc,classifier_id\n";
  for (const auto& r : records) {
    std::size_t pos = 0, neg = 0;
    for (const auto& [label, n] : r.composition) (label == positive ? pos : neg) += n;
    out += csv_field(r.arm) + "," + std::to_string(r.seed) + "," + std::to_string(r.real_count) + "," +
           std::to_string(r.synthetic_count) + "," + std::to_string(pos) + "," + std::to_string(neg) + "," +
           shortest(r.auc) + "," + r.classifier_id + "\n";
  }
  return out;
}

json AugmentationReport::to_json() const {
  json recs = json::array();
  for (const auto& r : records) {
    recs.push_back({{"arm", r.arm},
                    {"seed", r.seed},
                    {"composition", r.composition},
                    {"real", r.real_count},
                    {"synthetic", r.synthetic_count},
                    {"auc", r.auc},
                    {"classifier_id", r.classifier_id}});
  }
  json agg = json::array();
  for (const auto& s : summary()) {
    agg.push_back({{"arm", s.arm}, {"median", s.median}, {"min", s.min}, {"max", s.max}, {"runs", s.runs}});
  }
  return {{"experiment_id", experiment_id},
          {"config_hash", config_hash},
          {"test_hash", test_hash},
          {"test_size", test_size},
          {"config", config},
          {"records", recs},
          {"summary", agg}};
}

AugmentationReport AugmentationReport::from_json(const json& j) {
  AugmentationReport r;
  try {
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.test_hash = j.at("test_hash").get<std::string>();
    r.test_size = j.at("test_size").get<std::size_t>();
    r.config = j.at("config");
    for (const auto& x : j.at("records")) {
      ArmRecord a;
      a.arm = x.at("arm").get<std::string>();
      a.seed = x.at("seed").get<std::uint64_t>();
      a.composition = x.at("composition").get<std::map<std::string, std::size_t>>();
      a.real_count = x.at("real").get<std::size_t>();
      a.synthetic_count = x.at("synthetic").get<std::size_t>();
      a.auc = x.at("auc").get<double>();
      a.classifier_id = x.at("classifier_id").get<std::string>();
      r.records.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("augmentation report: ") + e.what());
  }
  return r;
}

void AugmentationReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text(dir / (file_stem() + ".csv"), to_csv());
  write_text(dir / (file_stem() + ".json"), to_json().dump(2) + "\n");
}

namespace {

struct Arm {
  std::string name;
  std::vector<data::ImageTile> train;
  std::size_t synthetic = 0;
};

std::vector<data::ImageTile> take_share(const std::vector<data::ImageTile>& tiles, double ratio) {
  if (ratio >= 1.0) return tiles;
  std::vector<data::ImageTile> sorted = tiles;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  Rng rng(mix_seed(sorted.size(), 0x5EA5));
  rng.shuffle(std::span(sorted));
  sorted.resize(static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(sorted.size()))));
  return sorted;
}

AugmentationReport run_arms(const ExperimentInputs& inputs, std::vector<Arm> arms, const ExperimentConfig& config,
                            const json& arm_names) {
  require(!config.seeds.empty(), ErrorKind::invalid_argument, "experiment needs at least one seed");
  require(!config.positive_class.empty(), ErrorKind::invalid_argument, "experiment needs a positive class");
  require(config.synthetic_ratio > 0.0 && config.synthetic_ratio <= 1.0, ErrorKind::invalid_argument,
          "synthetic_ratio must lie in (0, 1]");
  require(!inputs.test.empty(), ErrorKind::empty_input, "experiment test set is empty");
  bool has_positive = false;
  for (const auto& t : inputs.test) has_positive |= t.label == config.positive_class;
  require(has_positive, ErrorKind::empty_input, "test set has no '" + config.positive_class + "' tiles");

  // Leakage is checked for every stage before any training starts.
  std::map<std::string, std::set<std::string>> stages{{"GAN training", inputs.gan_training_ids}};
  for (const auto& [name, syn] : inputs.synthetic) stages["synthetic sources of " + name] = source_ids_of(syn);
  for (const auto& arm : arms) stages["classifier training of " + arm.name] = ids_of(arm.train);
  check_leakage(inputs.test, stages);

  AugmentationReport report;
  report.experiment_id = config.experiment_id;
  json cfg = to_json(config);
  cfg["arms"] = arm_names;
  report.config = cfg;
  report.config_hash = json_hash(cfg);
  std::string joined;
  for (const auto& id : ids_of(inputs.test)) joined += id + "\n";
  report.test_hash = sha256_hex(joined);
  report.test_size = inputs.test.size();

  for (const auto& arm : arms) {
    const auto labels = sorted_labels(arm.train);
    require(std::find(labels.begin(), labels.end(), config.positive_class) != labels.end(), ErrorKind::empty_input,
            "arm " + arm.name + " has no '" + config.positive_class + "' training tiles");
  }
  std::vector<ArmRecord> records(config.seeds.size() * arms.size());
  detail::parallel_for(records.size(), config.jobs, [&](std::size_t index) {
    const auto seed = config.seeds[index / arms.size()];
    const auto& arm = arms[index % arms.size()];
    const auto labels = sorted_labels(arm.train);
    auto cc = config.classifier;
    cc.seed = seed;
    cc.num_classes = static_cast<int>(labels.size());
    auto model = classify::train_classifier(classify::build_classifier(cc, labels), arm.train, {});
    ArmRecord& rec = records[index];
    rec.arm = arm.name;
    rec.seed = seed;
    for (const auto& t : arm.train) ++rec.composition[t.label];
    rec.synthetic_count = arm.synthetic;
    rec.real_count = arm.train.size() - arm.synthetic;
    rec.auc = classify::evaluate_auc(model, inputs.test, config.positive_class);
    rec.classifier_id = model.id();
    log::info("{} seed {}: AUC {:.4f} on {} tiles", arm.name, seed, rec.auc, inputs.test.size());
  });
  report.records = std::move(records);
  return report;
}

const std::vector<data::ImageTile>& synthetic_set(const ExperimentInputs& inputs, const std::string& name) {
  const auto it = inputs.synthetic.find(name);
  require(it != inputs.synthetic.end(), ErrorKind::invalid_argument, "no synthetic set named '" + name + "'");
  require(!it->second.empty(), ErrorKind::empty_input, "synthetic set '" + name + "' is empty");
  return it->second;
}

}  // namespace

AugmentationReport run_augmentation_experiment(const ExperimentInputs& inputs, std::span<const std::string> arms,
                                               const ExperimentConfig& config) {
  require(!arms.empty(), ErrorKind::empty_input, "experiment needs at least one arm");
  std::vector<Arm> built;
  for (const auto& name : arms) {
    Arm arm{name, inputs.real_train, 0};
    if (name != kNoAugmentation) {
      const auto extra = take_share(synthetic_set(inputs, name), config.synthetic_ratio);
      arm.train.insert(arm.train.end(), extra.begin(), extra.end());
      arm.synthetic = extra.size();
    }
    built.push_back(std::move(arm));
  }
  return run_arms(inputs, std::move(built), config, std::vector<std::string>(arms.begin(), arms.end()));
}

AugmentationReport run_synthetic_only_experiment(const ExperimentInputs& inputs,
                                                 std::span<const std::string> arms, const ExperimentConfig& config) {
  require(!arms.empty(), ErrorKind::empty_input, "experiment needs at least one arm");
  std::vector<data::ImageTile> negatives;
  for (const auto& t : inputs.real_train) {
    if (t.label != config.positive_class) negatives.push_back(t);
  }
  std::vector<Arm> built;
  std::vector<std::string> names;
  for (const auto& name : arms) {
    std::string bare = name;
    if (!bare.empty() && bare.front() == '+') bare.erase(0, 1);
    Arm arm{"synthetic-only-" + bare, negatives, 0};
    const auto extra = take_share(synthetic_set(inputs, name), config.synthetic_ratio);
    for (const auto& t : extra) {
      require(t.provenance == data::Provenance::synthetic, ErrorKind::invalid_argument,
              "tile '" + t.id + "' in synthetic set '" + name + "' is not synthetic");
    }
    arm.train.insert(arm.train.end(), extra.begin(), extra.end());
    arm.synthetic = extra.size();
    names.push_back(arm.name);
    built.push_back(std::move(arm));
  }
  return run_arms(inputs, std::move(built), config, names);
}

}  // namespace polypforge::eval

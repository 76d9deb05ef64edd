#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "polypforge/classifier.hpp"
#include "polypforge/dataset.hpp"
#include "polypforge/filter.hpp"
#include "polypforge/gan.hpp"

namespace polypforge::eval {

// ---------------------------------------------------------------------------
// Judging synthetic tiles

struct JudgedTile {
  std::string tile_id;
  std::string predicted;
  double target_probability = 0.0;
};

/// Per-tile argmax predictions of `judge`. Throws empty_input for an empty
/// set and unknown_class when the judge lacks `target_class`.
std::vector<JudgedTile> judge_tiles(const classify::TrainedClassifier& judge,
                                    std::span<const data::ImageTile> synthetic, std::string_view target_class);

/// Share of predictions equal to `target_class`.
double fraction_from_predictions(std::span<const JudgedTile> predictions, std::string_view target_class);

double target_class_fraction(const classify::TrainedClassifier& judge, std::span<const data::ImageTile> synthetic,
                             std::string_view target_class);

/// `tile_id,predicted,target_probability` rows in input order.
std::string predictions_csv(std::span<const JudgedTile> predictions);
std::vector<JudgedTile> read_predictions_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Leakage guard

/// Throws ErrorKind::leakage naming the stage and the first offending id when
/// any test id occurs in one of the named id sets.
void check_leakage(std::span<const data::ImageTile> test,
                   const std::map<std::string, std::set<std::string>>& stages);
/// Same check for a bare id set; `what` names it in the message.
void check_leakage(const std::set<std::string>& protected_ids, std::string_view what,
                   const std::map<std::string, std::set<std::string>>& stages);

std::set<std::string> ids_of(std::span<const data::ImageTile> tiles);
/// Ids of the real tiles that synthetic tiles were generated from.
std::set<std::string> source_ids_of(std::span<const data::ImageTile> synthetic);

/// Deterministic per-class split of real tiles into a judge fold and a
/// generation fold; the judge fold gets round(fraction * n) tiles of each
/// class (at least one when the class has two or more tiles).
std::pair<std::vector<data::ImageTile>, std::vector<data::ImageTile>> split_judge_fold(
    std::span<const data::ImageTile> tiles, double judge_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Alpha ablation

struct AblationConfig {
  std::string experiment_id = "alpha-ablation";
  classify::ClassifierConfig scorer;
  gan::GanConfig gan;
  filter::ScoringMode scoring = filter::ScoringMode::cross_fit;
  int jobs = 1;  // cells trained concurrently; not hashed
};

nlohmann::json to_json(const AblationConfig& config);

struct AblationCell {
  std::string target_class;
  filter::Alpha alpha;
  bool ok = false;
  std::string error;  // set when !ok
  std::size_t subset_size = 0;
  std::size_t generated = 0;
  double fraction = 0.0;
  std::string scorer_id;
  std::string ranking_hash;
  std::string audit_hash;
  std::string checkpoint_id;
  std::vector<JudgedTile> predictions;
};

struct AblationReport {
  std::string experiment_id;
  std::string config_hash;
  std::string judge_id;
  nlohmann::json config;
  std::vector<AblationCell> rows;

  /// `target_class,alpha,status,subset_size,generated,target_class_fraction,checkpoint_id`.
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static AblationReport from_json(const nlohmann::json& j);
  std::string file_stem() const { return experiment_id + "-" + config_hash.substr(0, 12); }
  /// Writes `<stem>.csv`, `<stem>.json` and one predictions CSV per good cell.
  void write(const std::filesystem::path& dir) const;
};

struct AblationInputs {
  std::vector<data::ImageTile> source;          // domain X, translated by every cell
  std::vector<data::ImageTile> train;           // labelled real tiles for the scorer and target pools
  const classify::TrainedClassifier* judge = nullptr;
  std::set<std::string> judge_training_ids;     // must not overlap any GAN training tile
};

using AblationProgress = std::function<void(const AblationReport&)>;

/// One cell per (class, alpha): rank, filter, train the translator, translate
/// the source domain and judge the result. A failing cell is recorded and the
/// grid continues; `progress` sees the finished rows, in grid order, after
/// each cell. Rows do not depend on `config.jobs`.
AblationReport run_alpha_ablation(std::span<const filter::Alpha> alphas,
                                  std::span<const std::string> target_classes, const AblationInputs& inputs,
                                  const AblationConfig& config, const AblationProgress& progress = {});

// ---------------------------------------------------------------------------
// Classification experiments

struct ExperimentConfig {
  std::string experiment_id = "augmentation";
  classify::ClassifierConfig classifier;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string positive_class;
  double synthetic_ratio = 1.0;    // share of each synthetic set used, in (0, 1]
  std::string generator_alpha = "1";  // filtration used to build the synthetic sets, recorded only
  int jobs = 1;  // (arm, seed) runs trained concurrently; not hashed
};

nlohmann::json to_json(const ExperimentConfig& config);

struct ArmRecord {
  std::string arm;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> composition;  // label -> training tiles
  std::size_t real_count = 0;
  std::size_t synthetic_count = 0;
  double auc = 0.0;
  std::string classifier_id;
};

struct ArmSummary {
  std::string arm;
  double median = 0.0, min = 0.0, max = 0.0;
  std::size_t runs = 0;
};

struct AugmentationReport {
  std::string experiment_id;
  std::string config_hash;
  std::string test_hash;  // SHA-256 over the sorted test ids
  std::size_t test_size = 0;
  nlohmann::json config;
  std::vector<ArmRecord> records;

  std::vector<ArmSummary> summary() const;
  std::optional<ArmSummary> arm(std::string_view name) const;
  /// `arm,seed,real,synthetic,positive,negative,auc,classifier_id`.
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static AugmentationReport from_json(const nlohmann::json& j);
  std::string file_stem() const { return experiment_id + "-" + config_hash.substr(0, 12); }
  void write(const std::filesystem::path& dir) const;
};

/// Reserved arm name for training on real tiles alone.
inline constexpr std::string_view kNoAugmentation = "no-augmentation";

struct ExperimentInputs {
  std::vector<data::ImageTile> real_train;
  std::map<std::string, std::vector<data::ImageTile>> synthetic;  // arm name -> synthetic tiles
  std::vector<data::ImageTile> test;
  /// Ids seen by the generators during training, checked against the test set.
  std::set<std::string> gan_training_ids;
};

/// Trains one classifier per (arm, seed): `no-augmentation` on real_train
/// alone when listed among `arms`, every other arm on real_train plus its
/// synthetic tiles. All arms share the test set and seeds.
AugmentationReport run_augmentation_experiment(const ExperimentInputs& inputs, std::span<const std::string> arms,
                                               const ExperimentConfig& config);

/// Arms `synthetic-only-<name>`: the positive class is represented only by
/// synthetic tiles; real positives in real_train are dropped.
AugmentationReport run_synthetic_only_experiment(const ExperimentInputs& inputs,
                                                 std::span<const std::string> arms, const ExperimentConfig& config);

double median(std::vector<double> values);

}  // namespace polypforge::eval

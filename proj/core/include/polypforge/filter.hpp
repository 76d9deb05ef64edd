#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polypforge/classifier.hpp"
#include "polypforge/dataset.hpp"

namespace polypforge::filter {

/// Exact rational in (0, 1], stored reduced.
class Alpha {
 public:
  constexpr Alpha() = default;
  /// Throws invalid_argument unless 0 < num/den <= 1.
  Alpha(std::int64_t num, std::int64_t den);
  /// Accepts "1/4", "0.25", "1".
  static Alpha parse(std::string_view text);

  std::int64_t numerator() const noexcept { return num_; }
  std::int64_t denominator() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  /// ceil(alpha * n), exact.
  std::size_t subset_size(std::size_t n) const noexcept;
  /// "1" or "1/4".
  std::string to_string() const;

  friend bool operator==(const Alpha&, const Alpha&) = default;
  friend bool operator<(const Alpha& a, const Alpha& b) noexcept { return a.num_ * b.den_ < b.num_ * a.den_; }

 private:
  std::int64_t num_ = 1;
  std::int64_t den_ = 1;
};

/// 1, 1/2, 1/4, 1/8, 1/16, 1/32.
std::vector<Alpha> reference_alpha_grid();

struct RankedEntry {
  std::string tile_id;
  double probability = 0.0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

enum class ScoringMode { in_sample, cross_fit };
std::string_view to_string(ScoringMode mode) noexcept;

/// Tiles ordered by descending probability, ties by ascending id.
struct RankedSet {
  std::vector<RankedEntry> entries;
  std::string target_class;
  std::string scorer_id;
  ScoringMode scoring = ScoringMode::in_sample;

  std::size_t size() const noexcept { return entries.size(); }
  /// SHA-256 of the ranking CSV.
  std::string content_hash() const;
};

struct FilteredSubset {
  std::vector<std::string> ids;  // prefix of the parent ranking
  Alpha alpha;
  std::size_t parent_size = 0;
  std::string parent_hash;
};

/// Sorts by (-probability, id). Rejects duplicate ids and NaN probabilities.
RankedSet rank_scores(std::vector<RankedEntry> scores, std::string target_class = {},
                      std::string scorer_id = {});

/// Scores every tile with P(target_class) under `scorer` and ranks them.
RankedSet rank_by_target_probability(const classify::TrainedClassifier& scorer,
                                     std::span<const data::ImageTile> tiles,
                                     std::string_view target_class);

FilteredSubset select_top_alpha(const RankedSet& ranking, Alpha alpha);

struct AuditRecord {
  std::string scorer_id;
  std::string target_class;
  Alpha alpha;
  ScoringMode scoring = ScoringMode::in_sample;
  std::size_t ranked_count = 0;
  std::string ranking_hash;
  std::vector<std::string> selected_ids;
  std::string timestamp;  // ISO-8601 UTC

  nlohmann::json to_json() const;
  static AuditRecord from_json(const nlohmann::json& j);
  /// SHA-256 of the record without its timestamp.
  std::string content_hash() const;
};

/// Audit of `subset` taken from `ranking`, stamped with the current time.
AuditRecord audit_for(const RankedSet& ranking, const FilteredSubset& subset);

struct TrainingPair {
  std::vector<data::ImageTile> source;
  std::vector<data::ImageTile> target;
  RankedSet ranking;
  FilteredSubset subset;
  AuditRecord audit;
};

/// Ranks `target` with an already trained scorer and keeps the top alpha.
/// `source` is returned untouched.
TrainingPair build_filtered_training_pair(std::span<const data::ImageTile> source,
                                          std::span<const data::ImageTile> target,
                                          const classify::TrainedClassifier& scorer, Alpha alpha,
                                          ScoringMode scoring = ScoringMode::in_sample);

/// Ranking of the `target_class` tiles of `train` where each tile is scored by
/// a scorer that never saw it. Tiles of the target class are dealt into two
/// folds; scorer k trains on everything but fold k and scores fold k. Falls
/// back to a single in-sample scorer when a fold would hold fewer than
/// `min_per_fold` target tiles. `scorers_out`, when given, receives the
/// trained scorers.
RankedSet cross_fit_ranking(std::span<const data::ImageTile> train, std::string_view target_class,
                            const classify::ClassifierConfig& config, std::vector<std::string> labels,
                            std::size_t min_per_fold = 2,
                            std::vector<classify::TrainedClassifier>* scorers_out = nullptr);

/// Pair built from a ranking produced elsewhere, e.g. by cross_fit_ranking.
TrainingPair build_filtered_training_pair(std::span<const data::ImageTile> source,
                                          std::span<const data::ImageTile> target, const RankedSet& ranking,
                                          Alpha alpha);

/// `tile_id,probability` rows in ranked order.
std::string ranking_csv(std::span<const RankedEntry> entries);
RankedSet read_ranking_csv(const std::filesystem::path& path);

struct FilterArtifacts {
  std::filesystem::path ranking_csv;
  std::filesystem::path subset_csv;
  std::filesystem::path audit_json;
};

/// Writes ranking.csv, subset.csv and audit.json into `dir`.
FilterArtifacts write_filter_artifacts(const std::filesystem::path& dir, const RankedSet& ranking,
                                       const FilteredSubset& subset, const AuditRecord& audit);

}  // namespace polypforge::filter

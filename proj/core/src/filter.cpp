#include "polypforge/filter.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "log.hpp"
#include "polypforge/error.hpp"
#include "polypforge/hash.hpp"

namespace polypforge::filter {

using nlohmann::json;

Alpha::Alpha(std::int64_t num, std::int64_t den) {
  require(den > 0 && num > 0 && num <= den, ErrorKind::invalid_argument,
          "alpha must lie in (0, 1], got " + std::to_string(num) + "/" + std::to_string(den));
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

Alpha Alpha::parse(std::string_view text) {
  auto bad = [&]() -> Alpha {
    fail(ErrorKind::invalid_argument, "alpha: cannot parse '" + std::string(text) + "'");
  };
  auto parse_int = [&](std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) bad();
    return v;
  };
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty() || text.find_first_of("+-") != std::string_view::npos) return bad();
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    const auto num = parse_int(text.substr(0, slash));
    const auto den = parse_int(text.substr(slash + 1));
    if (den <= 0) return bad();
    return Alpha(num, den);
  }
  const auto dot = text.find('.');
  const std::string_view whole = text.substr(0, dot);
  const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  if (frac.size() > 15 || (whole.empty() && frac.empty())) return bad();
  std::int64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  const std::int64_t w = whole.empty() ? 0 : parse_int(whole);
  const std::int64_t f = frac.empty() ? 0 : parse_int(frac);
  if (w < 0 || f < 0 || w > 1) return bad();
  return Alpha(w * den + f, den);
}

std::size_t Alpha::subset_size(std::size_t n) const noexcept {
  const auto num = static_cast<unsigned __int128>(num_) * n;
  return static_cast<std::size_t>((num + static_cast<unsigned __int128>(den_ - 1)) / den_);
}

std::string Alpha::to_string() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::vector<Alpha> reference_alpha_grid() {
  return {Alpha(1, 1), Alpha(1, 2), Alpha(1, 4), Alpha(1, 8), Alpha(1, 16), Alpha(1, 32)};
}

std::string_view to_string(ScoringMode mode) noexcept {
  return mode == ScoringMode::cross_fit ? "cross_fit" : "in_sample";
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  return a.tile_id < b.tile_id;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string RankedSet::content_hash() const { return sha256_hex(ranking_csv(entries)); }

RankedSet rank_scores(std::vector<RankedEntry> scores, std::string target_class, std::string scorer_id) {
  for (const auto& e : scores) {
    require(!std::isnan(e.probability), ErrorKind::non_finite, "NaN score for tile '" + e.tile_id + "'");
  }
  std::sort(scores.begin(), scores.end(), ranks_before);
  std::set<std::string_view> seen;
  for (const auto& e : scores) {
    require(seen.insert(e.tile_id).second, ErrorKind::invalid_argument,
            "duplicate tile id '" + e.tile_id + "' in ranking");
  }
  RankedSet r;
  r.entries = std::move(scores);
  r.target_class = std::move(target_class);
  r.scorer_id = std::move(scorer_id);
  return r;
}

RankedSet rank_by_target_probability(const classify::TrainedClassifier& scorer,
                                     std::span<const data::ImageTile> tiles, std::string_view target_class) {
  const int k = scorer.label_index(target_class);
  const nn::Tensor probs = classify::predict_proba(scorer, tiles);
  const auto c = static_cast<std::int64_t>(scorer.labels().size());
  std::vector<RankedEntry> scores;
  scores.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    scores.push_back({tiles[i].id, probs[static_cast<std::int64_t>(i) * c + k]});
  }
  return rank_scores(std::move(scores), std::string(target_class), scorer.id());
}

FilteredSubset select_top_alpha(const RankedSet& ranking, Alpha alpha) {
  require(!ranking.entries.empty(), ErrorKind::empty_input, "cannot filter an empty ranking");
  FilteredSubset s;
  s.alpha = alpha;
  s.parent_size = ranking.size();
  s.parent_hash = ranking.content_hash();
  const std::size_t k = alpha.subset_size(ranking.size());
  s.ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) s.ids.push_back(ranking.entries[i].tile_id);
  return s;
}

json AuditRecord::to_json() const {
  return {{"scorer_id", scorer_id},
          {"target_class", target_class},
          {"alpha", alpha.to_string()},
          {"alpha_value", alpha.value()},
          {"scoring", filter::to_string(scoring)},
          {"ranked_count", ranked_count},
          {"ranking_hash", ranking_hash},
          {"selected_count", selected_ids.size()},
          {"selected_ids", selected_ids},
          {"timestamp", timestamp}};
}

AuditRecord AuditRecord::from_json(const json& j) {
  AuditRecord a;
  try {
    a.scorer_id = j.at("scorer_id").get<std::string>();
    a.target_class = j.at("target_class").get<std::string>();
    a.alpha = Alpha::parse(j.at("alpha").get<std::string>());
    a.scoring = j.at("scoring").get<std::string>() == "cross_fit" ? ScoringMode::cross_fit : ScoringMode::in_sample;
    a.ranked_count = j.at("ranked_count").get<std::size_t>();
    a.ranking_hash = j.at("ranking_hash").get<std::string>();
    a.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
    a.timestamp = j.value("timestamp", "");
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("audit record: ") + e.what());
  }
  return a;
}

std::string AuditRecord::content_hash() const {
  json j = to_json();
  j.erase("timestamp");
  return sha256_hex(j.dump());
}

namespace {

std::vector<data::ImageTile> pick(std::span<const data::ImageTile> tiles, std::span<const std::string> ids) {
  std::map<std::string_view, const data::ImageTile*> by_id;
  for (const auto& t : tiles) by_id.emplace(t.id, &t);
  std::vector<data::ImageTile> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    require(it != by_id.end(), ErrorKind::unknown_item, "ranked tile '" + id + "' is not in the target set");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace

AuditRecord audit_for(const RankedSet& ranking, const FilteredSubset& subset) {
  AuditRecord a;
  a.scorer_id = ranking.scorer_id;
  a.target_class = ranking.target_class;
  a.alpha = subset.alpha;
  a.scoring = ranking.scoring;
  a.ranked_count = ranking.size();
  a.ranking_hash = subset.parent_hash;
  a.selected_ids = subset.ids;
  a.timestamp = utc_now();
  return a;
}

TrainingPair build_filtered_training_pair(std::span<const data::ImageTile> source,
                                          std::span<const data::ImageTile> target, const RankedSet& ranking,
                                          Alpha alpha) {
  require(!source.empty(), ErrorKind::empty_input, "source domain is empty");
  require(!target.empty(), ErrorKind::empty_input, "target domain is empty");
  require(ranking.size() == target.size(), ErrorKind::size_mismatch,
          "ranking covers " + std::to_string(ranking.size()) + " tiles, target has " +
              std::to_string(target.size()));
  std::set<std::string_view> source_ids;
  for (const auto& t : source) source_ids.insert(t.id);
  for (const auto& t : target) {
    require(!source_ids.contains(t.id), ErrorKind::invalid_argument,
            "tile '" + t.id + "' appears in both source and target domains");
  }

  TrainingPair pair;
  pair.source.assign(source.begin(), source.end());
  pair.subset = select_top_alpha(ranking, alpha);
  pair.target = pick(target, pair.subset.ids);
  require(!pair.target.empty(), ErrorKind::empty_input, "filtered target set is empty");
  pair.ranking = ranking;
  pair.audit = audit_for(ranking, pair.subset);
  return pair;
}

TrainingPair build_filtered_training_pair(std::span<const data::ImageTile> source,
                                          std::span<const data::ImageTile> target,
                                          const classify::TrainedClassifier& scorer, Alpha alpha,
                                          ScoringMode scoring) {
  require(!target.empty(), ErrorKind::empty_input, "target domain is empty");
  RankedSet ranking = rank_by_target_probability(scorer, target, target.front().label);
  ranking.scoring = scoring;
  return build_filtered_training_pair(source, target, ranking, alpha);
}

RankedSet cross_fit_ranking(std::span<const data::ImageTile> train, std::string_view target_class,
                            const classify::ClassifierConfig& config, std::vector<std::string> labels,
                            std::size_t min_per_fold, std::vector<classify::TrainedClassifier>* scorers_out) {
  std::vector<const data::ImageTile*> targets;
  for (const auto& t : train) {
    if (t.label == target_class) targets.push_back(&t);
  }
  require(!targets.empty(), ErrorKind::empty_input,
          "no training tiles of class '" + std::string(target_class) + "' to rank");

  // Folds are dealt by source image so crops of one image share a fold.
  std::map<std::string, std::vector<const data::ImageTile*>> groups;
  for (const auto* t : targets) {
    std::string key = t->source_ref.value_or(t->id);
    if (auto at = key.find('@'); at != std::string::npos) key.resize(at);
    groups[key].push_back(t);
  }
  std::vector<std::string> keys;
  for (const auto& [k, _] : groups) keys.push_back(k);
  Rng rng(mix_seed(config.seed, 0xF01D));
  rng.shuffle(std::span(keys));
  std::array<std::set<std::string>, 2> fold_ids;
  std::array<std::size_t, 2> fold_sizes{0, 0};
  for (const auto& k : keys) {
    const int f = fold_sizes[0] <= fold_sizes[1] ? 0 : 1;
    for (const auto* t : groups[k]) fold_ids[f].insert(t->id);
    fold_sizes[f] += groups[k].size();
  }

  std::vector<RankedEntry> scores;
  std::vector<std::string> scorer_ids;
  ScoringMode mode = ScoringMode::cross_fit;
  if (std::min(fold_sizes[0], fold_sizes[1]) < min_per_fold) {
    log::warn("cross-fitting needs {} '{}' tiles per fold, have {}+{}; scoring in-sample", min_per_fold,
              target_class, fold_sizes[0], fold_sizes[1]);
    mode = ScoringMode::in_sample;
    auto scorer = classify::train_classifier(classify::build_classifier(config, labels), train, {});
    std::vector<data::ImageTile> held;
    for (const auto* t : targets) held.push_back(*t);
    for (auto& e : rank_by_target_probability(scorer, held, target_class).entries) scores.push_back(std::move(e));
    scorer_ids.push_back(scorer.id());
    if (scorers_out) scorers_out->push_back(std::move(scorer));
  } else {
    for (int f = 0; f < 2; ++f) {
      std::vector<data::ImageTile> fit, held;
      for (const auto& t : train) (fold_ids[f].contains(t.id) ? held : fit).push_back(t);
      auto c = config;
      c.seed = mix_seed(config.seed, static_cast<std::uint64_t>(f + 1));
      auto scorer = classify::train_classifier(classify::build_classifier(c, labels), fit, {});
      for (auto& e : rank_by_target_probability(scorer, held, target_class).entries) {
        scores.push_back(std::move(e));
      }
      scorer_ids.push_back(scorer.id());
      if (scorers_out) scorers_out->push_back(std::move(scorer));
    }
  }
  std::string scorer_id = scorer_ids.size() == 1 ? scorer_ids.front() : sha256_hex(scorer_ids[0] + scorer_ids[1]);
  RankedSet ranking = rank_scores(std::move(scores), std::string(target_class), std::move(scorer_id));
  ranking.scoring = mode;
  return ranking;
}

std::string ranking_csv(std::span<const RankedEntry> entries) {
  std::string out = "tile_id,probability\n";
  for (const auto& e : entries) {
    require(e.tile_id.find_first_of(",\n\"") == std::string::npos, ErrorKind::format,
            "tile id '" + e.tile_id + "' cannot be written unquoted to CSV");
    out += e.tile_id;
    out += ',';
    out += format_double(e.probability);
    out += '\n';
  }
  return out;
}

RankedSet read_ranking_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing_file, "cannot open ranking '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  require(line == "tile_id,probability", ErrorKind::format, path.string() + ": unexpected ranking header");
  std::vector<RankedEntry> entries;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    double p = 0.0;
    const char* b = line.data() + (comma == std::string::npos ? 0 : comma + 1);
    auto [end, ec] = std::from_chars(b, line.data() + line.size(), p);
    if (comma == std::string::npos || ec != std::errc{} || end != line.data() + line.size()) {
      throw LineError(ErrorKind::malformed_line, n, path.string() + ": bad ranking row");
    }
    entries.push_back({line.substr(0, comma), p});
  }
  RankedSet r = rank_scores(entries);
  require(r.entries == entries, ErrorKind::format, path.string() + ": rows are not in ranked order");
  return r;
}

FilterArtifacts write_filter_artifacts(const std::filesystem::path& dir, const RankedSet& ranking,
                                       const FilteredSubset& subset, const AuditRecord& audit) {
  std::filesystem::create_directories(dir);
  FilterArtifacts a{dir / "ranking.csv", dir / "subset.csv", dir / "audit.json"};
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + p.string() + "'");
  };
  write(a.ranking_csv, ranking_csv(ranking.entries));
  write(a.subset_csv, ranking_csv(std::span(ranking.entries).first(subset.ids.size())));
  json j = audit.to_json();
  j["content_hash"] = audit.content_hash();
  write(a.audit_json, j.dump(2) + "\n");
  return a;
}

}  // namespace polypforge::filter

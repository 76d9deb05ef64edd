#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "polypforge/error.hpp"
#include "polypforge/filter.hpp"
#include "polypforge/toy_domain.hpp"

using namespace polypforge;
using namespace polypforge::filter;

namespace {

std::string tile_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%04d", i);
  return buf;
}

std::vector<RankedEntry> random_scores(Rng& rng, int n, int levels) {
  std::vector<RankedEntry> s;
  for (int i = 0; i < n; ++i) {
    s.push_back({tile_name(i), static_cast<double>(rng.uniform_int(0, levels)) / levels});
  }
  rng.shuffle(std::span(s));
  return s;
}

// Selection-sort oracle: repeatedly extract the best remaining entry.
std::vector<std::string> oracle_order(std::vector<RankedEntry> s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i].probability > s[best].probability ||
          (s[i].probability == s[best].probability && s[i].tile_id < s[best].tile_id)) {
        best = i;
      }
    }
    out.push_back(s[best].tile_id);
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

std::size_t oracle_size(std::size_t n, const Alpha& a) {
  std::size_t k = 0;
  while (static_cast<std::int64_t>(k) * a.denominator() < a.numerator() * static_cast<std::int64_t>(n)) ++k;
  return k;
}

std::vector<std::string> ids(const RankedSet& r) {
  std::vector<std::string> out;
  for (const auto& e : r.entries) out.push_back(e.tile_id);
  return out;
}

}  // namespace

TEST_CASE("alpha parsing and validation") {
  CHECK(Alpha::parse("1/4") == Alpha(1, 4));
  CHECK(Alpha::parse("0.25") == Alpha(1, 4));
  CHECK(Alpha::parse("2/8") == Alpha(1, 4));
  CHECK(Alpha::parse("1") == Alpha(1, 1));
  CHECK(Alpha::parse(".5") == Alpha(1, 2));
  CHECK(Alpha::parse("0.03125") == Alpha(1, 32));
  CHECK(Alpha(1, 32).to_string() == "1/32");
  CHECK(Alpha(1, 1).to_string() == "1");
  for (const char* bad : {"1.5", "0", "0.0", "-0.25", "abc", "", "3/2", "1/0", "1/-4"}) {
    INFO("alpha text: ", bad);
    CHECK_THROWS_AS(Alpha::parse(bad), Error);
  }
  CHECK(Alpha(1, 8) < Alpha(1, 4));
  CHECK(reference_alpha_grid().size() == 6);
}

TEST_CASE("ranking examples") {
  auto r = rank_scores({{"a", 0.9}, {"b", 0.2}, {"c", 0.7}});
  CHECK(ids(r) == std::vector<std::string>{"a", "c", "b"});
  r = rank_scores({{"d", 0.5}, {"b", 0.5}, {"c", 0.5}, {"a", 0.5}});
  CHECK(ids(r) == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK_THROWS_AS(rank_scores({{"a", 0.1}, {"a", 0.2}}), Error);
  CHECK_THROWS_AS(rank_scores({{"a", std::nan("")}}), Error);

  Rng rng(1);
  auto s = random_scores(rng, 1000, 50);
  CHECK(ids(rank_scores(s)) == oracle_order(s));
}

TEST_CASE("select_top_alpha examples") {
  Rng rng(2);
  auto r8 = rank_scores(random_scores(rng, 8, 1000));
  auto half = select_top_alpha(r8, Alpha(1, 2));
  const auto order8 = ids(r8);
  CHECK(half.ids == std::vector<std::string>(order8.begin(), order8.begin() + 4));
  CHECK(select_top_alpha(r8, Alpha(1, 1)).ids == ids(r8));

  auto r100 = rank_scores(random_scores(rng, 100, 20));
  auto s = select_top_alpha(r100, Alpha(1, 32));
  CHECK(s.ids.size() == 4);
  double min_sel = 1.0, max_exc = 0.0;
  for (std::size_t i = 0; i < r100.size(); ++i) {
    const bool selected = std::find(s.ids.begin(), s.ids.end(), r100.entries[i].tile_id) != s.ids.end();
    (selected ? min_sel : max_exc) =
        selected ? std::min(min_sel, r100.entries[i].probability) : std::max(max_exc, r100.entries[i].probability);
  }
  CHECK(min_sel >= max_exc);
  CHECK(s.parent_size == 100);
  CHECK(s.parent_hash == r100.content_hash());
  CHECK_THROWS_AS(select_top_alpha(RankedSet{}, Alpha(1, 2)), Error);
}

TEST_CASE("cardinality and nesting over the grid") {
  Rng rng(3);
  const auto grid = reference_alpha_grid();
  for (int n = 1; n <= 200; ++n) {
    auto r = rank_scores(random_scores(rng, n, 7));
    std::vector<std::string> previous;
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {  // increasing alpha
      auto s = select_top_alpha(r, *it);
      CHECK(s.ids.size() == oracle_size(static_cast<std::size_t>(n), *it));
      CHECK(std::equal(previous.begin(), previous.end(), s.ids.begin()));
      previous = s.ids;
    }
  }
}

TEST_CASE("selection equals sort-and-prefix, independent of input order") {
  Rng rng(4);
  const auto grid = reference_alpha_grid();
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 500));
    auto s = random_scores(rng, n, static_cast<int>(rng.uniform_int(1, 100)));
    const Alpha a = grid[static_cast<std::size_t>(rng.uniform_int(0, 5))];
    auto order = oracle_order(s);
    order.resize(oracle_size(static_cast<std::size_t>(n), a));
    CHECK(select_top_alpha(rank_scores(s), a).ids == order);
    if (trial % 50 == 0) {
      auto shuffled = s;
      rng.shuffle(std::span(shuffled));
      auto x = select_top_alpha(rank_scores(shuffled), a).ids;
      CHECK(std::set<std::string>(x.begin(), x.end()) == std::set<std::string>(order.begin(), order.end()));
    }
  }
}

TEST_CASE("ranking artifacts") {
  testing::TempDir dir;
  auto r = rank_scores({{"x/a.png", 0.1 + 0.2}, {"x/b.png", 1e-300}, {"x/c.png", 0.75}}, "TA", "abc");
  auto sub = select_top_alpha(r, Alpha(1, 2));
  AuditRecord audit;
  audit.scorer_id = r.scorer_id;
  audit.target_class = "TA";
  audit.alpha = sub.alpha;
  audit.ranked_count = r.size();
  audit.ranking_hash = sub.parent_hash;
  audit.selected_ids = sub.ids;
  audit.timestamp = "2020-01-01T00:00:00Z";
  auto files = write_filter_artifacts(dir.path(), r, sub, audit);
  auto back = read_ranking_csv(files.ranking_csv);
  CHECK(back.entries == r.entries);
  auto subset = read_ranking_csv(files.subset_csv);
  CHECK(subset.size() == 2);

  std::ifstream in(files.audit_json);
  auto j = nlohmann::json::parse(in);
  CHECK(j["alpha"] == "1/2");
  CHECK(j["scorer_id"] == "abc");
  CHECK(j["selected_ids"].size() == 2);
  auto again = AuditRecord::from_json(j);
  again.timestamp = "2030-05-05T00:00:00Z";
  CHECK(again.content_hash() == audit.content_hash());

  std::ofstream(dir / "bad.csv") << "tile_id,probability\na,0.1\nb,0.9\n";
  CHECK_THROWS_AS(read_ranking_csv(dir / "bad.csv"), Error);
}

TEST_CASE("filtered training pair") {
  toy::ToyDomainSpec spec;
  spec.seed = 5;
  spec.classes = {{"NO", toy::Motif::plain, 0, 0, 60, false}, {"TA", toy::Motif::ringed, 0.0, 1.0, 60, true}};
  auto tiles = toy::generate_toy_image_tiles(spec);
  std::vector<data::ImageTile> x, y;
  for (auto& t : tiles) (t.label == "NO" ? x : y).push_back(t);

  classify::ClassifierConfig c;
  c.width = 4;
  c.stem = classify::Stem::compact;
  c.input_size = 32;
  c.epochs = 4;
  c.batch_size = 16;
  c.learning_rate = 0.01;
  c.seed = 1;
  auto scorer = classify::train_classifier(classify::build_classifier(c, {"NO", "TA"}), tiles, {});

  auto full = build_filtered_training_pair(x, y, scorer, Alpha(1, 1));
  CHECK(full.source.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(full.source[i].pixels == x[i].pixels);
  CHECK(full.target.size() == y.size());
  std::set<std::string> all_y;
  for (const auto& t : y) all_y.insert(t.id);
  std::set<std::string> got;
  for (const auto& t : full.target) got.insert(t.id);
  CHECK(got == all_y);

  auto quarter = build_filtered_training_pair(x, y, scorer, Alpha(1, 4));
  CHECK(quarter.target.size() == 15);
  CHECK(quarter.audit.scorer_id == scorer.id());
  CHECK(quarter.audit.selected_ids == quarter.subset.ids);
  CHECK(quarter.audit.alpha == Alpha(1, 4));
  double mean_sel = 0.0, mean_all = 0.0;
  for (const auto& t : quarter.target) mean_sel += *t.theta / quarter.target.size();
  for (const auto& t : y) mean_all += *t.theta / y.size();
  CHECK(mean_sel >= mean_all);

  CHECK_THROWS_AS(build_filtered_training_pair(y, y, scorer, Alpha(1, 2)), Error);
  CHECK_THROWS_AS(rank_by_target_probability(scorer, y, "SSA"), Error);

  SUBCASE("cross-fitted ranking covers every target tile once") {
    std::vector<classify::TrainedClassifier> scorers;
    auto r = cross_fit_ranking(tiles, "TA", c, {"NO", "TA"}, 2, &scorers);
    CHECK(r.scoring == ScoringMode::cross_fit);
    CHECK(scorers.size() == 2);
    auto v = ids(r);
    CHECK(std::set<std::string>(v.begin(), v.end()) == all_y);
    CHECK(v.size() == y.size());
    auto pair = build_filtered_training_pair(x, y, r, Alpha(1, 4));
    CHECK(pair.audit.scoring == ScoringMode::cross_fit);

    std::vector<data::ImageTile> few = x;
    few.push_back(y[0]);
    few.push_back(y[1]);
    auto fallback = cross_fit_ranking(few, "TA", c, {"NO", "TA"}, 2);
    CHECK(fallback.scoring == ScoringMode::in_sample);
    CHECK(fallback.size() == 2);
  }
}

TEST_CASE("filtering concentrates feature strength across seeds") {
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  int enriched = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    toy::ToyDomainSpec spec;
    spec.seed = seed;
    spec.classes = {{"NO", toy::Motif::plain, 0, 0, 48, false}, {"TA", toy::Motif::ringed, 0.0, 1.0, 48, true}};
    auto tiles = toy::generate_toy_image_tiles(spec);
    std::vector<data::ImageTile> y;
    for (const auto& t : tiles)
      if (t.label == "TA") y.push_back(t);
    classify::ClassifierConfig c;
    c.width = 4;
    c.stem = classify::Stem::compact;
    c.input_size = 32;
    c.epochs = 3;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    c.seed = seed;
    auto scorer = classify::train_classifier(classify::build_classifier(c, {"NO", "TA"}), tiles, {});
    auto ranking = rank_by_target_probability(scorer, y, "TA");
    auto subset = select_top_alpha(ranking, Alpha(1, 8));
    std::map<std::string, double> theta;
    for (const auto& t : y) theta[t.id] = *t.theta;
    std::vector<double> all, sel;
    for (const auto& t : y) all.push_back(*t.theta);
    for (const auto& id : subset.ids) sel.push_back(theta[id]);
    enriched += median(sel) > median(all);
  }
  CHECK(enriched == 20);
}

#include <httplib.h>

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <fstream>
#include <set>

#include "acceptance.hpp"
#include "fixtures.hpp"
#include "polypforge/filter.hpp"
#include "polypforge/metrics.hpp"
#include "polypforge/nn/ops.hpp"
#include "polypforge/synthesis_eval.hpp"
#include "polypforge/turing.hpp"
#include "polypforge/turing_service.hpp"

namespace acceptance {

using namespace polypforge;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Filter

// Position of entry i = number of entries that must precede it. O(N^2), no sort.
std::vector<std::string> brute_force_top(const std::vector<filter::RankedEntry>& s, std::int64_t num,
                                         std::int64_t den) {
  const auto n = static_cast<std::int64_t>(s.size());
  const auto k = (num * n + den - 1) / den;
  std::vector<std::string> picked(static_cast<std::size_t>(k));
  for (const auto& a : s) {
    std::int64_t before = 0;
    for (const auto& b : s) {
      before += b.probability > a.probability || (b.probability == a.probability && b.tile_id < a.tile_id);
    }
    if (before < k) picked[static_cast<std::size_t>(before)] = a.tile_id;
  }
  return picked;
}

Outcome filter_oracle() {
  Rng rng(2024);
  const auto grid = filter::reference_alpha_grid();
  int mismatches = 0, invariant_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = rng.uniform_int(1, 500);
    // Coarse scores force ties; ids are shuffled so id order is not input order.
    const int levels = static_cast<int>(rng.uniform_int(2, 40));
    std::vector<filter::RankedEntry> scores;
    for (std::int64_t i = 0; i < n; ++i) {
      scores.push_back({"t" + std::to_string(rng.uniform_int(0, 1'000'000'000)) + "_" + std::to_string(i),
                        static_cast<double>(rng.uniform_int(0, levels)) / levels});
    }
    const auto ranking = filter::rank_scores(scores, "SSA");
    const auto& alpha = grid[static_cast<std::size_t>(trial) % grid.size()];
    if (filter::select_top_alpha(ranking, alpha).ids != brute_force_top(scores, alpha.numerator(), alpha.denominator())) {
      ++mismatches;
    }
    std::vector<std::string> wider;
    for (auto it = grid.begin(); it != grid.end(); ++it) {  // grid runs 1 down to 1/32
      const auto sub = filter::select_top_alpha(ranking, *it);
      const auto want = static_cast<std::size_t>((it->numerator() * n + it->denominator() - 1) / it->denominator());
      bool ok = sub.ids.size() == want && !sub.ids.empty();
      if (!wider.empty()) ok &= std::equal(sub.ids.begin(), sub.ids.end(), wider.begin());
      invariant_failures += !ok;
      wider = sub.ids;
    }
  }
  return {mismatches == 0 && invariant_failures == 0,
          "1000 instances, " + std::to_string(mismatches) + " oracle mismatches, " +
              std::to_string(invariant_failures) + " nesting/cardinality violations"};
}

// ---------------------------------------------------------------------------
// z and p

using Big = boost::multiprecision::cpp_bin_float_50;

Big big_tail(double z, bool two_sided) {
  const Big root2 = boost::multiprecision::sqrt(Big(2));
  return two_sided ? boost::math::erfc(Big(std::abs(z)) / root2) : Big(0.5) * boost::math::erfc(Big(z) / root2);
}

long double independent_z(long double x_hat, long double x0, long double n) {
  return (x_hat - x0) * std::sqrt(n) / std::sqrt(x0 * (1.0L - x0));
}

Outcome z_closed_forms() {
  const double z = turing::z_score(0.575, 0.5, 200);
  const auto z_ref = static_cast<double>(independent_z(0.575L, 0.5L, 200.0L));
  const double p = turing::p_value(z);
  const auto p_ref = static_cast<double>(big_tail(z, true));
  bool ok = std::abs(z - z_ref) <= 1e-9;
  ok &= std::abs(z - 2.121320) <= 5e-7;  // the constant carries six decimals
  ok &= std::abs(p - 0.033895) <= 1e-6;
  ok &= std::abs(p - p_ref) <= 1e-12;

  Rng rng(99);
  double worst_z = 0.0, worst_p = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x_hat = rng.uniform(0.0, 1.0);
    const double x0 = rng.uniform(0.01, 0.99);
    const auto n = rng.uniform_int(1, 10000);
    const auto want = independent_z(x_hat, x0, static_cast<long double>(n));
    const double got = turing::z_score(x_hat, x0, n);
    if (want != 0) worst_z = std::max(worst_z, static_cast<double>(std::abs((got - want) / want)));
    worst_p = std::max(worst_p, std::abs(turing::p_value(got) - static_cast<double>(big_tail(got, true))));
    worst_p = std::max(worst_p, std::abs(turing::p_value(got, turing::Sidedness::one_sided_greater) -
                                         static_cast<double>(big_tail(got, false))));
  }
  ok &= worst_z < 1e-12 && worst_p < 1e-9;
  return {ok, "z=" + fmt(z, 9) + " (oracle " + fmt(z_ref, 9) + "), p=" + fmt(p, 6) + "; 1000 triples max rel z err " +
                  fmt(worst_z, 3) + ", max p err " + fmt(worst_p, 3)};
}

// ---------------------------------------------------------------------------
// AUC

double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  std::int64_t twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

double auc_of(const std::vector<double>& s, const std::vector<bool>& pos) {
  auto flags = std::make_unique<bool[]>(pos.size());
  std::copy(pos.begin(), pos.end(), flags.get());
  return metrics::roc_auc(s, std::span<const bool>(flags.get(), pos.size()));
}

Outcome auc_oracle() {
  Rng rng(7);
  int mismatches = 0, transform_failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = rng.uniform_int(2, 30);
    std::vector<double> s;
    std::vector<bool> pos;
    for (std::int64_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.uniform_int(0, 8)) / 8.0 - 0.5);
      pos.push_back(i == 0 || (i != 1 && rng.bernoulli(0.4)));
    }
    const double a = auc_of(s, pos);
    mismatches += a != pairwise_auc(s, pos);
    std::vector<double> cubic, logistic;
    for (double v : s) {
      cubic.push_back(v * v * v + v);
      logistic.push_back(1.0 / (1.0 + std::exp(-3.0 * v)));
    }
    transform_failures += auc_of(cubic, pos) != a || auc_of(logistic, pos) != a;
  }

  // Through a classifier: evaluate_auc against the pairwise statistic of its own scores.
  classify::ClassifierConfig cc;
  cc.width = 4;
  cc.stem = classify::Stem::compact;
  cc.input_size = 16;
  cc.seed = 3;
  const auto model = classify::build_classifier(cc, {"NO", "SSA"});
  const auto tiles = toy_tiles(5, {{"NO", toy::Motif::plain, 0, 0, 20, false}, {"SSA", toy::Motif::striped, 0.3, 1, 20, true}},
                               {}, 16);
  const auto probs = classify::predict_proba(model, tiles);
  std::vector<double> s;
  std::vector<bool> pos;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    s.push_back(probs[static_cast<std::int64_t>(i) * 2 + 1]);
    pos.push_back(tiles[i].label == "SSA");
  }
  const bool model_ok = classify::evaluate_auc(model, tiles, "SSA") == pairwise_auc(s, pos);
  return {mismatches == 0 && transform_failures == 0 && model_ok,
          "500 sets, " + std::to_string(mismatches) + " mismatches, " + std::to_string(transform_failures) +
              " transform failures, classifier path " + (model_ok ? "exact" : "differs")};
}

// ---------------------------------------------------------------------------
// Gradients

Outcome gradient_checks() {
  Rng rng(17);
  classify::ResNetSpec spec{classify::BlockKind::basic, {1, 1}, 4, classify::Stem::compact, 2};
  classify::ResNet net(spec, rng);
  net.train();
  nn::Var x(testing::random_tensor({4, 3, 8, 8}, rng));
  std::vector<int> y{0, 1, 1, 0};
  const auto cls = testing::gradient_check([&] { return nn::cross_entropy(net.forward(x), y); }, net.parameters(), 100, rng);

  gan::GanConfig c;
  c.image_size = 8;
  c.ngf = 2;
  c.ndf = 2;
  c.generator_blocks = 1;
  c.downsamplings = 1;
  c.stem_kernel = 3;
  c.discriminator_layers = 1;
  c.seed = 21;
  auto b = gan::build_cyclegan(c);
  nn::Var gx(testing::random_tensor({2, 3, 8, 8}, rng, 0.8));
  nn::Var gy(testing::random_tensor({2, 3, 8, 8}, rng, 0.8));
  auto params = b.G->parameters();
  for (auto& p : b.F->parameters()) params.push_back(p);
  const auto gen = testing::gradient_check(
      [&] { return gan::generator_loss(gx, gy, *b.G, *b.F, *b.D_X, *b.D_Y, c).total; }, params, 100, rng);

  const bool ok = cls.checked == 100 && gen.checked == 100 && cls.max_rel_error < 1e-4 && gen.max_rel_error < 1e-4;
  return {ok, "classifier max rel err " + fmt(cls.max_rel_error, 3) + ", generator loss max rel err " +
                  fmt(gen.max_rel_error, 3) + " (100 coordinates each)"};
}

// ---------------------------------------------------------------------------
// Leakage guard

Outcome leakage_guard() {
  const auto real = toy_tiles(1, {{"NO", toy::Motif::plain, 0, 0, 12, false}, {"SSA", toy::Motif::striped, 0.3, 1, 12, true}},
                              {}, 16);
  const auto test = toy_tiles(2, {{"NO", toy::Motif::plain, 0, 0, 6, false}, {"SSA", toy::Motif::striped, 0.3, 1, 6, true}},
                              "test/", 16);
  std::vector<data::ImageTile> synthetic;
  for (const auto& t : only(real, "NO")) {
    auto s = t;
    s.id = "SSA/syn_" + t.id.substr(3);
    s.label = "SSA";
    s.provenance = data::Provenance::synthetic;
    s.source_ref = t.id;
    s.generator_ref = "g";
    synthetic.push_back(s);
  }
  eval::ExperimentConfig cfg;
  cfg.positive_class = "SSA";
  cfg.seeds = {1};
  cfg.classifier.input_size = 16;
  cfg.classifier.stem = classify::Stem::compact;
  cfg.classifier.width = 4;
  const std::vector<std::string> arms{"no-augmentation", "+cyclegan"};

  auto aborts = [&](const eval::ExperimentInputs& in) {
    try {
      eval::run_augmentation_experiment(in, arms, cfg);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::leakage && std::string(e.what()).find(test[0].id) != std::string::npos;
    }
    return false;
  };
  eval::ExperimentInputs clean{real, {{"+cyclegan", synthetic}}, test, {}};
  int caught = 0;
  auto in = clean;
  in.real_train.push_back(test[0]);  // planted in a classifier training composition
  caught += aborts(in);
  in = clean;
  in.synthetic["+cyclegan"][0].source_ref = test[0].id;  // synthetic tile made from a test tile
  caught += aborts(in);
  in = clean;
  in.gan_training_ids.insert(test[0].id);  // seen by the generator
  caught += aborts(in);
  return {caught == 3, std::to_string(caught) + "/3 planted test tiles aborted the harness before training"};
}

// ---------------------------------------------------------------------------
// Turing service

// Any key or string value that could reveal which items are synthetic.
void scan(const json& j, const std::set<std::string>& refs, int& hits) {
  static const std::set<std::string> banned{"truth", "provenance", "generator_ref", "source_ref", "tile_ref", "theta"};
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      hits += banned.contains(k);
      scan(v, refs, hits);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) scan(v, refs, hits);
  } else if (j.is_string()) {
    const auto s = j.get<std::string>();
    hits += s == "real" || s == "fake" || refs.contains(s) || s.find("syn_") != std::string::npos;
  }
}

Outcome turing_contract() {
  const auto real = toy_tiles(3, {{"SSA", toy::Motif::striped, 0.3, 1, 110, true}}, {}, 16);
  std::vector<data::ImageTile> fake;
  std::set<std::string> refs;
  for (const auto& t : real) {
    auto f = t;
    f.id = "SSA/syn_abcdef012345_" + t.id.substr(4);
    f.provenance = data::Provenance::synthetic;
    f.source_ref = "NO/" + t.id.substr(4);
    f.generator_ref = "abcdef012345";
    fake.push_back(f);
    refs.insert(t.id);
    refs.insert(f.id);
  }

  testing::TempDir dir("pf-accept");
  turing::SessionStore store(dir.path());
  store.add_tiles(real);
  store.add_tiles(fake);
  turing::ServiceConfig sc;
  sc.port = 0;
  turing::TuringService service(store, sc);
  httplib::Client cli("127.0.0.1", service.start());

  int hits = 0, payloads = 0;
  auto blind = [&](const httplib::Result& r) {
    if (!r) throw std::runtime_error("no HTTP response");
    ++payloads;
    const auto j = json::parse(r->body);
    scan(j, refs, hits);
    return j;
  };
  const auto created = blind(cli.Post("/sessions",
                                      json{{"reviewer_id", "r1"}, {"seed", 11}, {"n_each", 100}, {"target_class", "SSA"}}.dump(),
                                      "application/json"));
  const auto id = created.at("session_id").get<std::string>();
  Rng coin(4);
  bool early_report_refused = true;
  int labels = 0;
  while (true) {
    const auto next = blind(cli.Get("/sessions/" + id + "/next"));
    if (next.at("complete").get<bool>()) break;
    const auto item = next.at("item_id").get<std::string>();
    blind(cli.Post("/sessions/" + id + "/labels",
                   json{{"item_id", item}, {"label", coin.bernoulli(0.55) ? "real" : "fake"}}.dump(), "application/json"));
    ++labels;
    if (labels % 50 == 1) {
      const auto r = cli.Get("/sessions/" + id + "/report");
      early_report_refused &= r && r->status == 403;
      blind(r);
    }
  }
  const auto report_res = cli.Get("/sessions/" + id + "/report");
  service.stop();
  const auto http_report = json::parse(report_res->body);

  // Replay the recorded log onto the fresh session.
  std::ifstream fresh_in(dir / (id + ".session.json"));
  const auto fresh = turing::TuringSession::from_private_json(json::parse(fresh_in));
  const auto events = turing::read_log(dir / (id + ".log.jsonl"));
  const auto replayed = turing::session_report(turing::replay(fresh, events)).stats;
  const bool replay_ok = replayed == store.report(id).stats && http_report.at("stats") == replayed.to_json() &&
                         labels == 200;

  const auto base = turing::build_session(real, fake, 100, 1, "mc");
  Rng flips(2025);
  int inside = 0;
  for (int i = 0; i < 1000; ++i) {
    auto s = base;
    while (true) {
      const auto n = turing::next_item(s);
      if (n.complete) break;
      turing::record_label(s, n.item_id, flips.bernoulli(0.5) ? turing::Truth::real : turing::Truth::fake);
    }
    inside += std::abs(turing::session_report(s).stats.z) < 1.96;
  }
  // Exact share of fair-coin sessions with |z| < 1.96, for context.
  long double exact = 0;
  for (int k = 0; k <= 200; ++k) {
    if (std::abs(turing::z_score(k / 200.0, 0.5, 200)) < 1.96) {
      exact += std::exp(std::lgamma(201.0L) - std::lgamma(k + 1.0L) - std::lgamma(201.0L - k) - 200 * std::log(2.0L));
    }
  }
  const bool ok = hits == 0 && early_report_refused && replay_ok && inside >= 940;
  return {ok, std::to_string(payloads) + " payloads scanned, " + std::to_string(hits) + " leaks; " +
                  std::to_string(labels) + "-label replay " + (replay_ok ? "identical" : "DIFFERS") + "; coin-flip |z|<1.96 in " +
                  std::to_string(inside) + "/1000 (need >= 940; exact binomial expectation " +
                  fmt(static_cast<double>(1000 * exact), 4) + ")"};
}

}  // namespace

std::vector<Criterion> oracle_criteria() {
  return {{"filter_oracle", 10, filter_oracle},     {"z_closed_forms", 5, z_closed_forms},
          {"auc_oracle", 10, auc_oracle},           {"gradient_checks", 120, gradient_checks},
          {"leakage_guard", 60, leakage_guard},     {"turing_contract", 60, turing_contract}};
}

}  // namespace acceptance

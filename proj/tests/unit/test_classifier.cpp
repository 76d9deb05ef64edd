#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "polypforge/classifier.hpp"
#include "polypforge/error.hpp"
#include "polypforge/metrics.hpp"
#include "polypforge/toy_domain.hpp"

using namespace polypforge;
using namespace polypforge::classify;

namespace {

// Parameter count of the standard residual topology, tallied layer by layer
// with BN contributing a scale and a shift per channel.
std::int64_t analytic_params(int depth, int classes) {
  auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) { return cin * cout * k * k; };
  auto bn = [](std::int64_t c) { return 2 * c; };
  std::int64_t total = conv(3, 64, 7) + bn(64);
  const bool bottleneck = depth == 50;
  const std::vector<int> blocks = depth == 18 ? std::vector<int>{2, 2, 2, 2} : std::vector<int>{3, 4, 6, 3};
  std::int64_t in = 64;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t planes = 64LL << s;
    for (int b = 0; b < blocks[s]; ++b) {
      const bool first = b == 0;
      if (!bottleneck) {
        total += conv(in, planes, 3) + bn(planes) + conv(planes, planes, 3) + bn(planes);
        if (first && (s > 0 || in != planes)) total += conv(in, planes, 1) + bn(planes);
        in = planes;
      } else {
        const std::int64_t out = planes * 4;
        total += conv(in, planes, 1) + bn(planes) + conv(planes, planes, 3) + bn(planes) + conv(planes, out, 1) +
                 bn(out);
        if (first) total += conv(in, out, 1) + bn(out);
        in = out;
      }
    }
  }
  return total + in * classes + classes;
}

ClassifierConfig toy_config() {
  ClassifierConfig c;
  c.depth = 18;
  c.width = 8;
  c.stem = Stem::compact;
  c.input_size = 32;
  c.epochs = 5;
  c.batch_size = 16;
  c.learning_rate = 0.01;
  c.lr_step_epoch = 4;
  c.seed = 4;
  return c;
}

std::vector<data::ImageTile> toy_tiles(std::uint64_t seed, int per_class, double theta_min = 0.3) {
  toy::ToyDomainSpec spec;
  spec.seed = seed;
  spec.classes = {{"NO", toy::Motif::plain, 0.0, 0.0, per_class, false},
                  {"TA", toy::Motif::striped, theta_min, 1.0, per_class, true}};
  return toy::generate_toy_image_tiles(spec);
}

double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double good = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      ++pairs;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return good / pairs;
}

double auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  std::unique_ptr<bool[]> p(new bool[pos.size()]);
  std::copy(pos.begin(), pos.end(), p.get());
  return metrics::roc_auc(s, std::span<const bool>(p.get(), pos.size()));
}

const TrainedClassifier& trained_toy_model() {
  static const TrainedClassifier model = [] {
    auto tiles = toy_tiles(1, 100);
    return train_classifier(build_classifier(toy_config(), {"NO", "TA"}), tiles, {});
  }();
  return model;
}

}  // namespace

TEST_CASE("architecture") {
  ClassifierConfig c;
  auto m = build_classifier(c, {"NO", "TA"});
  CHECK(m.network().parameter_count() == analytic_params(18, 2));
  CHECK(analytic_params(18, 2) == 11177538);
  c.depth = 34;
  CHECK(build_classifier(c, {"NO", "TA"}).network().parameter_count() == analytic_params(34, 2));
  c.depth = 50;
  CHECK(build_classifier(c, {"NO", "TA"}).network().parameter_count() == analytic_params(50, 2));
  c.depth = 101;
  CHECK_THROWS_AS(build_classifier(c, {"NO", "TA"}), Error);
  c.depth = 18;
  c.epochs = 0;
  CHECK_THROWS_AS(build_classifier(c, {"NO", "TA"}), Error);
  c.epochs = 20;
  CHECK_THROWS_AS(build_classifier(c, {"NO"}), Error);
  CHECK(ClassifierConfig{}.epochs == 20);
}

TEST_CASE("full-size forward pass on a 224 tile") {
  auto m = build_classifier(ClassifierConfig{}, {"NO", "TA"});
  data::ImageTile t;
  t.id = "x";
  t.label = "TA";
  t.pixels = Image(224, 224, 180);
  auto p = predict_proba(m, std::vector<data::ImageTile>{t});
  CHECK(p.shape() == nn::Shape{1, 2});
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("initialization is seeded") {
  auto c = toy_config();
  CHECK(build_classifier(c, {"NO", "TA"}).id() == build_classifier(c, {"NO", "TA"}).id());
  auto c2 = c;
  c2.seed = 5;
  CHECK(build_classifier(c, {"NO", "TA"}).id() != build_classifier(c2, {"NO", "TA"}).id());
}

TEST_CASE("classification loss gradient on a miniature residual network") {
  Rng rng(17);
  ResNetSpec spec{BlockKind::basic, {1, 1}, 4, Stem::compact, 2};
  ResNet net(spec, rng);
  net.train();
  nn::Var x(testing::random_tensor({4, 3, 8, 8}, rng));
  std::vector<int> y{0, 1, 1, 0};
  auto r = testing::gradient_check([&] { return nn::cross_entropy(net.forward(x), y); }, net.parameters(), 100,
                                   rng);
  CHECK(r.checked == 100);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("training on the toy oracle") {
  const auto& m = trained_toy_model();
  REQUIRE(m.history().size() == 5);
  CHECK(m.history().back().train_accuracy >= 0.95);
  // Two-epoch moving average of the training loss never rises.
  for (std::size_t e = 2; e < m.history().size(); ++e) {
    const double prev = m.history()[e - 2].train_loss + m.history()[e - 1].train_loss;
    const double cur = m.history()[e - 1].train_loss + m.history()[e].train_loss;
    CHECK(cur <= prev);
  }
  auto test = toy_tiles(99, 40);
  CHECK(accuracy(m, test) >= 0.95);
  CHECK(evaluate_auc(m, test, "TA") >= 0.95);
}

TEST_CASE("training is deterministic") {
  auto c = toy_config();
  c.epochs = 2;
  auto tiles = toy_tiles(3, 30);
  auto a = train_classifier(build_classifier(c, {"NO", "TA"}), tiles, tiles);
  auto b = train_classifier(build_classifier(c, {"NO", "TA"}), tiles, tiles);
  CHECK(a.id() == b.id());
  for (std::size_t i = 0; i < a.history().size(); ++i) {
    CHECK(a.history()[i].train_loss == b.history()[i].train_loss);
    CHECK(a.history()[i].val_accuracy == b.history()[i].val_accuracy);
  }
}

TEST_CASE("training input errors") {
  auto tiles = toy_tiles(3, 10);
  std::vector<data::ImageTile> one_class;
  for (const auto& t : tiles)
    if (t.label == "NO") one_class.push_back(t);
  try {
    train_classifier(build_classifier(toy_config(), {"NO", "TA"}), one_class, {});
    FAIL("expected an empty-class error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::empty_input);
  }
  CHECK_THROWS_AS(train_classifier(build_classifier(toy_config(), {"NO", "TA"}), {}, {}), Error);
  auto poisoned = build_classifier(toy_config(), {"NO", "TA"});
  poisoned.network().parameters().back().mutable_value()[0] = std::nan("");
  try {
    train_classifier(std::move(poisoned), tiles, {});
    FAIL("expected a non-finite loss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::non_finite);
  }
}

TEST_CASE("predict_proba contract") {
  const auto& m = trained_toy_model();
  auto tiles = toy_tiles(7, 5);
  tiles.push_back(tiles[2]);
  auto p = predict_proba(m, tiles);
  for (std::int64_t i = 0; i < p.dim(0); ++i) {
    CHECK(p[i * 2] >= 0.0);
    CHECK(std::abs(p[i * 2] + p[i * 2 + 1] - 1.0) < 1e-6);
  }
  CHECK(p[2 * 2] == p[10 * 2]);
  CHECK(p[2 * 2 + 1] == p[10 * 2 + 1]);
  CHECK(predict_proba(m, tiles) == p);

  // Feature strength raises the target probability.
  toy::ToyDomainSpec spec;
  int higher = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    data::ImageTile lo;
    lo.id = "lo";
    lo.pixels = toy::render_tile(toy::Motif::striped, 0.0, 32, s, spec);
    lo.label = "TA";
    auto hi = lo;
    hi.id = "hi";
    hi.pixels = toy::render_tile(toy::Motif::striped, 1.0, 32, s, spec);
    auto q = predict_proba(m, std::vector<data::ImageTile>{lo, hi});
    higher += q[3] > q[1];
  }
  CHECK(higher == 20);

  data::ImageTile big;
  big.id = "big";
  big.pixels = Image(48, 48);
  big.label = "TA";
  try {
    predict_proba(m, std::vector<data::ImageTile>{big});
    FAIL("expected size mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::size_mismatch);
  }
  CHECK_THROWS_AS(evaluate_auc(m, tiles, "HP"), Error);
}

TEST_CASE("checkpoint round trip") {
  const auto& m = trained_toy_model();
  testing::TempDir dir;
  m.save(dir / "clf.pfa");
  auto back = TrainedClassifier::load(dir / "clf.pfa");
  auto tiles = toy_tiles(8, 6);
  CHECK(predict_proba(back, tiles) == predict_proba(m, tiles));
  CHECK(back.id() == m.id());
  CHECK(back.labels() == m.labels());
  CHECK(back.history().size() == m.history().size());
}

TEST_CASE("preprocessing of variable-size crops") {
  ClassifierConfig c;
  Rng rng(1);
  Image wide(400, 300, 50);
  CHECK(preprocess_eval(wide, c).width == 224);
  CHECK(preprocess_eval(wide, c).height == 224);
  auto t = preprocess_train(wide, c, rng);
  CHECK((t.width == 224 && t.height == 224));
  Image exact(224, 224, 9);
  CHECK(preprocess_eval(exact, c) == exact);
}

TEST_CASE("AUC examples") {
  CHECK(auc({0.9, 0.8, 0.2, 0.1}, {true, true, false, false}) == 1.0);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}) == 0.5);
  CHECK(auc({0.9, 0.4, 0.6, 0.1}, {true, true, false, false}) == 0.75);
  CHECK_THROWS_AS(auc({0.1, 0.2}, {true, true}), Error);
}

TEST_CASE("AUC equals the pairwise statistic") {
  Rng rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 20));
    std::vector<double> s;
    std::vector<bool> pos;
    for (int i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.uniform_int(0, 6)) / 6.0);  // coarse grid forces ties
      pos.push_back(i == 0 ? true : (i == 1 ? false : rng.bernoulli(0.5)));
    }
    const double a = auc(s, pos);
    CHECK(a == pairwise_auc(s, pos));
    std::vector<double> e, f;
    for (double v : s) e.push_back(std::exp(v)), f.push_back(3.0 * v - 7.0);
    CHECK(auc(e, pos) == a);
    CHECK(auc(f, pos) == a);
  }
}

TEST_CASE("depth sweep") {
  auto c = toy_config();
  auto train = toy_tiles(11, 60);
  auto val = toy_tiles(12, 20);
  const std::vector<int> depths{18, 34};
  auto rows = depth_sweep(depths, train, val, c, {"NO", "TA"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].depth == 18);
  CHECK(rows[1].param_count > rows[0].param_count);
  for (const auto& r : rows) CHECK(r.val_accuracy >= 0.9);
  auto csv = sweep_csv(rows);
  CHECK(csv.rfind("depth,val_accuracy,param_count,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK_THROWS_AS(depth_sweep(std::vector<int>{18}, train, val, c, {"NO", "TA"}), Error);
}

#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>

#include "polypforge/filter.hpp"
#include "polypforge/gan.hpp"
#include "polypforge/metrics.hpp"
#include "polypforge/nn/ops.hpp"
#include "polypforge/rng.hpp"
#include "polypforge/turing.hpp"

using namespace polypforge;

namespace {

nn::Tensor noise(nn::Shape shape, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal();
  return t;
}

// args: batch, channels, spatial size; 3x3 kernel, same padding
void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const auto n = state.range(0), c = state.range(1), s = state.range(2);
  nn::Var x(noise({n, c, s, s}, rng));
  nn::Var w(noise({c, c, 3, 3}, rng));
  nn::Var b(noise({c}, rng));
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, {1, 1, nn::PadMode::zeros}));
  state.SetItemsProcessed(state.iterations() * n * c * c * s * s * 9);
}
BENCHMARK(BM_Conv2dForward)->Args({4, 16, 32})->Args({4, 32, 32})->Args({1, 64, 56})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  const auto n = state.range(0), c = state.range(1), s = state.range(2);
  nn::Var x(noise({n, c, s, s}, rng), true);
  nn::Var w(noise({c, c, 3, 3}, rng), true);
  nn::Var b(noise({c}, rng), true);
  for (auto _ : state) {
    auto y = nn::mse_to(nn::conv2d(x, w, b, {1, 1, nn::PadMode::zeros}), 0.0);
    y.backward();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({4, 16, 32})->Args({4, 32, 32})->Unit(benchmark::kMicrosecond);

void BM_GeneratorForward(benchmark::State& state) {
  gan::GanConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  cfg.ngf = static_cast<int>(state.range(1));
  cfg.generator_blocks = 2;
  const auto bundle = gan::build_cyclegan(cfg);
  Rng rng(3);
  nn::Var x(noise({1, 3, state.range(0), state.range(0)}, rng));
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(bundle.G->forward(x));
}
BENCHMARK(BM_GeneratorForward)->Args({32, 4})->Args({32, 8})->Args({64, 8})->Unit(benchmark::kMillisecond);

void BM_SelectTopAlpha(benchmark::State& state) {
  Rng rng(4);
  std::vector<filter::RankedEntry> scores;
  for (std::int64_t i = 0; i < state.range(0); ++i) scores.push_back({"t" + std::to_string(i), rng.uniform()});
  const auto ranking = filter::rank_scores(scores, "SSA");
  const filter::Alpha alpha(1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(filter::select_top_alpha(ranking, alpha));
}
BENCHMARK(BM_SelectTopAlpha)->Range(64, 1 << 14);

void BM_RankScores(benchmark::State& state) {
  Rng rng(5);
  std::vector<filter::RankedEntry> scores;
  for (std::int64_t i = 0; i < state.range(0); ++i) scores.push_back({"t" + std::to_string(i), rng.uniform()});
  for (auto _ : state) benchmark::DoNotOptimize(filter::rank_scores(scores, "SSA"));
}
BENCHMARK(BM_RankScores)->Range(64, 1 << 14);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(6);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> scores;
  auto flags = std::make_unique<bool[]>(n);
  for (std::size_t i = 0; i < n; ++i) {
    flags[i] = rng.bernoulli(0.1);
    scores.push_back(std::round(rng.uniform() * 50.0) / 50.0);  // plenty of ties
  }
  const std::span<const bool> positive(flags.get(), n);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::roc_auc(scores, positive));
}
BENCHMARK(BM_RocAuc)->Range(64, 1 << 16);

void BM_TuringStatistics(benchmark::State& state) {
  Rng rng(7);
  std::vector<turing::TruthLabel> pairs;
  for (int i = 0; i < 200; ++i) {
    pairs.push_back({rng.bernoulli(0.5) ? turing::Truth::real : turing::Truth::fake,
                     rng.bernoulli(0.5) ? turing::Truth::real : turing::Truth::fake});
  }
  for (auto _ : state) benchmark::DoNotOptimize(turing::compute_stats(pairs));
}
BENCHMARK(BM_TuringStatistics);

}  // namespace

BENCHMARK_MAIN();

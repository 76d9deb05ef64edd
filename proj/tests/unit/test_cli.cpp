#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli/cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
  std::vector<std::string> lines() const {
    std::vector<std::string> v;
    std::istringstream in(out);
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
  }
  std::string artifact(std::string_view suffix) const {
    for (const auto& l : lines()) {
      if (l.size() >= suffix.size() && l.compare(l.size() - suffix.size(), suffix.size(), suffix) == 0) return l;
    }
    FAIL("no artifact ending in " << suffix << " in:\n" << out << err);
    return {};
  }
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "polypforge");
  args.insert(args.begin() + 1, {"--log-level", "warn"});
  std::ostringstream out, err;
  Result r;
  r.code = polypforge::cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t data_rows(const fs::path& csv) {
  const auto text = slurp(csv);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
}

// Small enough that a whole pipeline runs in seconds.
json tiny_config() {
  return json::parse(R"({
    "seed": 3,
    "toy": {
      "image_size": 16, "seed": 5, "disks": [1, 1],
      "classes": [
        {"name": "NO", "motif": "plain", "count": 24},
        {"name": "SSA", "motif": "striped", "theta": [0.3, 1.0], "count": 18, "adenomatous": true}
      ],
      "split": {"train": 0.7, "val": 0.1, "test": 0.2}
    },
    "classifier": {"width": 4, "stem": "compact", "epochs": 1, "batch_size": 16, "learning_rate": 0.01},
    "filter": {"target_class": "SSA"},
    "gan": {"source_class": "NO", "target_class": "SSA", "ngf": 2, "ndf": 2, "generator_blocks": 1,
            "stem_kernel": 3, "discriminator_layers": 2, "epochs": 1, "batch_size": 4,
            "checkpoint_schedule": []},
    "ablation": {"source_class": "NO", "classes": ["SSA"], "judge_fraction": 0.3},
    "experiment": {"positive_class": "SSA", "seeds": [1]}
  })");
}

fs::path write_config(const testing::TempDir& dir, const json& j) {
  const auto p = dir / "pipeline.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// Counts train-split manifest lines of `label`, straight from the JSONL.
std::size_t train_count(const fs::path& manifest, const std::string& label) {
  std::ifstream in(manifest);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    n += j.at("label") == label && j.value("split", "train") == "train";
  }
  return n;
}

}  // namespace

TEST_CASE("invalid alpha exits 2 and names the field") {
  const auto r = run({"filter", "--alpha", "1.5"});
  CHECK(r.code == 2);
  CHECK(r.err.find("filter.alpha") != std::string::npos);
  CHECK(r.out.empty());
}

TEST_CASE("argument and config validation") {
  testing::TempDir dir("pf-cli");
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 2);                       // no subcommand
  CHECK(run({"filter", "--bogus"}).code == 2);    // unknown flag
  CHECK(run({"--jobs", "x", "toygen"}).code == 2);

  auto cfg = tiny_config();
  cfg["filtr"] = json::object();
  auto r = run({"--config", write_config(dir, cfg).string(), "toygen"});
  CHECK(r.code == 2);
  CHECK(r.err.find("filtr") != std::string::npos);

  cfg = tiny_config();
  cfg["toy"]["image_size"] = 4;
  CHECK(run({"--config", write_config(dir, cfg).string(), "--out", (dir / "o").string(), "toygen"}).code == 2);

  cfg = tiny_config();
  cfg["classifier"]["depth"] = 19;
  r = run({"--config", write_config(dir, cfg).string(), "train-classifier", "--manifest", "nowhere.jsonl"});
  CHECK(r.code == 2);  // config problems win over missing inputs
  CHECK(r.err.find("classifier") != std::string::npos);

  cfg = tiny_config();
  cfg["gan"]["lambda_cyc"] = -1;
  CHECK(run({"--config", write_config(dir, cfg).string(), "train-gan", "--manifest", "nowhere.jsonl"}).code == 2);

  CHECK(run({"experiment", "--arm", "nonsense", "--positive-class", "SSA"}).code == 2);
  CHECK(run({"serve", "--port", "70000", "--manifest", "m.jsonl"}).code == 2);
  CHECK(run({"serve"}).code == 2);
  CHECK(run({"--config", (dir / "absent.json").string(), "toygen"}).code == 3);
}

TEST_CASE("missing upstream artifacts exit 3") {
  testing::TempDir dir("pf-cli");
  const auto out = (dir / "o").string();
  auto r = run({"--out", out, "train-classifier", "--manifest", (dir / "none.jsonl").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("none.jsonl") != std::string::npos);
  r = run({"--out", out, "translate", "--checkpoint", (dir / "none.bin").string(), "--manifest", "m.jsonl",
           "--target-class", "SSA"});
  CHECK(r.code == 3);
}

TEST_CASE("toygen, train-classifier and filter chain") {
  testing::TempDir dir("pf-cli");
  const auto config = write_config(dir, tiny_config()).string();
  const auto out = (dir / "o").string();

  const auto gen = run({"--config", config, "--out", out, "toygen"});
  REQUIRE(gen.code == 0);
  const auto manifest = gen.artifact("manifest.jsonl");
  CHECK(fs::exists(fs::path(manifest).parent_path() / "labels.json"));

  const auto tc = run({"--config", config, "--out", out, "train-classifier", "--manifest", manifest});
  REQUIRE_MESSAGE(tc.code == 0, tc.err);
  const auto clf = tc.artifact("classifier.bin");
  CHECK(data_rows(tc.artifact("history.csv")) == 1);

  const auto n = train_count(manifest, "SSA");
  REQUIRE(n > 0);
  const auto f = run({"--config", config, "--out", out, "filter", "--manifest", manifest, "--classifier", clf,
                      "--alpha", "0.25"});
  REQUIRE_MESSAGE(f.code == 0, f.err);
  CHECK(data_rows(f.artifact("subset.csv")) == (n + 3) / 4);
  CHECK(data_rows(f.artifact("ranking.csv")) == n);

  const auto run_json = json::parse(slurp(f.artifact("run.json")));
  CHECK(run_json.at("status") == "ok");
  CHECK(run_json.at("command") == "filter");
  CHECK(run_json.at("config").at("alpha") == "1/4");
  CHECK(run_json.at("argv").size() > 3);
  CHECK(fs::path(f.artifact("run.json")).parent_path().filename().string() ==
        "filter-" + run_json.at("config_hash").get<std::string>().substr(0, 12));
  CHECK(run_json.at("inputs").at("classifier").at("sha256").get<std::string>().size() == 64);

  // Same config, same bytes, same run directory.
  const auto ranking = slurp(f.artifact("ranking.csv"));
  const auto subset = slurp(f.artifact("subset.csv"));
  const auto again = run({"--config", config, "--out", out, "filter", "--manifest", manifest, "--classifier", clf,
                          "--alpha", "1/4"});
  REQUIRE(again.code == 0);
  CHECK(again.artifact("subset.csv") == f.artifact("subset.csv"));
  CHECK(slurp(again.artifact("ranking.csv")) == ranking);
  CHECK(slurp(again.artifact("subset.csv")) == subset);

  // The classifier retrains to identical bytes.
  const auto tc2 = run({"--config", config, "--out", out, "train-classifier", "--manifest", manifest});
  CHECK(slurp(tc2.artifact("classifier.bin")) == slurp(clf));

  // A different alpha is a different run.
  const auto half = run({"--config", config, "--out", out, "filter", "--manifest", manifest, "--classifier", clf,
                         "--alpha", "1/2"});
  CHECK(half.artifact("subset.csv") != f.artifact("subset.csv"));
  CHECK(data_rows(half.artifact("subset.csv")) == (n + 1) / 2);

  const auto cross = run({"--config", config, "--out", out, "filter", "--manifest", manifest, "--scoring", "cross_fit",
                          "--alpha", "1/2"});
  REQUIRE_MESSAGE(cross.code == 0, cross.err);
  CHECK(json::parse(slurp(cross.artifact("audit.json"))).at("scoring") == "cross_fit");
}

TEST_CASE("output root falls back to the environment") {
  testing::TempDir dir("pf-cli");
  const auto config = write_config(dir, tiny_config()).string();
  ::setenv("POLYPFORGE_OUT", (dir / "env-root").c_str(), 1);
  const auto r = run({"--config", config, "toygen"});
  ::unsetenv("POLYPFORGE_OUT");
  REQUIRE(r.code == 0);
  CHECK(r.artifact("manifest.jsonl").rfind((dir / "env-root" / "runs").string(), 0) == 0);
}

TEST_CASE("gan, translate, ablation and experiment commands") {
  testing::TempDir dir("pf-cli");
  const auto config = write_config(dir, tiny_config()).string();
  const auto out = (dir / "o").string();
  const auto manifest = run({"--config", config, "--out", out, "toygen"}).artifact("manifest.jsonl");

  const auto gan = run({"--config", config, "--out", out, "train-gan", "--manifest", manifest});
  REQUIRE_MESSAGE(gan.code == 0, gan.err);
  CHECK(data_rows(gan.artifact("losses.csv")) == 1);
  const auto tr = run({"--config", config, "--out", out, "translate", "--manifest", manifest, "--checkpoint",
                       gan.artifact("checkpoint.bin"), "--source-class", "NO", "--target-class", "SSA"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  const auto syn = tr.artifact("manifest.jsonl");
  CHECK(train_count(syn, "SSA") == train_count(manifest, "NO"));
  CHECK(slurp(syn).find("\"provenance\":\"synthetic\"") != std::string::npos);
  CHECK(fs::exists(fs::path(syn).parent_path() / "gan_training_ids.txt"));

  const auto ab = run({"--config", config, "--out", out, "ablation", "--manifest", manifest, "--alphas", "1,0.5"});
  REQUIRE_MESSAGE(ab.code == 0, ab.err);
  const auto csv = ab.artifact(".csv");
  CHECK(data_rows(csv) == 2);
  CHECK(slurp(csv).find("SSA,1/2,") != std::string::npos);

  const auto ex = run({"--config", config, "--out", out, "experiment", "--manifest", manifest, "--arm",
                       "+cyclegan=" + syn});
  REQUIRE_MESSAGE(ex.code == 0, ex.err);
  CHECK(data_rows(ex.artifact(".csv")) == 2);

  // Synthetic tiles made from test tiles are caught before any training.
  auto leaky = tiny_config();
  leaky["translate"] = {{"split", "test"}};
  const auto leaky_config = (dir / "leaky.json").string();
  std::ofstream(leaky_config) << leaky.dump();
  const auto bad = run({"--config", leaky_config, "--out", out, "translate", "--manifest", manifest, "--checkpoint",
                        gan.artifact("checkpoint.bin"), "--source-class", "NO", "--target-class", "SSA"});
  REQUIRE(bad.code == 0);
  const auto aborted = run({"--config", config, "--out", out, "experiment", "--manifest", manifest, "--arm",
                            "+leak=" + bad.artifact("manifest.jsonl")});
  CHECK(aborted.code == 1);
  CHECK(aborted.err.find("leakage") != std::string::npos);
}

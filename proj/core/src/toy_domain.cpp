#include "polypforge/toy_domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "polypforge/error.hpp"
#include "polypforge/rng.hpp"

namespace polypforge::toy {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{236, 196, 216};
constexpr Rgb kLumen{246, 238, 244};
constexpr Rgb kRing{222, 180, 206};
constexpr Rgb kHematoxylin{92, 52, 130};
constexpr Rgb kStripe{250, 20, 140};

constexpr double kRingThresholdR = 200.0;
constexpr double kStripeThresholdRG = 60.0;
constexpr double kRuleEpsilon = 1e-3;

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

struct Disk {
  double cx, cy, r;
};

}  // namespace

std::string_view to_string(Motif m) noexcept {
  switch (m) {
    case Motif::plain: return "plain";
    case Motif::ringed: return "ringed";
    case Motif::striped: return "striped";
  }
  return "plain";
}

Motif parse_motif(std::string_view text) {
  if (text == "plain") return Motif::plain;
  if (text == "ringed") return Motif::ringed;
  if (text == "striped") return Motif::striped;
  fail(ErrorKind::spec_validation, "unknown motif '" + std::string(text) + "'");
}

ToyDomainSpec parse_toy_spec(const json& j) {
  try {
    ToyDomainSpec s;
    s.image_size = j.value("image_size", s.image_size);
    s.seed = j.value("seed", s.seed);
    s.noise = j.value("noise", s.noise);
    if (j.contains("disks")) {
      s.min_disks = j.at("disks").at(0).get<int>();
      s.max_disks = j.at("disks").at(1).get<int>();
    }
    for (const auto& c : j.at("classes")) {
      ToyClassSpec cs;
      cs.name = c.at("name").get<std::string>();
      cs.motif = parse_motif(c.value("motif", std::string("plain")));
      cs.count = c.value("count", cs.count);
      cs.is_adenomatous = c.value("adenomatous", cs.motif != Motif::plain && cs.motif != Motif::striped);
      if (c.contains("theta")) {
        cs.theta_min = c.at("theta").at(0).get<double>();
        cs.theta_max = c.at("theta").at(1).get<double>();
      }
      if (cs.motif == Motif::plain) cs.theta_min = cs.theta_max = 0.0;
      s.classes.push_back(std::move(cs));
    }
    if (j.contains("split")) {
      const auto& sp = j.at("split");
      s.split = data::SplitFractions{sp.value("train", 0.0), sp.value("val", 0.0), sp.value("test", 0.0)};
    }
    validate(s);
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::spec_validation, std::string("toy spec: ") + e.what());
  }
}

json to_json(const ToyDomainSpec& s) {
  json classes = json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"name", c.name},
                       {"motif", to_string(c.motif)},
                       {"count", c.count},
                       {"theta", {c.theta_min, c.theta_max}},
                       {"adenomatous", c.is_adenomatous}});
  }
  json j = {{"image_size", s.image_size},
            {"seed", s.seed},
            {"noise", s.noise},
            {"disks", {s.min_disks, s.max_disks}},
            {"classes", classes}};
  if (s.split) j["split"] = {{"train", s.split->train}, {"val", s.split->val}, {"test", s.split->test}};
  return j;
}

ToyDomainSpec load_toy_spec(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing_file, "toy spec not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::spec_validation, std::string("toy spec is not valid JSON: ") + e.what());
  }
  return parse_toy_spec(j);
}

void validate(const ToyDomainSpec& s) {
  auto check = [](bool ok, const std::string& why) { require(ok, ErrorKind::spec_validation, why); };
  check(s.image_size >= 16, "image_size must be at least 16");
  check(s.min_disks >= 1 && s.max_disks >= s.min_disks, "disks must satisfy 1 <= min <= max");
  // Disks of the minimum radius must be packable without overlap.
  const double scale = s.image_size / 32.0;
  const double min_r = 4.5 * scale;
  const double cells = std::floor(s.image_size / (2.0 * min_r + 2.0));
  check(cells * cells >= s.max_disks, "max_disks cannot fit in an image of this size");
  check(s.noise >= 0 && s.noise <= 10, "noise must lie in [0, 10] to keep motifs separable");
  check(!s.classes.empty(), "at least one class is required");
  std::set<std::string> names;
  for (const auto& c : s.classes) {
    check(!c.name.empty(), "class name must be non-empty");
    check(names.insert(c.name).second, "duplicate class name '" + c.name + "'");
    check(c.count >= 1, "class '" + c.name + "' needs count >= 1");
    check(c.theta_min >= 0.0 && c.theta_max <= 1.0 && c.theta_min <= c.theta_max,
          "class '" + c.name + "' theta range must satisfy 0 <= min <= max <= 1");
  }
}

data::LabelSet label_set(const ToyDomainSpec& spec) {
  data::LabelSet out;
  for (const auto& c : spec.classes) out.push_back({c.name, c.is_adenomatous});
  return out;
}

Image render_tile(Motif motif, double theta, int image_size, std::uint64_t tile_seed,
                  const ToyDomainSpec& params) {
  Rng rng(tile_seed);
  const double scale = image_size / 32.0;
  const int n_disks = static_cast<int>(rng.uniform_int(params.min_disks, params.max_disks));
  std::vector<Disk> disks;
  for (int tries = 0; tries < 200 && static_cast<int>(disks.size()) < n_disks; ++tries) {
    const double r = rng.uniform(4.5 * scale, 7.0 * scale);
    const double cx = rng.uniform(r + 1, image_size - r - 1);
    const double cy = rng.uniform(r + 1, image_size - r - 1);
    const bool clear = std::all_of(disks.begin(), disks.end(), [&](const Disk& d) {
      return std::hypot(d.cx - cx, d.cy - cy) > d.r + r + 1.0;
    });
    if (clear) disks.push_back({cx, cy, r});
  }
  const double ring_width = 2.0 * scale;
  const double band = 2.0 * scale;
  const double amp = params.noise;

  Image img(image_size, image_size);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      // Draw noise unconditionally so the stream is identical for every θ.
      const double nr = rng.uniform(-amp, amp);
      const double ng = rng.uniform(-amp, amp);
      const double nb = rng.uniform(-amp, amp);
      Rgb c = kBackground;
      double jitter = 1.0;
      for (const auto& d : disks) {
        const double dist = std::hypot(x + 0.5 - d.cx, y + 0.5 - d.cy);
        if (dist > d.r) continue;
        if (dist >= d.r - ring_width) {
          c = motif == Motif::ringed ? lerp(kRing, kHematoxylin, theta) : kRing;
        } else {
          c = kLumen;
          jitter = 0.5;
          const bool in_band = static_cast<int>(std::floor(y / band)) % 2 == 0;
          if (motif == Motif::striped && in_band) c = lerp(kLumen, kStripe, theta);
        }
        break;
      }
      auto* px = img.at(x, y);
      px[0] = to_byte(c.r + jitter * nr);
      px[1] = to_byte(c.g + jitter * ng);
      px[2] = to_byte(c.b + jitter * nb);
    }
  }
  return img;
}

std::vector<ToyTile> generate_tiles(const ToyDomainSpec& spec) {
  validate(spec);
  std::vector<ToyTile> out;
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const auto& c = spec.classes[ci];
    Rng theta_rng(mix_seed(spec.seed, 1000 + ci));
    for (int i = 0; i < c.count; ++i) {
      const double theta = theta_rng.uniform(c.theta_min, c.theta_max);
      const std::uint64_t tile_seed = mix_seed(mix_seed(spec.seed, ci), static_cast<std::uint64_t>(i));
      out.push_back({render_tile(c.motif, theta, spec.image_size, tile_seed, spec), c.name, theta, tile_seed});
    }
  }
  return out;
}

namespace {

std::string tile_path(const std::string& label, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%05d.png", index);
  return label + "/" + label + buf;
}

}  // namespace

std::vector<data::ImageTile> generate_toy_image_tiles(const ToyDomainSpec& spec) {
  auto tiles = generate_tiles(spec);
  std::vector<data::ImageTile> out;
  out.reserve(tiles.size());
  std::map<std::string, int> next;
  for (auto& t : tiles) {
    data::ImageTile it;
    it.id = tile_path(t.label, next[t.label]++);
    it.pixels = std::move(t.image);
    it.label = t.label;
    it.theta = t.theta;
    out.push_back(std::move(it));
  }
  return out;
}

data::DatasetManifest generate_toy_dataset(const ToyDomainSpec& spec, const fs::path& out_dir) {
  auto tiles = generate_toy_image_tiles(spec);
  data::DatasetManifest m;
  m.root = out_dir;
  m.label_set = label_set(spec);
  for (const auto& t : tiles) {
    write_png(t.pixels, out_dir / t.id);
    data::ManifestEntry e;
    e.path = t.id;
    e.label = t.label;
    e.theta = t.theta;
    m.entries.push_back(std::move(e));
  }
  if (spec.split) m = data::split_dataset(m, *spec.split, spec.seed);
  data::write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

MotifScores motif_scores(const Image& image) {
  MotifScores s;
  const double n = static_cast<double>(image.width) * image.height;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto* px = image.at(x, y);
      s.ring += std::max(0.0, kRingThresholdR - px[0]);
      s.stripe += std::max(0.0, (static_cast<double>(px[0]) - px[1]) - kStripeThresholdRG);
    }
  }
  s.ring /= 255.0 * n;
  s.stripe /= 255.0 * n;
  return s;
}

Motif classify_by_rule(const Image& image) {
  const auto s = motif_scores(image);
  if (s.ring < kRuleEpsilon && s.stripe < kRuleEpsilon) return Motif::plain;
  return s.ring >= s.stripe ? Motif::ringed : Motif::striped;
}

}  // namespace polypforge::toy

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "polypforge/dataset.hpp"

namespace polypforge::toy {

/// Visual motif of a procedural class. All three draw pale "crypt" disks on
/// a pink textured background; `ringed` darkens disk borders toward a
/// hematoxylin purple and `striped` paints magenta bands across disk lumens,
/// both with strength θ.
enum class Motif { plain, ringed, striped };

std::string_view to_string(Motif m) noexcept;
Motif parse_motif(std::string_view text);

struct ToyClassSpec {
  std::string name;
  Motif motif = Motif::plain;
  double theta_min = 0.3;
  double theta_max = 1.0;
  int count = 100;
  bool is_adenomatous = false;
};

struct ToyDomainSpec {
  int image_size = 32;
  std::uint64_t seed = 1;
  int min_disks = 2;
  int max_disks = 3;
  int noise = 6;  // per-channel uniform jitter amplitude
  std::vector<ToyClassSpec> classes;
  std::optional<data::SplitFractions> split;
};

ToyDomainSpec parse_toy_spec(const nlohmann::json& j);
nlohmann::json to_json(const ToyDomainSpec& spec);
ToyDomainSpec load_toy_spec(const std::filesystem::path& path);
/// Throws ErrorKind::spec_validation describing the first violated constraint.
void validate(const ToyDomainSpec& spec);

data::LabelSet label_set(const ToyDomainSpec& spec);

/// Renders one tile. Geometry and noise depend only on `tile_seed`, so for a
/// fixed seed every pixel moves monotonically with θ.
Image render_tile(Motif motif, double theta, int image_size, std::uint64_t tile_seed,
                  const ToyDomainSpec& params);

struct ToyTile {
  Image image;
  std::string label;
  double theta = 0.0;
  std::uint64_t tile_seed = 0;
};

std::vector<ToyTile> generate_tiles(const ToyDomainSpec& spec);

/// Writes `<out_dir>/<class>/<class>_NNNNN.png` plus `<out_dir>/manifest.jsonl`
/// and returns the manifest.
data::DatasetManifest generate_toy_dataset(const ToyDomainSpec& spec, const std::filesystem::path& out_dir);

/// In-memory tiles; ids follow the same `<class>/<class>_NNNNN.png` scheme.
std::vector<data::ImageTile> generate_toy_image_tiles(const ToyDomainSpec& spec);

struct MotifScores {
  double ring = 0.0;    // mean red-channel darkening below 200, /255
  double stripe = 0.0;  // mean red-over-green excess above 60, /255
};

/// Hand-written pixel statistics; independent of any learned model.
MotifScores motif_scores(const Image& image);
Motif classify_by_rule(const Image& image);

}  // namespace polypforge::toy

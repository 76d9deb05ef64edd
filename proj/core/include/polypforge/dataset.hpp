#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polypforge/image.hpp"

namespace polypforge::data {

struct ClassLabel {
  std::string name;
  bool is_adenomatous = false;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

using LabelSet = std::vector<ClassLabel>;

/// HP, NO, TVA, TA, SSA.
LabelSet reference_label_set();

enum class Provenance { real, synthetic };
enum class Split { train, val, test };

std::string_view to_string(Provenance p) noexcept;
std::string_view to_string(Split s) noexcept;
Provenance parse_provenance(std::string_view text);
Split parse_split(std::string_view text);

/// A raster tile with its label and where it came from.
struct ImageTile {
  std::string id;
  Image pixels;
  std::string label;
  Provenance provenance = Provenance::real;
  std::optional<std::string> source_ref;
  std::optional<std::string> generator_ref;
  std::optional<double> theta;

  int width() const noexcept { return pixels.width; }
  int height() const noexcept { return pixels.height; }
};

/// Throws if the provenance/generator_ref pairing is inconsistent.
void validate_tile(const ImageTile& tile);

struct ManifestEntry {
  std::string path;  // relative to the manifest root; doubles as the tile id
  std::string label;
  Split split = Split::train;
  Provenance provenance = Provenance::real;
  std::optional<std::string> source_ref;
  std::optional<std::string> generator_ref;
  std::optional<double> theta;

  const std::string& id() const noexcept { return path; }
  /// Identity of the original image: the part of source_ref before '@', or
  /// the path when there is no source_ref.
  std::string source_id() const;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  LabelSet label_set;
  std::vector<ManifestEntry> entries;

  const ClassLabel* find_label(std::string_view name) const;
  std::filesystem::path resolve(const ManifestEntry& entry) const { return root / entry.path; }

  DatasetManifest with_label(std::string_view label) const;
  DatasetManifest with_split(Split split) const;
  DatasetManifest with_provenance(Provenance provenance) const;
};

struct LoadOptions {
  LabelSet label_set = reference_label_set();
  bool check_files = true;
};

/// Parses the line-oriented JSON manifest; the root is the file's directory.
DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});
/// Writes entries with paths rebased onto the destination's directory.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string manifest_line(const ManifestEntry& entry);

ImageTile load_tile(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<ImageTile> load_tiles(const DatasetManifest& manifest);

/// All fully contained grid tiles, row-major. Returns nothing (and logs a
/// warning) when the image is smaller than one tile.
std::vector<ImageTile> tile_region(const Image& image, int tile_size, int stride,
                                   const std::string& source_id = "image",
                                   const std::string& label = "");

std::int64_t tile_count(std::int64_t height, std::int64_t width, std::int64_t tile_size,
                        std::int64_t stride);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Stratified per class, grouped by source image so that no source image
/// straddles two splits. Deterministic for a fixed seed.
DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& fractions,
                              std::uint64_t seed);

struct ClassShare {
  std::int64_t count = 0;
  double fraction = 0.0;
};

std::map<std::string, ClassShare> class_distribution(const DatasetManifest& manifest);

}  // namespace polypforge::data

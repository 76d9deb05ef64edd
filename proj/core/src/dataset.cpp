#include "polypforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "log.hpp"
#include "polypforge/error.hpp"
#include "polypforge/rng.hpp"

namespace polypforge::data {

namespace fs = std::filesystem;
using nlohmann::json;

LabelSet reference_label_set() {
  return {{"HP", false}, {"NO", false}, {"TVA", true}, {"TA", true}, {"SSA", true}};
}

std::string_view to_string(Provenance p) noexcept {
  return p == Provenance::real ? "real" : "synthetic";
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "real") return Provenance::real;
  if (text == "synthetic") return Provenance::synthetic;
  fail(ErrorKind::invalid_argument, "unknown provenance '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  fail(ErrorKind::invalid_argument, "unknown split '" + std::string(text) + "'");
}

void validate_tile(const ImageTile& tile) {
  if (tile.provenance == Provenance::synthetic) {
    require(tile.generator_ref.has_value(), ErrorKind::invalid_argument,
            "synthetic tile '" + tile.id + "' has no generator_ref");
  } else {
    require(!tile.generator_ref.has_value(), ErrorKind::invalid_argument,
            "real tile '" + tile.id + "' carries a generator_ref");
  }
}

std::string ManifestEntry::source_id() const {
  if (!source_ref) return path;
  const auto at = source_ref->find('@');
  return at == std::string::npos ? *source_ref : source_ref->substr(0, at);
}

const ClassLabel* DatasetManifest::find_label(std::string_view name) const {
  auto it = std::find_if(label_set.begin(), label_set.end(),
                         [&](const ClassLabel& l) { return l.name == name; });
  return it == label_set.end() ? nullptr : &*it;
}

namespace {

template <class Pred>
DatasetManifest filtered(const DatasetManifest& m, Pred pred) {
  DatasetManifest out{m.root, m.label_set, {}};
  std::copy_if(m.entries.begin(), m.entries.end(), std::back_inserter(out.entries), pred);
  return out;
}

}  // namespace

DatasetManifest DatasetManifest::with_label(std::string_view label) const {
  return filtered(*this, [&](const ManifestEntry& e) { return e.label == label; });
}

DatasetManifest DatasetManifest::with_split(Split split) const {
  return filtered(*this, [&](const ManifestEntry& e) { return e.split == split; });
}

DatasetManifest DatasetManifest::with_provenance(Provenance provenance) const {
  return filtered(*this, [&](const ManifestEntry& e) { return e.provenance == provenance; });
}

namespace {

ManifestEntry parse_entry(const std::string& line, std::size_t line_no, const LabelSet& labels) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw LineError(ErrorKind::malformed_line, line_no, std::string("invalid JSON: ") + e.what());
  }
  auto malformed = [&](const std::string& why) { throw LineError(ErrorKind::malformed_line, line_no, why); };
  if (!j.is_object()) malformed("expected a JSON object");
  auto str = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) malformed(std::string("missing key '") + key + "'");
      return std::nullopt;
    }
    if (!j[key].is_string()) malformed(std::string("key '") + key + "' must be a string");
    return j[key].get<std::string>();
  };

  ManifestEntry e;
  e.path = *str("path", true);
  e.label = *str("label", true);
  if (e.path.empty()) malformed("empty path");
  try {
    e.split = parse_split(*str("split", true));
    e.provenance = parse_provenance(str("provenance", false).value_or("real"));
  } catch (const Error& err) {
    malformed(err.what());
  }
  e.source_ref = str("source_ref", false);
  e.generator_ref = str("generator_ref", false);
  if (j.contains("theta") && !j["theta"].is_null()) {
    if (!j["theta"].is_number()) malformed("key 'theta' must be a number");
    e.theta = j["theta"].get<double>();
  }
  if (e.provenance == Provenance::synthetic && !e.generator_ref) {
    malformed("synthetic entry without generator_ref");
  }
  if (e.provenance == Provenance::real && e.generator_ref) {
    malformed("real entry with generator_ref");
  }
  const bool known = std::any_of(labels.begin(), labels.end(),
                                 [&](const ClassLabel& l) { return l.name == e.label; });
  if (!known) throw LineError(ErrorKind::unknown_label, line_no, "unknown label '" + e.label + "'");
  return e;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, const LoadOptions& opts) {
  require(fs::is_regular_file(path), ErrorKind::missing_file, "manifest not found: " + path.string());
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing_file, "cannot open manifest " + path.string());

  std::set<std::string> names;
  for (const auto& l : opts.label_set) {
    require(names.insert(l.name).second, ErrorKind::invalid_argument,
            "duplicate label '" + l.name + "' in label set");
  }

  DatasetManifest m;
  m.root = path.parent_path();
  m.label_set = opts.label_set;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    ManifestEntry e = parse_entry(line, line_no, opts.label_set);
    if (!ids.insert(e.path).second) {
      throw LineError(ErrorKind::malformed_line, line_no, "duplicate entry for '" + e.path + "'");
    }
    if (opts.check_files && !fs::exists(m.resolve(e))) {
      throw LineError(ErrorKind::dangling_reference, line_no,
                      "referenced file does not exist: " + m.resolve(e).string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::string manifest_line(const ManifestEntry& e) {
  json j = {{"path", e.path},
            {"label", e.label},
            {"split", to_string(e.split)},
            {"provenance", to_string(e.provenance)}};
  if (e.source_ref) j["source_ref"] = *e.source_ref;
  if (e.generator_ref) j["generator_ref"] = *e.generator_ref;
  if (e.theta) j["theta"] = *e.theta;
  return j.dump();
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest " + path.string());
  const bool same_root = fs::weakly_canonical(dir) == fs::weakly_canonical(manifest.root.empty() ? fs::path(".") : manifest.root);
  for (ManifestEntry e : manifest.entries) {
    if (!same_root) {
      e.path = fs::relative(fs::absolute(manifest.resolve(e)), fs::absolute(dir)).generic_string();
    }
    out << manifest_line(e) << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

ImageTile load_tile(const DatasetManifest& manifest, const ManifestEntry& entry) {
  ImageTile t;
  t.id = entry.id();
  t.pixels = read_png(manifest.resolve(entry));
  t.label = entry.label;
  t.provenance = entry.provenance;
  t.source_ref = entry.source_ref;
  t.generator_ref = entry.generator_ref;
  t.theta = entry.theta;
  return t;
}

std::vector<ImageTile> load_tiles(const DatasetManifest& manifest) {
  std::vector<ImageTile> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_tile(manifest, e));
  return out;
}

std::int64_t tile_count(std::int64_t height, std::int64_t width, std::int64_t tile_size,
                        std::int64_t stride) {
  if (tile_size > height || tile_size > width) return 0;
  return ((height - tile_size) / stride + 1) * ((width - tile_size) / stride + 1);
}

std::vector<ImageTile> tile_region(const Image& image, int tile_size, int stride,
                                   const std::string& source_id, const std::string& label) {
  require(tile_size >= 1 && stride >= 1, ErrorKind::invalid_argument,
          "tile_size and stride must be positive");
  std::vector<ImageTile> tiles;
  if (tile_size > image.width || tile_size > image.height) {
    log::warn("image {} ({}x{}) is smaller than tile size {}; no tiles produced", source_id,
              image.width, image.height, tile_size);
    return tiles;
  }
  for (int y = 0; y + tile_size <= image.height; y += stride) {
    for (int x = 0; x + tile_size <= image.width; x += stride) {
      ImageTile t;
      t.id = source_id + "@" + std::to_string(x) + "," + std::to_string(y);
      t.pixels = crop(image, x, y, tile_size, tile_size);
      t.label = label;
      t.source_ref = t.id;
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& f,
                              std::uint64_t seed) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  for (double v : fr) {
    require(v >= 0.0 && std::isfinite(v), ErrorKind::invalid_argument, "split fractions must be >= 0");
  }
  require(std::abs(fr[0] + fr[1] + fr[2] - 1.0) < 1e-9, ErrorKind::invalid_argument,
          "split fractions must sum to 1");
  const auto nonzero = static_cast<std::size_t>(std::count_if(fr.begin(), fr.end(), [](double v) { return v > 0; }));
  const std::array<Split, 3> buckets{Split::train, Split::val, Split::test};

  DatasetManifest out = manifest;
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_class[manifest.entries[i].label].push_back(i);

  Rng rng(seed);
  for (const auto& [label, idx] : by_class) {
    require(idx.size() >= nonzero, ErrorKind::split_underflow,
            "class '" + label + "' has " + std::to_string(idx.size()) + " entries but " +
                std::to_string(nonzero) + " non-empty split buckets were requested");
    // Group by source image, keeping first-appearance order before shuffling.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i : idx) {
      const auto src = manifest.entries[i].source_id();
      if (!groups.count(src)) order.push_back(src);
      groups[src].push_back(i);
    }
    rng.shuffle(std::span(order));

    // Largest-remainder apportionment of entry counts.
    const double n = static_cast<double>(idx.size());
    std::array<std::int64_t, 3> target{};
    std::array<double, 3> remainder{};
    std::int64_t assigned = 0;
    for (int b = 0; b < 3; ++b) {
      const double exact = fr[b] * n;
      target[b] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
      remainder[b] = exact - static_cast<double>(target[b]);
      assigned += target[b];
    }
    std::array<int, 3> rank{0, 1, 2};
    std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (int r = 0; assigned < static_cast<std::int64_t>(idx.size()); ++r, ++assigned) target[rank[r % 3]] += 1;

    int bucket = 0;
    std::array<std::int64_t, 3> filled{};
    for (const auto& src : order) {
      while (bucket < 2 && filled[bucket] >= target[bucket]) ++bucket;
      for (std::size_t i : groups[src]) out.entries[i].split = buckets[bucket];
      filled[bucket] += static_cast<std::int64_t>(groups[src].size());
    }
  }
  return out;
}

std::map<std::string, ClassShare> class_distribution(const DatasetManifest& manifest) {
  require(!manifest.entries.empty(), ErrorKind::empty_input, "class distribution of an empty manifest");
  std::map<std::string, ClassShare> out;
  for (const auto& e : manifest.entries) out[e.label].count += 1;
  const double total = static_cast<double>(manifest.entries.size());
  for (auto& [label, share] : out) share.fraction = static_cast<double>(share.count) / total;
  return out;
}

}  // namespace polypforge::data

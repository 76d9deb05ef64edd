#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polypforge/dataset.hpp"

namespace polypforge::turing {

// ---------------------------------------------------------------------------
// Statistics

enum class Sidedness { two_sided, one_sided_greater };

/// (x_hat - x0) / sqrt(x0 (1 - x0) / n). Throws degenerate_null unless
/// 0 < x0 < 1, invalid_argument for n < 1 or non-finite input.
double z_score(double x_hat, double x0, std::int64_t n);

/// Standard normal CDF.
double normal_cdf(double z);

/// Two-sided 2(1 - Phi(|z|)) or one-sided 1 - Phi(z), evaluated through erfc
/// so small tails keep full relative precision.
double p_value(double z, Sidedness sidedness = Sidedness::two_sided);

enum class Truth { real, fake };
std::string_view to_string(Truth t) noexcept;
Truth parse_truth(std::string_view text);

struct Confusion {
  // truth -> label
  std::int64_t real_real = 0, real_fake = 0, fake_real = 0, fake_fake = 0;
  std::int64_t total() const noexcept { return real_real + real_fake + fake_real + fake_fake; }
  std::int64_t correct() const noexcept { return real_real + fake_fake; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct TuringStats {
  std::int64_t n = 0;
  double accuracy = 0.0;
  double x0 = 0.5;
  double z = 0.0;
  double p = 1.0;
  Sidedness sidedness = Sidedness::two_sided;
  Confusion confusion;

  bool significant(double level = 0.05) const noexcept { return p < level; }
  nlohmann::json to_json() const;
  friend bool operator==(const TuringStats&, const TuringStats&) = default;
};

struct TruthLabel {
  Truth truth;
  Truth label;
};

TuringStats compute_stats(std::span<const TruthLabel> pairs, double x0 = 0.5,
                          Sidedness sidedness = Sidedness::two_sided);

// ---------------------------------------------------------------------------
// Sessions

struct SessionItem {
  std::string item_id;  // opaque, safe to show the reviewer
  std::string tile_ref;
  Truth truth = Truth::real;
};

struct ReviewRecord {
  std::string item_id;
  Truth label = Truth::real;
  std::string timestamp;  // ISO-8601 UTC
  double latency_ms = 0.0;
};

enum class SessionState { open, complete };

struct TuringSession {
  std::string id;
  std::string reviewer_id;
  std::uint64_t seed = 0;
  int n_each = 0;
  std::vector<SessionItem> items;  // presentation order
  std::size_t served = 0;          // items handed out so far
  std::int64_t served_at_ms = 0;   // unix ms of the latest hand-out
  std::vector<ReviewRecord> records;
  SessionState state = SessionState::open;

  std::size_t total() const noexcept { return items.size(); }
  std::size_t labelled() const noexcept { return records.size(); }
  const SessionItem* find(std::string_view item_id) const;

  /// Server-side record, ground truth included. Never send to a client.
  nlohmann::json to_private_json() const;
  static TuringSession from_private_json(const nlohmann::json& j);
};

/// Draws n_each tiles from each pool without replacement and shuffles them
/// into a presentation order, all from `seed`. Both pools must share one
/// class label. Throws insufficient_pool when a pool is too small.
TuringSession build_session(std::span<const data::ImageTile> real, std::span<const data::ImageTile> fake,
                            int n_each, std::uint64_t seed, std::string reviewer_id,
                            std::string session_id = {});

/// What the reviewer sees next: an item or the completion signal.
struct NextItem {
  bool complete = false;
  std::string session_id;
  std::string item_id;
  std::size_t position = 0;
  std::size_t total = 0;

  /// Client payload; never carries truth or provenance.
  nlohmann::json to_json() const;
};

/// Returns the first unlabelled item and marks it served. Repeated calls
/// without a label return the same item.
NextItem next_item(TuringSession& session, std::chrono::system_clock::time_point now = {});

/// Accepts a label for the item currently being reviewed. Throws
/// unknown_item, duplicate_label, or ordering (item not yet served).
/// Completes the session once every item is labelled.
const ReviewRecord& record_label(TuringSession& session, std::string_view item_id, Truth label,
                                 std::chrono::system_clock::time_point now = {});

struct RevealRow {
  std::size_t position = 0;
  std::string item_id;
  std::string tile_ref;
  Truth truth = Truth::real;
  Truth label = Truth::real;
  double latency_ms = 0.0;
};

struct SessionReport {
  std::string session_id;
  std::string reviewer_id;
  TuringStats stats;
  std::vector<RevealRow> reveal;

  nlohmann::json to_json() const;
  /// `item_id,truth,label,latency_ms`, presentation order.
  std::string to_csv() const;
};

/// Throws incomplete_session while the session is open.
SessionReport session_report(const TuringSession& session, double x0 = 0.5,
                             Sidedness sidedness = Sidedness::two_sided);

// ---------------------------------------------------------------------------
// Append-only event log

struct LogEvent {
  enum class Kind { served, label } kind = Kind::served;
  std::string item_id;
  std::string timestamp;
  std::optional<Truth> label;
  double latency_ms = 0.0;

  nlohmann::json to_json() const;
  static LogEvent from_json(const nlohmann::json& j);
};

/// Re-applies logged events to a freshly built session; the result matches
/// the session that produced the log.
TuringSession replay(TuringSession fresh, std::span<const LogEvent> events);
std::vector<LogEvent> read_log(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Session store

/// Thread-safe collection of sessions plus the tile catalog they draw from.
/// With a directory, every session is written as `<id>.session.json` and
/// its events appended to `<id>.log.jsonl`; reopening the directory resumes
/// every session where it stopped.
class SessionStore {
 public:
  using Clock = std::function<std::chrono::system_clock::time_point()>;

  explicit SessionStore(std::optional<std::filesystem::path> dir = std::nullopt, Clock clock = {});
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  void add_tiles(std::span<const data::ImageTile> tiles);
  std::size_t tile_count() const;
  std::optional<data::ImageTile> tile(std::string_view tile_ref) const;

  struct CreateRequest {
    std::vector<std::string> real_refs;
    std::vector<std::string> fake_refs;
    std::string target_class;  // used when the ref lists are empty
    int n_each = 100;
    std::uint64_t seed = 0;
    std::string reviewer_id;
  };
  /// Returns the new session id.
  std::string create(const CreateRequest& request);

  bool contains(std::string_view session_id) const;
  NextItem next(std::string_view session_id);
  ReviewRecord label(std::string_view session_id, std::string_view item_id, Truth label);
  SessionReport report(std::string_view session_id, double x0 = 0.5,
                       Sidedness sidedness = Sidedness::two_sided) const;
  TuringSession snapshot(std::string_view session_id) const;
  /// PNG bytes of the tile behind an opaque item id.
  std::vector<std::uint8_t> item_image(std::string_view item_id) const;

 private:
  struct Entry;
  Entry& entry(std::string_view session_id) const;
  void persist_event(const Entry& e, const LogEvent& ev) const;
  void load_directory();

  std::optional<std::filesystem::path> dir_;
  Clock clock_;
  mutable std::mutex mutex_;  // guards the maps, not the sessions
  std::map<std::string, data::ImageTile, std::less<>> tiles_;
  std::map<std::string, std::unique_ptr<Entry>, std::less<>> sessions_;
  std::map<std::string, std::string, std::less<>> item_tiles_;  // item id -> tile ref
  std::uint64_t created_ = 0;
};

}  // namespace polypforge::turing

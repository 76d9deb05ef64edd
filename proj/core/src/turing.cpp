#include "polypforge/turing.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>

#include "log.hpp"
#include "polypforge/error.hpp"
#include "polypforge/hash.hpp"
#include "polypforge/image.hpp"
#include "polypforge/rng.hpp"

namespace polypforge::turing {

using nlohmann::json;
using TimePoint = std::chrono::system_clock::time_point;

// ---------------------------------------------------------------------------
// Statistics

double z_score(double x_hat, double x0, std::int64_t n) {
  require(std::isfinite(x_hat) && std::isfinite(x0), ErrorKind::invalid_argument, "z_score inputs must be finite");
  require(x0 > 0.0 && x0 < 1.0, ErrorKind::degenerate_null,
          "null accuracy x0 = " + std::to_string(x0) + " leaves no variance; it must lie strictly inside (0, 1)");
  require(n >= 1, ErrorKind::invalid_argument, "z_score needs n >= 1");
  return (x_hat - x0) / std::sqrt(x0 * (1.0 - x0) / static_cast<double>(n));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double p_value(double z, Sidedness sidedness) {
  require(!std::isnan(z), ErrorKind::non_finite, "p_value of NaN");
  if (sidedness == Sidedness::two_sided) return std::erfc(std::abs(z) / std::sqrt(2.0));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

std::string_view to_string(Truth t) noexcept { return t == Truth::real ? "real" : "fake"; }

Truth parse_truth(std::string_view text) {
  if (text == "real") return Truth::real;
  if (text == "fake") return Truth::fake;
  fail(ErrorKind::invalid_argument, "label must be 'real' or 'fake', got '" + std::string(text) + "'");
}

namespace {

std::string_view sidedness_name(Sidedness s) { return s == Sidedness::two_sided ? "two_sided" : "one_sided_greater"; }

}  // namespace

json TuringStats::to_json() const {
  return {{"n", n},
          {"accuracy", accuracy},
          {"x0", x0},
          {"z", z},
          {"p", p},
          {"sidedness", sidedness_name(sidedness)},
          {"significant", significant()},
          {"confusion",
           {{"real_real", confusion.real_real},
            {"real_fake", confusion.real_fake},
            {"fake_real", confusion.fake_real},
            {"fake_fake", confusion.fake_fake}}}};
}

TuringStats compute_stats(std::span<const TruthLabel> pairs, double x0, Sidedness sidedness) {
  require(!pairs.empty(), ErrorKind::empty_input, "no labelled items");
  TuringStats s;
  for (const auto& [truth, label] : pairs) {
    if (truth == Truth::real) {
      ++(label == Truth::real ? s.confusion.real_real : s.confusion.real_fake);
    } else {
      ++(label == Truth::real ? s.confusion.fake_real : s.confusion.fake_fake);
    }
  }
  s.n = s.confusion.total();
  s.accuracy = static_cast<double>(s.confusion.correct()) / static_cast<double>(s.n);
  s.x0 = x0;
  s.sidedness = sidedness;
  s.z = z_score(s.accuracy, x0, s.n);
  s.p = p_value(s.z, sidedness);
  return s;
}

// ---------------------------------------------------------------------------
// Sessions

namespace {

std::int64_t unix_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

TimePoint resolve(TimePoint t) { return t == TimePoint{} ? std::chrono::system_clock::now() : t; }

std::string iso8601(std::int64_t ms) {
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms % 1000));
  return buf;
}

std::int64_t parse_iso8601(const std::string& text) {
  std::tm tm{};
  int millis = 0;
  if (std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                  &tm.tm_min, &tm.tm_sec, &millis) != 7) {
    fail(ErrorKind::format, "bad timestamp '" + text + "'");
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  return static_cast<std::int64_t>(timegm(&tm)) * 1000 + millis;
}

std::string item_id_for(const std::string& session_id, std::size_t position) {
  return sha256_hex(session_id + ":" + std::to_string(position)).substr(0, 16);
}

std::size_t position_of(const TuringSession& s, std::string_view item_id) {
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    if (s.items[i].item_id == item_id) return i;
  }
  fail(ErrorKind::unknown_item, "session " + s.id + " has no item '" + std::string(item_id) + "'");
}

void mark_served(TuringSession& s, std::size_t position, std::int64_t ms) {
  if (position + 1 > s.served) {
    s.served = position + 1;
    s.served_at_ms = ms;
  }
}

const ReviewRecord& apply_label(TuringSession& s, std::string_view item_id, Truth label, std::string timestamp,
                                double latency_ms) {
  const auto pos = position_of(s, item_id);
  for (const auto& r : s.records) {
    if (r.item_id == item_id) fail(ErrorKind::duplicate_label, "item '" + std::string(item_id) + "' already labelled");
  }
  if (pos >= s.served) {
    fail(ErrorKind::ordering, "item '" + std::string(item_id) + "' has not been served yet");
  }
  require(s.state == SessionState::open, ErrorKind::ordering, "session " + s.id + " is complete");
  s.records.push_back({std::string(item_id), label, std::move(timestamp), latency_ms});
  if (s.records.size() == s.items.size()) s.state = SessionState::complete;
  return s.records.back();
}

}  // namespace

const SessionItem* TuringSession::find(std::string_view item_id) const {
  for (const auto& it : items) {
    if (it.item_id == item_id) return &it;
  }
  return nullptr;
}

json TuringSession::to_private_json() const {
  json its = json::array();
  for (const auto& it : items) {
    its.push_back({{"item_id", it.item_id}, {"tile_ref", it.tile_ref}, {"truth", to_string(it.truth)}});
  }
  json recs = json::array();
  for (const auto& r : records) {
    recs.push_back({{"item_id", r.item_id},
                    {"label", to_string(r.label)},
                    {"timestamp", r.timestamp},
                    {"latency_ms", r.latency_ms}});
  }
  return {{"id", id},
          {"reviewer_id", reviewer_id},
          {"seed", seed},
          {"n_each", n_each},
          {"items", its},
          {"served", served},
          {"served_at_ms", served_at_ms},
          {"records", recs},
          {"state", state == SessionState::open ? "open" : "complete"}};
}

TuringSession TuringSession::from_private_json(const json& j) {
  TuringSession s;
  try {
    s.id = j.at("id").get<std::string>();
    s.reviewer_id = j.at("reviewer_id").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_each = j.at("n_each").get<int>();
    for (const auto& it : j.at("items")) {
      s.items.push_back({it.at("item_id").get<std::string>(), it.at("tile_ref").get<std::string>(),
                         parse_truth(it.at("truth").get<std::string>())});
    }
    s.served = j.at("served").get<std::size_t>();
    s.served_at_ms = j.value("served_at_ms", std::int64_t{0});
    for (const auto& r : j.at("records")) {
      s.records.push_back({r.at("item_id").get<std::string>(), parse_truth(r.at("label").get<std::string>()),
                           r.at("timestamp").get<std::string>(), r.at("latency_ms").get<double>()});
    }
    s.state = j.at("state").get<std::string>() == "complete" ? SessionState::complete : SessionState::open;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("session record: ") + e.what());
  }
  return s;
}

TuringSession build_session(std::span<const data::ImageTile> real, std::span<const data::ImageTile> fake,
                            int n_each, std::uint64_t seed, std::string reviewer_id, std::string session_id) {
  require(n_each >= 1, ErrorKind::invalid_argument, "n_each must be >= 1");
  const auto need = static_cast<std::size_t>(n_each);
  require(real.size() >= need, ErrorKind::insufficient_pool,
          "real pool holds " + std::to_string(real.size()) + " tiles, session needs " + std::to_string(need));
  require(fake.size() >= need, ErrorKind::insufficient_pool,
          "fake pool holds " + std::to_string(fake.size()) + " tiles, session needs " + std::to_string(need));
  const std::string& cls = real.front().label;
  for (const auto* pool : {&real, &fake}) {
    for (const auto& t : *pool) {
      require(t.label == cls, ErrorKind::invalid_argument,
              "real and fake pools must share one class; found '" + cls + "' and '" + t.label + "'");
    }
  }
  for (const auto& t : real) {
    require(t.provenance == data::Provenance::real, ErrorKind::invalid_argument,
            "tile '" + t.id + "' in the real pool is synthetic");
  }

  // Sort by id first so the draw depends on pool contents, not pool order.
  const auto draw = [&](std::span<const data::ImageTile> pool, std::uint64_t salt) {
    std::vector<std::string> ids;
    for (const auto& t : pool) ids.push_back(t.id);
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorKind::invalid_argument,
            "pool contains duplicate tile ids");
    Rng rng(mix_seed(seed, salt));
    rng.shuffle(std::span(ids));
    ids.resize(need);
    return ids;
  };
  const auto real_ids = draw(real, 0x7EA1);
  const auto fake_ids = draw(fake, 0xFA4E);

  TuringSession s;
  s.reviewer_id = std::move(reviewer_id);
  s.seed = seed;
  s.n_each = n_each;
  if (session_id.empty()) {
    std::string key = s.reviewer_id + "|" + std::to_string(seed);
    for (const auto& id : real_ids) key += "|" + id;
    for (const auto& id : fake_ids) key += "|" + id;
    session_id = sha256_hex(key).substr(0, 12);
  }
  s.id = std::move(session_id);
  for (const auto& id : real_ids) s.items.push_back({{}, id, Truth::real});
  for (const auto& id : fake_ids) s.items.push_back({{}, id, Truth::fake});
  Rng order(mix_seed(seed, 0x0D3E));
  order.shuffle(std::span(s.items));
  for (std::size_t i = 0; i < s.items.size(); ++i) s.items[i].item_id = item_id_for(s.id, i);
  return s;
}

json NextItem::to_json() const {
  json j = {{"session_id", session_id}, {"complete", complete}, {"position", position}, {"total", total}};
  if (!complete) {
    j["item_id"] = item_id;
    j["image_url"] = "/items/" + item_id + "/image";
  }
  return j;
}

NextItem next_item(TuringSession& s, TimePoint now) {
  NextItem n;
  n.session_id = s.id;
  n.total = s.total();
  n.position = s.labelled();
  if (s.state == SessionState::complete) {
    n.complete = true;
    return n;
  }
  mark_served(s, n.position, unix_ms(resolve(now)));
  n.item_id = s.items[n.position].item_id;
  return n;
}

const ReviewRecord& record_label(TuringSession& s, std::string_view item_id, Truth label, TimePoint now) {
  const auto ms = unix_ms(resolve(now));
  return apply_label(s, item_id, label, iso8601(ms), static_cast<double>(std::max<std::int64_t>(0, ms - s.served_at_ms)));
}

SessionReport session_report(const TuringSession& s, double x0, Sidedness sidedness) {
  require(s.state == SessionState::complete, ErrorKind::incomplete_session,
          "session " + s.id + " has " + std::to_string(s.labelled()) + " of " + std::to_string(s.total()) +
              " labels");
  SessionReport r;
  r.session_id = s.id;
  r.reviewer_id = s.reviewer_id;
  std::vector<TruthLabel> pairs;
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    const auto& item = s.items[i];
    const auto rec = std::find_if(s.records.begin(), s.records.end(),
                                  [&](const ReviewRecord& x) { return x.item_id == item.item_id; });
    require(rec != s.records.end(), ErrorKind::incomplete_session, "item " + item.item_id + " has no label");
    r.reveal.push_back({i, item.item_id, item.tile_ref, item.truth, rec->label, rec->latency_ms});
    pairs.push_back({item.truth, rec->label});
  }
  r.stats = compute_stats(pairs, x0, sidedness);
  return r;
}

json SessionReport::to_json() const {
  json rows = json::array();
  for (const auto& x : reveal) {
    rows.push_back({{"position", x.position},
                    {"item_id", x.item_id},
                    {"tile_ref", x.tile_ref},
                    {"truth", to_string(x.truth)},
                    {"label", to_string(x.label)},
                    {"correct", x.truth == x.label},
                    {"latency_ms", x.latency_ms},
                    {"image_url", "/items/" + x.item_id + "/image"}});
  }
  return {{"session_id", session_id}, {"reviewer_id", reviewer_id}, {"stats", stats.to_json()}, {"items", rows}};
}

std::string SessionReport::to_csv() const {
  std::string out = "item_id,truth,label,latency_ms\n";
  for (const auto& x : reveal) {
    char lat[32];
    std::snprintf(lat, sizeof lat, "%.0f", x.latency_ms);
    out += x.item_id + "," + std::string(to_string(x.truth)) + "," + std::string(to_string(x.label)) + "," + lat +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event log

json LogEvent::to_json() const {
  json j = {{"event", kind == Kind::served ? "served" : "label"}, {"item_id", item_id}, {"timestamp", timestamp}};
  if (kind == Kind::label) {
    j["label"] = to_string(label.value_or(Truth::real));
    j["latency_ms"] = latency_ms;
  }
  return j;
}

LogEvent LogEvent::from_json(const json& j) {
  LogEvent e;
  try {
    const auto kind = j.at("event").get<std::string>();
    require(kind == "served" || kind == "label", ErrorKind::format, "unknown event '" + kind + "'");
    e.kind = kind == "served" ? Kind::served : Kind::label;
    e.item_id = j.at("item_id").get<std::string>();
    e.timestamp = j.at("timestamp").get<std::string>();
    if (e.kind == Kind::label) {
      e.label = parse_truth(j.at("label").get<std::string>());
      e.latency_ms = j.at("latency_ms").get<double>();
    }
  } catch (const json::exception& ex) {
    fail(ErrorKind::format, std::string("log event: ") + ex.what());
  }
  return e;
}

TuringSession replay(TuringSession s, std::span<const LogEvent> events) {
  for (const auto& e : events) {
    if (e.kind == LogEvent::Kind::served) {
      mark_served(s, position_of(s, e.item_id), parse_iso8601(e.timestamp));
    } else {
      require(e.label.has_value(), ErrorKind::format, "label event without a label");
      apply_label(s, e.item_id, *e.label, e.timestamp, e.latency_ms);
    }
  }
  return s;
}

std::vector<LogEvent> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing_file, "log not found: " + path.string());
  std::vector<LogEvent> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(LogEvent::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::malformed_line, n, e.what());
    } catch (const LineError&) {
      throw;
    } catch (const Error& e) {
      throw LineError(e.kind(), n, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Store

struct SessionStore::Entry {
  mutable std::mutex mutex;
  TuringSession session;
  std::filesystem::path log_path;
};

SessionStore::SessionStore(std::optional<std::filesystem::path> dir, Clock clock)
    : dir_(std::move(dir)), clock_(std::move(clock)) {
  if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
  if (dir_) {
    std::filesystem::create_directories(*dir_);
    load_directory();
  }
}

SessionStore::~SessionStore() = default;

void SessionStore::load_directory() {
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(*dir_)) {
    const auto name = f.path().filename().string();
    if (name.size() > 13 && name.ends_with(".session.json")) files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    auto fresh = TuringSession::from_private_json(json::parse(in));
    auto e = std::make_unique<Entry>();
    e->log_path = *dir_ / (fresh.id + ".log.jsonl");
    e->session = std::filesystem::exists(e->log_path) ? replay(fresh, read_log(e->log_path)) : fresh;
    for (const auto& it : e->session.items) item_tiles_[it.item_id] = it.tile_ref;
    log::info("resumed session {} at {}/{}", e->session.id, e->session.labelled(), e->session.total());
    sessions_[e->session.id] = std::move(e);
    ++created_;
  }
}

void SessionStore::add_tiles(std::span<const data::ImageTile> tiles) {
  std::lock_guard lock(mutex_);
  for (const auto& t : tiles) tiles_[t.id] = t;
}

std::size_t SessionStore::tile_count() const {
  std::lock_guard lock(mutex_);
  return tiles_.size();
}

std::optional<data::ImageTile> SessionStore::tile(std::string_view ref) const {
  std::lock_guard lock(mutex_);
  const auto it = tiles_.find(ref);
  if (it == tiles_.end()) return std::nullopt;
  return it->second;
}

std::string SessionStore::create(const CreateRequest& req) {
  std::vector<data::ImageTile> real, fake;
  {
    std::lock_guard lock(mutex_);
    const auto collect = [&](const std::vector<std::string>& refs, std::vector<data::ImageTile>& out) {
      for (const auto& r : refs) {
        const auto it = tiles_.find(r);
        require(it != tiles_.end(), ErrorKind::dangling_reference, "unknown tile reference '" + r + "'");
        out.push_back(it->second);
      }
    };
    if (req.real_refs.empty() && req.fake_refs.empty()) {
      require(!req.target_class.empty(), ErrorKind::invalid_argument,
              "session request needs tile references or a target class");
      for (const auto& [id, t] : tiles_) {
        if (t.label != req.target_class) continue;
        (t.provenance == data::Provenance::real ? real : fake).push_back(t);
      }
    } else {
      collect(req.real_refs, real);
      collect(req.fake_refs, fake);
    }
  }
  require(!real.empty() && !fake.empty(), ErrorKind::insufficient_pool,
          "session needs both real and synthetic tiles");
  for (const auto& t : fake) {
    require(t.provenance == data::Provenance::synthetic, ErrorKind::invalid_argument,
            "tile '" + t.id + "' in the fake pool is not synthetic");
  }

  std::lock_guard lock(mutex_);
  std::string id;
  do {
    id = sha256_hex(req.reviewer_id + "|" + std::to_string(req.seed) + "|" + std::to_string(req.n_each) + "|" +
                    std::to_string(created_++))
             .substr(0, 12);
  } while (sessions_.contains(id));
  auto e = std::make_unique<Entry>();
  e->session = build_session(real, fake, req.n_each, req.seed, req.reviewer_id, id);
  if (dir_) {
    e->log_path = *dir_ / (id + ".log.jsonl");
    std::ofstream out(*dir_ / (id + ".session.json"));
    out << e->session.to_private_json().dump(1) << "\n";
    require(static_cast<bool>(out), ErrorKind::io, "cannot write session " + id);
  }
  for (const auto& it : e->session.items) item_tiles_[it.item_id] = it.tile_ref;
  sessions_[id] = std::move(e);
  return id;
}

bool SessionStore::contains(std::string_view id) const {
  std::lock_guard lock(mutex_);
  return sessions_.find(id) != sessions_.end();
}

SessionStore::Entry& SessionStore::entry(std::string_view id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  require(it != sessions_.end(), ErrorKind::unknown_session, "unknown session '" + std::string(id) + "'");
  return *it->second;
}

void SessionStore::persist_event(const Entry& e, const LogEvent& ev) const {
  if (!dir_) return;
  std::ofstream out(e.log_path, std::ios::app);
  out << ev.to_json().dump() << "\n";
  out.flush();
  require(static_cast<bool>(out), ErrorKind::io, "cannot append to " + e.log_path.string());
}

NextItem SessionStore::next(std::string_view id) {
  auto& e = entry(id);
  std::lock_guard lock(e.mutex);
  const auto before = e.session.served;
  const auto now = clock_();
  auto n = next_item(e.session, now);
  if (e.session.served != before) {
    persist_event(e, {LogEvent::Kind::served, n.item_id, iso8601(unix_ms(now)), std::nullopt, 0.0});
  }
  return n;
}

ReviewRecord SessionStore::label(std::string_view id, std::string_view item_id, Truth label) {
  auto& e = entry(id);
  std::lock_guard lock(e.mutex);
  const auto rec = record_label(e.session, item_id, label, clock_());
  persist_event(e, {LogEvent::Kind::label, rec.item_id, rec.timestamp, rec.label, rec.latency_ms});
  return rec;
}

SessionReport SessionStore::report(std::string_view id, double x0, Sidedness sidedness) const {
  auto& e = entry(id);
  std::lock_guard lock(e.mutex);
  return session_report(e.session, x0, sidedness);
}

TuringSession SessionStore::snapshot(std::string_view id) const {
  auto& e = entry(id);
  std::lock_guard lock(e.mutex);
  return e.session;
}

std::vector<std::uint8_t> SessionStore::item_image(std::string_view item_id) const {
  std::lock_guard lock(mutex_);
  const auto it = item_tiles_.find(item_id);
  require(it != item_tiles_.end(), ErrorKind::unknown_item, "unknown item '" + std::string(item_id) + "'");
  const auto tile = tiles_.find(it->second);
  require(tile != tiles_.end(), ErrorKind::missing_file, "image for item '" + std::string(item_id) + "' is not loaded");
  return encode_png(tile->second.pixels);
}

}  // namespace polypforge::turing

#include "polypforge/turing_service.hpp"

#include <httplib.h>

#include <thread>

#include "log.hpp"
#include "polypforge/error.hpp"

namespace polypforge::turing {

using nlohmann::json;

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::unknown_session:
    case ErrorKind::unknown_item:
    case ErrorKind::missing_file:
    case ErrorKind::dangling_reference:
      return 404;
    case ErrorKind::duplicate_label:
    case ErrorKind::ordering:
      return 409;
    case ErrorKind::incomplete_session:
      return 403;
    case ErrorKind::io:
      return 500;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorKind kind, const std::string& message) {
  send_json(res, status_for(kind), {{"error", to_string(kind)}, {"message", message}});
}

// Runs `fn`, mapping library errors and malformed JSON onto HTTP statuses.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e.kind(), e.what());
  } catch (const json::exception& e) {
    send_error(res, ErrorKind::invalid_argument, std::string("malformed JSON body: ") + e.what());
  }
}

json parse_body(const httplib::Request& req) {
  const json j = json::parse(req.body);
  require(j.is_object(), ErrorKind::invalid_argument, "request body must be a JSON object");
  return j;
}

}  // namespace

struct TuringService::Impl {
  SessionStore& store;
  ServiceConfig config;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  Impl(SessionStore& s, ServiceConfig c) : store(s), config(std::move(c)) { routes(); }

  void routes() {
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = parse_body(req);
        SessionStore::CreateRequest r;
        r.real_refs = j.value("real", std::vector<std::string>{});
        r.fake_refs = j.value("fake", std::vector<std::string>{});
        r.target_class = j.value("target_class", "");
        r.n_each = j.value("n_each", 100);
        r.seed = j.value("seed", std::uint64_t{0});
        r.reviewer_id = j.value("reviewer_id", "");
        require(!r.reviewer_id.empty(), ErrorKind::invalid_argument, "reviewer_id is required");
        const auto id = store.create(r);
        const auto n = store.snapshot(id).total();
        send_json(res, 201, {{"session_id", id}, {"reviewer_id", r.reviewer_id}, {"total", n}});
      });
    });
    server.Get(R"(/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, store.next(req.matches[1].str()).to_json()); });
    });
    server.Post(R"(/sessions/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = parse_body(req);
        const auto id = req.matches[1].str();
        const auto item = j.at("item_id").get<std::string>();
        const auto rec = store.label(id, item, parse_truth(j.at("label").get<std::string>()));
        const auto s = store.snapshot(id);
        send_json(res, 200,
                  {{"accepted", true},
                   {"item_id", rec.item_id},
                   {"labelled", s.labelled()},
                   {"total", s.total()},
                   {"complete", s.state == SessionState::complete}});
      });
    });
    server.Get(R"(/sessions/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto report = store.report(req.matches[1].str(), config.x0, config.sidedness);
        if (req.get_param_value("format") == "csv") {
          res.status = 200;
          res.set_content(report.to_csv(), "text/csv");
        } else {
          send_json(res, 200, report.to_json());
        }
      });
    });
    server.Get(R"(/items/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto bytes = store.item_image(req.matches[1].str());
        res.status = 200;
        res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), "image/png");
      });
    });
    if (config.ui_dir) {
      require(server.set_mount_point("/ui", config.ui_dir->string()), ErrorKind::missing_file,
              "UI bundle directory not found: " + config.ui_dir->string());
    }
  }

  void bind() {
    if (config.port == 0) {
      port = server.bind_to_any_port(config.host);
    } else {
      port = server.bind_to_port(config.host, config.port) ? config.port : -1;
    }
    require(port > 0, ErrorKind::io, "cannot bind " + config.host + ":" + std::to_string(config.port));
    log::info("turing service listening on http://{}:{}", config.host, port);
  }
};

TuringService::TuringService(SessionStore& store, ServiceConfig config)
    : impl_(std::make_unique<Impl>(store, std::move(config))) {}

TuringService::~TuringService() { stop(); }

int TuringService::start() {
  impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void TuringService::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void TuringService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int TuringService::port() const noexcept { return impl_->port; }

}  // namespace polypforge::turing

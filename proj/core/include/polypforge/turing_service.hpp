#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "polypforge/turing.hpp"

namespace polypforge::turing {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  double x0 = 0.5;
  Sidedness sidedness = Sidedness::two_sided;
  std::optional<std::filesystem::path> ui_dir;  // static bundle mounted at /ui/
};

/// HTTP front end over a SessionStore.
///
///   POST /sessions                 {reviewer_id, seed, n_each, real[], fake[] | target_class}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/labels     {item_id, label}
///   GET  /sessions/{id}/report     403 until complete; ?format=csv for CSV
///   GET  /items/{id}/image         image/png
///
/// Errors are JSON {error, message} with 400/403/404/409.
class TuringService {
 public:
  TuringService(SessionStore& store, ServiceConfig config);
  ~TuringService();
  TuringService(const TuringService&) = delete;
  TuringService& operator=(const TuringService&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace polypforge::turing

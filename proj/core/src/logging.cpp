#include "polypforge/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

#include "log.hpp"
#include "polypforge/error.hpp"

namespace polypforge {

void set_log_level(std::string_view level) {
  const auto parsed = spdlog::level::from_str(std::string(level));
  require(parsed != spdlog::level::off || level == "off", ErrorKind::invalid_argument,
          "unknown log level '" + std::string(level) + "'");
  spdlog::set_level(parsed);
}

void init_logging_from_env(std::string_view fallback) {
  const char* env = std::getenv("POLYPFORGE_LOG");
  set_log_level(env && *env ? std::string_view(env) : fallback);
}

void log_to_stderr() {
  auto logger = spdlog::get("polypforge");
  if (!logger) logger = spdlog::stderr_color_mt("polypforge");
  logger->set_level(spdlog::get_level());
  spdlog::set_default_logger(logger);
}

}  // namespace polypforge

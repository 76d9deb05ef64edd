#pragma once

#include <string_view>

namespace polypforge {

/// One of trace, debug, info, warn, error, off.
void set_log_level(std::string_view level);

/// Applies $POLYPFORGE_LOG when set, otherwise `fallback`.
void init_logging_from_env(std::string_view fallback = "info");

/// Sends log output to stderr, keeping stdout for results.
void log_to_stderr();

}  // namespace polypforge

#pragma once

#include <spdlog/spdlog.h>

namespace polypforge::log {

using spdlog::debug;
using spdlog::error;
using spdlog::info;
using spdlog::warn;

}  // namespace polypforge::log

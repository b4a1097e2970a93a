#pragma once

#include <string_view>

namespace rgbmark {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Process-wide threshold; messages above it are dropped. Default kWarn.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Thread-safe line output to stderr.
void log_warn(std::string_view msg);
void log_info(std::string_view msg);
void log_debug(std::string_view msg);

}  // namespace rgbmark

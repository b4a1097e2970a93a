#include "rgbmark/core/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace rgbmark {

namespace {

std::atomic<int> g_level{static_cast<int>(LogLevel::kWarn)};
std::mutex g_mutex;

void emit(LogLevel level, const char* tag, std::string_view msg) {
  if (static_cast<int>(level) > g_level.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(g_mutex);
  std::cerr << tag << msg << '\n';
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warn(std::string_view msg) { emit(LogLevel::kWarn, "warning: ", msg); }
void log_info(std::string_view msg) { emit(LogLevel::kInfo, "", msg); }
void log_debug(std::string_view msg) { emit(LogLevel::kDebug, "debug: ", msg); }

}  // namespace rgbmark

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>

namespace iene::util {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2 };

/// Process-wide log level, initialized from IENE_LOG_LEVEL (debug|info|warn).
inline LogLevel& log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("IENE_LOG_LEVEL");
    if (env == nullptr) return LogLevel::kInfo;
    std::string_view v(env);
    if (v == "debug") return LogLevel::kDebug;
    if (v == "warn") return LogLevel::kWarn;
    return LogLevel::kInfo;
  }();
  return level;
}

template <typename... Args>
void log(LogLevel level, const char* fmt, Args... args) {
  if (level < log_level()) return;
  const char* tag = level == LogLevel::kDebug ? "debug" : level == LogLevel::kInfo ? "info" : "warn";
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  log(LogLevel::kInfo, fmt, args...);
}
template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  log(LogLevel::kDebug, fmt, args...);
}
template <typename... Args>
void log_warn(const char* fmt, Args... args) {
  log(LogLevel::kWarn, fmt, args...);
}

}  // namespace iene::util

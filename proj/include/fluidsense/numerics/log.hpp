#pragma once

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>
#include <string_view>

namespace fluidsense::log {

enum class Level { error = 0, info = 1, debug = 2 };

/// Level comes from FLUIDSENSE_LOG (error|info|debug), default info.
inline Level level() {
  static const Level lvl = [] {
    const char* env = std::getenv("FLUIDSENSE_LOG");
    if (env == nullptr) return Level::info;
    const std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return lvl;
}

inline void write(Level lvl, std::string_view msg) {
  if (static_cast<int>(lvl) > static_cast<int>(level())) return;
  static std::mutex mu;
  const char* tag = lvl == Level::error ? "error" : lvl == Level::info ? "info" : "debug";
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[fluidsense:%s] %.*s\n", tag, static_cast<int>(msg.size()), msg.data());
}

inline void error(std::string_view msg) { write(Level::error, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

}  // namespace fluidsense::log

#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace aarchive::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Global threshold, initialized once from the AARCHIVE_LOG environment
/// variable (debug|info|warn|error|off). Defaults to warn.
Level threshold();
void set_threshold(Level level);

namespace detail {
void emit(Level level, const std::string& msg);
}

template <typename... Args>
void write(Level level, Args&&... args) {
  if (level < threshold()) return;
  std::ostringstream os;
  (os << ... << args);
  detail::emit(level, os.str());
}

template <typename... Args>
void debug(Args&&... args) {
  write(Level::Debug, std::forward<Args>(args)...);
}
template <typename... Args>
void info(Args&&... args) {
  write(Level::Info, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(Args&&... args) {
  write(Level::Warn, std::forward<Args>(args)...);
}
template <typename... Args>
void error(Args&&... args) {
  write(Level::Error, std::forward<Args>(args)...);
}

}  // namespace aarchive::log

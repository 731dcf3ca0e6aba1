#include "aarchive/log.hpp"

#include <atomic>
#include <cstdlib>

namespace aarchive::log {

namespace {

Level parse_env() {
  const char* env = std::getenv("AARCHIVE_LOG");
  if (!env) return Level::Warn;
  std::string v(env);
  for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "debug") return Level::Debug;
  if (v == "info") return Level::Info;
  if (v == "warn" || v == "warning") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off" || v == "none") return Level::Off;
  return Level::Warn;
}

std::atomic<Level>& threshold_storage() {
  static std::atomic<Level> value{parse_env()};
  return value;
}

const char* label(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    default: return "";
  }
}

}  // namespace

Level threshold() { return threshold_storage().load(std::memory_order_relaxed); }

void set_threshold(Level level) { threshold_storage().store(level, std::memory_order_relaxed); }

namespace detail {

void emit(Level level, const std::string& msg) {
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  std::cerr << "[aarchive:" << label(level) << "] " << msg << "\n";
}

}  // namespace detail

}  // namespace aarchive::log

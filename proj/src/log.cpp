#include "cardiofuse/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace cardiofuse {

namespace {
std::atomic<LogLevel> g_level{LogLevel::kInfo};
std::mutex g_mutex;

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarning: return "warning";
    case LogLevel::kError: return "error";
    case LogLevel::kSilent: break;
  }
  return "";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, const std::string& message) {
  if (level < g_level.load() || level == LogLevel::kSilent) return;
  std::lock_guard lock(g_mutex);
  std::cerr << '[' << tag(level) << "] " << message << '\n';
}

}  // namespace cardiofuse

#pragma once

#include <string>

namespace cardiofuse {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kSilent = 4 };

/// Messages below this level are dropped. Output goes to stderr.
void set_log_level(LogLevel level);
LogLevel log_level();

void log(LogLevel level, const std::string& message);
inline void log_info(const std::string& message) { log(LogLevel::kInfo, message); }
inline void log_warning(const std::string& message) { log(LogLevel::kWarning, message); }
inline void log_debug(const std::string& message) { log(LogLevel::kDebug, message); }

}  // namespace cardiofuse

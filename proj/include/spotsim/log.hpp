#pragma once

#include <string>

namespace spotsim {

enum class LogLevel { Off = 0, Info = 1, Debug = 2 };

// Verbosity is read once per process from the SPOTSIM_LOG environment
// variable ("info"/"1" or "debug"/"2"; anything else means off).
LogLevel log_level();

inline bool log_enabled(LogLevel level) {
  return static_cast<int>(level) <= static_cast<int>(log_level());
}

// Writes one line to stderr if `level` is enabled.
void log_line(LogLevel level, const std::string& text);

}  // namespace spotsim

#include "spotsim/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace spotsim {

static LogLevel parse_level() {
  const char* raw = std::getenv("SPOTSIM_LOG");
  if (raw == nullptr) return LogLevel::Off;
  if (std::strcmp(raw, "debug") == 0 || std::strcmp(raw, "2") == 0) return LogLevel::Debug;
  if (std::strcmp(raw, "info") == 0 || std::strcmp(raw, "1") == 0) return LogLevel::Info;
  return LogLevel::Off;
}

LogLevel log_level() {
  static const LogLevel level = parse_level();
  return level;
}

void log_line(LogLevel level, const std::string& text) {
  if (!log_enabled(level)) return;
  std::fprintf(stderr, "[spotsim] %s\n", text.c_str());
}

}  // namespace spotsim

#include "atpnet/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace atp {

namespace {
std::atomic<LogLevel> g_level{LogLevel::kInfo};
std::atomic<std::size_t> g_warnings{0};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, std::string_view message) {
  if (level == LogLevel::kWarning) ++g_warnings;
  if (level < g_level.load()) return;
  static constexpr const char* kTags[] = {"debug", "info", "warning", "error"};
  std::lock_guard lock(g_mutex);
  std::cerr << "[atpnet " << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

std::size_t warning_count() { return g_warnings; }

}  // namespace atp

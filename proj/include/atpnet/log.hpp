#pragma once

#include <cstddef>
#include <string_view>

namespace atp {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kSilent = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view message) { log(LogLevel::kInfo, message); }
inline void log_warning(std::string_view message) { log(LogLevel::kWarning, message); }

// Warnings emitted since process start, regardless of the level filter.
std::size_t warning_count();

}  // namespace atp

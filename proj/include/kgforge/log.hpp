#pragma once

#include <string>

namespace kgforge {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Verbosity comes from the KGFORGE_LOG environment variable
// {error, info, debug}; default is info. Messages go to stderr so stdout
// stays free for command output.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace kgforge

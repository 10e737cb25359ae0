#include "kgforge/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace kgforge {

namespace {

LogLevel g_level = [] {
    const char* env = std::getenv("KGFORGE_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    if (std::strcmp(env, "error") == 0) return LogLevel::kError;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    return LogLevel::kInfo;
}();

void emit(const char* tag, const std::string& msg) {
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() {
    return g_level;
}

void set_log_level(LogLevel level) {
    g_level = level;
}

void log_error(const std::string& msg) {
    emit("error", msg);
}

void log_info(const std::string& msg) {
    if (g_level >= LogLevel::kInfo) emit("info", msg);
}

void log_debug(const std::string& msg) {
    if (g_level >= LogLevel::kDebug) emit("debug", msg);
}

}  // namespace kgforge

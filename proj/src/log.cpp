#include "ecgdx/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace ecgdx {

namespace {
std::atomic<LogLevel> g_level{LogLevel::warn};
std::mutex g_mutex;

void emit(const char* tag, const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_mutex);
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}
}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

bool set_log_level(std::string_view name) {
    if (name == "error") set_log_level(LogLevel::error);
    else if (name == "warn") set_log_level(LogLevel::warn);
    else if (name == "info") set_log_level(LogLevel::info);
    else if (name == "debug") set_log_level(LogLevel::debug);
    else return false;
    return true;
}

void log_error(const std::string& msg) {
    if (g_level.load() >= LogLevel::error) emit("error", msg);
}
void log_warn(const std::string& msg) {
    if (g_level.load() >= LogLevel::warn) emit("warn", msg);
}
void log_info(const std::string& msg) {
    if (g_level.load() >= LogLevel::info) emit("info", msg);
}
void log_debug(const std::string& msg) {
    if (g_level.load() >= LogLevel::debug) emit("debug", msg);
}

}  // namespace ecgdx

#pragma once

#include <string>
#include <string_view>

namespace ecgdx {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();
bool set_log_level(std::string_view name);  // "error", "warn", "info", "debug"

void log_error(const std::string& msg);
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace ecgdx

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ecgdx {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

// Strict full-string parse; returns nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

// Plain delimiter split; cohort files carry no quoting or embedded delimiters.
std::vector<std::string_view> split(std::string_view line, char delim);

}  // namespace ecgdx

#pragma once

// Small text helpers shared by the exporters and parsers.

#include <string>
#include <string_view>
#include <vector>

namespace trafficfl::text {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
/// Strict parse of a whole token; throws std::invalid_argument.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// FNV-1a 64-bit hash rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace trafficfl::text

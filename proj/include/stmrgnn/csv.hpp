#pragma once

// Small CSV helpers shared by the loaders and report writers. Fields are
// comma-separated without quoting; every file starts with a header row.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace stmrgnn::csv {

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

double parse_double(std::string_view field, std::size_t line);
long long parse_int(std::string_view field, std::size_t line);

// Shortest text that parses back to the same double.
std::string format_double(double v);

// ISO-8601 UTC, "YYYY-MM-DDTHH:MM:SSZ" (trailing Z optional on input).
std::int64_t parse_timestamp(std::string_view text, std::size_t line = 0);
std::string format_timestamp(std::int64_t seconds);

// Weekday of a timestamp, 0 = Monday.
int weekday(std::int64_t seconds);

std::ofstream open_output(const std::filesystem::path& path);

}  // namespace stmrgnn::csv

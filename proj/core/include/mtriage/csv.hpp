#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtriage::csv {

/// Splits one line on `sep`. No quoting: none of the artifact formats
/// contain separators inside fields.
std::vector<std::string> split(std::string_view line, char sep = ',');

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name; throws ParseError when absent.
    std::size_t column(std::string_view name) const;
};

/// Reads a CSV file, skipping blank lines and lines starting with '#'.
/// The first remaining line is the header. Throws IoError if unreadable.
Table read(const std::filesystem::path& path);
Table parse(std::string_view text);

/// Leading run_config comment for CSV artifacts.
std::string run_config_line(const nlohmann::json& run_config);

/// Shortest round-trip decimal representation.
std::string format_number(double value);

double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

/// Writes `content` to `path` atomically enough for our purposes (truncate +
/// write); throws IoError on failure.
void write_text(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

} // namespace mtriage::csv

#include "mtriage/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mtriage/errors.hpp"

namespace mtriage::csv {

std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw ParseError(fmt::format("missing CSV column '{}'", name));
}

Table parse(std::string_view text) {
    Table table;
    bool have_header = false;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) break;
            continue;
        }
        auto fields = split(line);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
        } else {
            if (fields.size() != table.header.size()) {
                throw ParseError(fmt::format("CSV line {}: expected {} fields, got {}", line_no,
                                             table.header.size(), fields.size()));
            }
            table.rows.push_back(std::move(fields));
        }
        if (end == text.size()) break;
    }
    return table;
}

Table read(const std::filesystem::path& path) {
    return parse(read_text(path));
}

std::string run_config_line(const nlohmann::json& run_config) {
    return "# run_config: " + run_config.dump() + "\n";
}

std::string format_number(double value) {
    return fmt::format("{}", value);
}

double parse_double(std::string_view text, std::string_view what) {
    // std::from_chars for double is available in libstdc++ 11.
    double value = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    if (!text.empty() && text.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw ParseError(fmt::format("invalid number '{}' for {}", text, what));
    }
    return value;
}

long long parse_int(std::string_view text, std::string_view what) {
    long long value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw ParseError(fmt::format("invalid integer '{}' for {}", text, what));
    }
    return value;
}

void write_text(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace mtriage::csv

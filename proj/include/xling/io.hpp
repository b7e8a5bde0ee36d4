#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace xling {

std::string read_text_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view content);
nlohmann::json parse_json_file(const std::filesystem::path& path);

// Minimal RFC 4180 CSV: comma separated, double-quote escaping, LF or CRLF
// line endings. Cells that contain a comma, quote or newline are quoted on
// output.
using CsvRow = std::vector<std::string>;

struct CsvLine {
    std::size_t line_number = 0;  // 1-based line where the record starts
    CsvRow cells;
};

std::vector<CsvLine> parse_csv(std::string_view text);
std::string csv_escape(std::string_view cell);
std::string format_csv_row(const CsvRow& row);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
// Fixed decimals, for report columns.
std::string format_fixed(double v, int decimals);
double parse_double(const std::string& s, const std::string& context);

std::string sha256_hex(std::string_view data);

}  // namespace xling

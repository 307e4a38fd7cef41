#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nws {

using CsvRow = std::vector<std::string>;

// RFC 4180: fields containing comma, quote, CR or LF are quoted, quotes doubled.
std::string csv_escape(std::string_view field);
std::string csv_line(const CsvRow& row);
void write_csv(const std::filesystem::path& path, const CsvRow& header, const std::vector<CsvRow>& rows);

struct CsvTable {
    CsvRow header;
    std::vector<CsvRow> rows;
    // Column position by name; throws FormatError when absent.
    std::size_t column(std::string_view name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace nws

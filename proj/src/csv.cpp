#include "nws/csv.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace nws {

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_line(const CsvRow& row) {
    std::string out;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(row[i]);
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const CsvRow& header, const std::vector<CsvRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << csv_line(header) << "\r\n";
    for (const auto& r : rows) {
        if (r.size() != header.size())
            throw Error(fmt::format("'{}': row has {} fields, header has {}", path.string(), r.size(), header.size()));
        out << csv_line(r) << "\r\n";
    }
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw FormatError(fmt::format("missing CSV column '{}'", name));
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"': quoted = true; any = true; break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                any = true;
                break;
            case '\r': break;
            case '\n':
                row.push_back(std::move(field));
                field.clear();
                rows.push_back(std::move(row));
                row.clear();
                any = false;
                break;
            default: field += c; any = true;
        }
    }
    if (quoted) throw FormatError(fmt::format("'{}': unterminated quoted field", path.string()));
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(fmt::format("'{}': empty CSV", path.string()));
    CsvTable t;
    t.header = std::move(rows.front());
    t.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (t.rows[r].size() != t.header.size())
            throw FormatError(fmt::format("'{}': line {} has {} fields, header has {}", path.string(), r + 2,
                                          t.rows[r].size(), t.header.size()));
    return t;
}

std::string format_double(double v) { return fmt::format("{}", v); }

double parse_double(std::string_view s) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(fmt::format("not a number: '{}'", s));
    return v;
}

}  // namespace nws

#include "aminn/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aminn/error.hpp"

namespace aminn::csv {
namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw InputError(source + ": missing column '" + std::string(name) + "'");
}

Table parse(std::string_view text, std::string source) {
    Table table;
    table.source = std::move(source);
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
        if (trim(line).empty()) {
            if (nl == text.size()) break;
            continue;
        }
        auto cells = split(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
        } else {
            if (cells.size() != table.header.size()) {
                throw InputError(table.source + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(table.header.size()) + " columns, found " +
                                 std::to_string(cells.size()));
            }
            table.rows.push_back(std::move(cells));
            table.line_numbers.push_back(line_no);
        }
        if (nl == text.size()) break;
    }
    if (!have_header) throw InputError(table.source + ": empty file");
    return table;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

double parse_double(std::string_view cell, const Table& table, std::size_t row, std::size_t col) {
    const auto where = [&] {
        return table.source + ":" + std::to_string(table.line_numbers.at(row)) + ": column '" +
               table.header.at(col) + "'";
    };
    if (cell.empty()) throw InputError(where() + ": empty cell");
    double value = 0.0;
    const char* begin = cell.data();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw InputError(where() + ": not a number: '" + std::string(cell) + "'");
    }
    if (!std::isfinite(value)) {
        throw InputError(where() + ": non-finite value '" + std::string(cell) + "'");
    }
    return value;
}

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, ptr);
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw InputError("write failed: " + path.string());
}

}  // namespace aminn::csv

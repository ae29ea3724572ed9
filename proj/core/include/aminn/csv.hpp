#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aminn::csv {

struct Table {
    std::vector<std::string> header;
    // Each row has header.size() cells; line_numbers[i] is the 1-based
    // source line of rows[i].
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::string source;

    std::size_t column(std::string_view name) const;  // throws InputError if absent
};

// Comma separated, no quoting, surrounding whitespace trimmed per cell.
// Blank lines are skipped; a row with the wrong number of cells is an
// InputError naming the file and line.
Table read(const std::filesystem::path& path);
Table parse(std::string_view text, std::string source = "<memory>");

double parse_double(std::string_view cell, const Table& table, std::size_t row, std::size_t col);

// Shortest representation that parses back to the same double.
std::string format_double(double value);

void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace aminn::csv

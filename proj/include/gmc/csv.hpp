/*
 *   Copyright 2026 The gmcomplete Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gmc/errors.hpp"

namespace gmc {

/// Shortest %.17g rendering: round-trips any finite double through text.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

}  // namespace detail

/// Reads a comma-separated file with a header row. Cells are unquoted; rows
/// must all carry the header's column count.
inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("csv: read_csv_file: cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cells = detail::split_csv_line(line);
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size())
            throw parse_error("csv: read_csv_file: '" + path + "' line " +
                              std::to_string(lineno) + ": expected " +
                              std::to_string(table.header.size()) + " cells, got " +
                              std::to_string(cells.size()));
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) throw parse_error("csv: read_csv_file: '" + path + "' is empty");
    return table;
}

inline void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);  // binary keeps \n on every platform
    if (!out) throw io_error("csv: write_csv_file: cannot open '" + path + "'");
    for (std::size_t j = 0; j < header.size(); ++j)
        out << (j ? "," : "") << header[j];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << '\n';
    }
    if (!out) throw io_error("csv: write_csv_file: write failed for '" + path + "'");
}

/// Strict full-string double parse; `where` prefixes the error.
inline double parse_number(const std::string& cell, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw parse_error(where + ": not numeric '" + cell + "'");
    }
    if (used != cell.size()) throw parse_error(where + ": not numeric '" + cell + "'");
    return v;
}

}  // namespace gmc

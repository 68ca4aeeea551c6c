#pragma once

#include <concepts>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypctl {

/// Formats a double with enough digits to round-trip exactly.  Using a fixed
/// printf conversion keeps output byte-identical across runs and platforms
/// with the same libc, which the regression tooling relies on.
inline std::string csv_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

template <std::integral T>
std::string csv_number(T v) {
    return std::to_string(v);
}

/// Minimal CSV emitter: fixed header written at construction, one row per
/// call.  Cells are pre-formatted strings so callers control the exact byte
/// representation; commas and newlines are not escaped because every writer
/// in this project emits plain numbers, identifiers, or sign strings.
class CsvFile {
public:
    CsvFile(const std::string& path, const std::vector<std::string>& columns)
        : out_(path, std::ios::binary), width_(columns.size()) {
        if (!out_) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
        if (columns.empty()) throw std::invalid_argument("csv: header must have at least one column");
        write_cells(columns);
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != width_)
            throw std::invalid_argument("csv: row width " + std::to_string(cells.size()) +
                                        " does not match header width " + std::to_string(width_));
        write_cells(cells);
    }

    void close() { out_.close(); }

private:
    void write_cells(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::ofstream out_;
    std::size_t width_;
};

}  // namespace hypctl

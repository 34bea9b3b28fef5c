// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdm/order.hpp"

namespace mdm {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_string() const {
        std::ostringstream os;
        for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
        os << '\n';
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
            os << '\n';
        }
        return os.str();
    }
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_file: cannot open " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write_file: write failed for " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_file: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

// Binary PPM (P6) heat image of an unmask order: earlier ranks are darker.
inline std::string order_to_ppm(const UnmaskOrder& order) {
    const int n_cells = order.rows * order.cols;
    std::vector<std::uint8_t> gray(static_cast<size_t>(n_cells), 0);
    for (int rank = 0; rank < order.size(); ++rank) {
        const auto [r, c] = order.positions[static_cast<size_t>(rank)];
        const int v = n_cells <= 1 ? 0 : (255 * rank) / (n_cells - 1);
        gray[static_cast<size_t>(r) * order.cols + c] = static_cast<std::uint8_t>(v);
    }
    std::ostringstream os;
    os << "P6\n" << order.cols << " " << order.rows << "\n255\n";
    for (std::uint8_t g : gray) {
        os.put(static_cast<char>(g));
        os.put(static_cast<char>(g));
        os.put(static_cast<char>(g));
    }
    return os.str();
}

inline std::string order_to_csv(const UnmaskOrder& order) {
    CsvTable t;
    t.header = {"rank", "row", "col"};
    for (int rank = 0; rank < order.size(); ++rank) {
        const auto [r, c] = order.positions[static_cast<size_t>(rank)];
        t.rows.push_back({std::to_string(rank), std::to_string(r), std::to_string(c)});
    }
    return t.to_string();
}

inline std::string format_double(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return std::string(buf);
}

}  // namespace mdm

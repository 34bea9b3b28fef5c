// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mdm/rng.hpp"

namespace mdm {

// A full unmasking order over a grid: a permutation of all cells.
struct UnmaskOrder {
    int rows = 0;
    int cols = 0;
    std::vector<std::pair<int, int>> positions;  // (row, col), emission order

    int size() const { return static_cast<int>(positions.size()); }

    std::vector<int> flat() const {
        std::vector<int> out;
        out.reserve(positions.size());
        for (auto [r, c] : positions) out.push_back(r * cols + c);
        return out;
    }

    bool is_permutation() const {
        if (size() != rows * cols) return false;
        std::vector<char> seen(static_cast<size_t>(rows * cols), 0);
        for (auto [r, c] : positions) {
            if (r < 0 || r >= rows || c < 0 || c >= cols) return false;
            const size_t i = static_cast<size_t>(r * cols + c);
            if (seen[i]) return false;
            seen[i] = 1;
        }
        return true;
    }
};

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline int log2_exact(int n) {
    int d = 0;
    while ((1 << d) < n) ++d;
    return d;
}

// Recursive quadrant subdivision: at each depth d the grid splits into a
// 2^d x 2^d partition and every still-empty cell receives one uniformly
// placed position, cells visited in a fresh random permutation. After the
// first 4^d emissions every depth-d cell holds exactly one of them.
inline UnmaskOrder stratified_order(int n, Rng& rng) {
    if (!is_power_of_two(n) || n < 2) {
        throw std::invalid_argument("stratified_order: side must be a power of two >= 2");
    }
    UnmaskOrder order;
    order.rows = order.cols = n;
    std::vector<char> occupied(static_cast<size_t>(n) * n, 0);
    const int max_depth = log2_exact(n);
    for (int d = 1; d <= max_depth; ++d) {
        const int cells = 1 << d;        // per axis
        const int cell_size = n / cells; // cell side in grid units
        std::vector<int> visit(static_cast<size_t>(cells) * cells);
        for (size_t i = 0; i < visit.size(); ++i) visit[i] = static_cast<int>(i);
        rng.shuffle(visit);
        for (int cell : visit) {
            const int cr = (cell / cells) * cell_size;
            const int cc = (cell % cells) * cell_size;
            bool has = false;
            for (int r = cr; r < cr + cell_size && !has; ++r) {
                for (int c = cc; c < cc + cell_size; ++c) {
                    if (occupied[static_cast<size_t>(r) * n + c]) {
                        has = true;
                        break;
                    }
                }
            }
            if (has) continue;
            const int r = cr + rng.uniform_below(cell_size);
            const int c = cc + rng.uniform_below(cell_size);
            occupied[static_cast<size_t>(r) * n + c] = 1;
            order.positions.emplace_back(r, c);
        }
    }
    return order;
}

inline double radical_inverse(int base, int index) {
    double inv = 1.0 / base, result = 0.0, frac = inv;
    while (index > 0) {
        result += (index % base) * frac;
        index /= base;
        frac *= inv;
    }
    return result;
}

// Deterministic base-(2,3) Halton order: points mapped to cells by
// floor(u*n), repeats skipped, until every cell is covered.
inline UnmaskOrder halton_order(int n) {
    if (n < 2) throw std::invalid_argument("halton_order: side must be >= 2");
    UnmaskOrder order;
    order.rows = order.cols = n;
    std::vector<char> occupied(static_cast<size_t>(n) * n, 0);
    int emitted = 0;
    for (int i = 1; emitted < n * n; ++i) {
        const double u = radical_inverse(2, i);
        const double v = radical_inverse(3, i);
        const int c = std::min(n - 1, static_cast<int>(u * n));
        const int r = std::min(n - 1, static_cast<int>(v * n));
        char& o = occupied[static_cast<size_t>(r) * n + c];
        if (o) continue;
        o = 1;
        order.positions.emplace_back(r, c);
        ++emitted;
    }
    return order;
}

inline UnmaskOrder uniform_order(int rows, int cols, Rng& rng) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("uniform_order: empty grid");
    UnmaskOrder order;
    order.rows = rows;
    order.cols = cols;
    std::vector<int> flat(static_cast<size_t>(rows) * cols);
    for (size_t i = 0; i < flat.size(); ++i) flat[i] = static_cast<int>(i);
    rng.shuffle(flat);
    for (int f : flat) order.positions.emplace_back(f / cols, f % cols);
    return order;
}

inline UnmaskOrder uniform_order(int n, Rng& rng) { return uniform_order(n, n, rng); }

enum class OrderKind { Stratified, Halton, Uniform };

// Shape dispatch: stratified/Halton need a square grid (stratified also a
// power-of-two side); anything else falls back to a uniform order.
inline UnmaskOrder order_for_shape(OrderKind kind, int rows, int cols, Rng& rng,
                                   bool warn_on_fallback = true) {
    const bool square = rows == cols;
    switch (kind) {
        case OrderKind::Stratified:
            if (square && is_power_of_two(rows) && rows >= 2) return stratified_order(rows, rng);
            break;
        case OrderKind::Halton:
            if (square && rows >= 2) return halton_order(rows);
            break;
        case OrderKind::Uniform:
            return uniform_order(rows, cols, rng);
    }
    if (warn_on_fallback) {
        std::cerr << "warning: " << rows << "x" << cols
                  << " grid unsupported by requested order, using uniform\n";
    }
    return uniform_order(rows, cols, rng);
}

// Star discrepancy of a point set, estimated over the anchored boxes whose
// corners lie on the resolution-n lattice. Points are cell centers.
inline double star_discrepancy_estimate(const std::vector<std::pair<int, int>>& cells,
                                        int n, int prefix_len) {
    const int m = std::min<int>(prefix_len, static_cast<int>(cells.size()));
    if (m == 0) return 1.0;
    // counts[r][c] = 1 if cell (r,c) among first m
    std::vector<int> cum(static_cast<size_t>(n + 1) * (n + 1), 0);
    auto at = [&](int r, int c) -> int& { return cum[static_cast<size_t>(r) * (n + 1) + c]; };
    for (int i = 0; i < m; ++i) at(cells[static_cast<size_t>(i)].first + 1,
                                   cells[static_cast<size_t>(i)].second + 1) += 1;
    for (int r = 1; r <= n; ++r) {
        for (int c = 1; c <= n; ++c) {
            at(r, c) += at(r - 1, c) + at(r, c - 1) - at(r - 1, c - 1);
        }
    }
    double worst = 0.0;
    for (int r = 0; r <= n; ++r) {
        for (int c = 0; c <= n; ++c) {
            // box [0, r/n) x [0, c/n); centers at (k+0.5)/n so a cell with
            // index k lies inside iff k+1 <= corner index
            const double volume = (static_cast<double>(r) / n) * (static_cast<double>(c) / n);
            const double inside = static_cast<double>(at(r, c)) / m;
            worst = std::max(worst, std::abs(inside - volume));
        }
    }
    return worst;
}

// Coverage of the 2^d x 2^d partitions by order prefixes, plus a scalar
// discrepancy figure: the mean star discrepancy of the 4^d prefixes.
struct CoverageReport {
    std::vector<int> depth_coverage;  // depth_coverage[d-1] for depth d
    double star_discrepancy_estimate = 0.0;
};

inline CoverageReport coverage_metrics(const UnmaskOrder& order) {
    if (!order.is_permutation()) throw std::invalid_argument("coverage_metrics: not a permutation");
    if (order.rows != order.cols || !is_power_of_two(order.rows)) {
        throw std::invalid_argument("coverage_metrics: needs a square power-of-two grid");
    }
    const int n = order.rows;
    const int max_depth = log2_exact(n);
    CoverageReport rep;
    double disc_sum = 0.0;
    for (int d = 1; d <= max_depth; ++d) {
        const int cells = 1 << d;
        const int cell_size = n / cells;
        const int prefix = 1 << (2 * d);  // 4^d
        std::vector<char> hit(static_cast<size_t>(cells) * cells, 0);
        int covered = 0;
        for (int i = 0; i < prefix && i < order.size(); ++i) {
            const auto [r, c] = order.positions[static_cast<size_t>(i)];
            char& h = hit[static_cast<size_t>(r / cell_size) * cells + (c / cell_size)];
            if (!h) {
                h = 1;
                ++covered;
            }
        }
        rep.depth_coverage.push_back(covered);
        disc_sum += star_discrepancy_estimate(order.positions, n, prefix);
    }
    rep.star_discrepancy_estimate = disc_sum / max_depth;
    return rep;
}

}  // namespace mdm

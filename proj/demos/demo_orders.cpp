// SPDX-License-Identifier: Apache-2.0
//
// Prints coverage and discrepancy figures for the three unmasking orders on a
// 16x16 grid, plus an ASCII rendering of each order's first 16 reveals.

#include <iostream>

#include "mdm/order.hpp"
#include "mdm/rng.hpp"

int main() {
    const int n = 16;
    mdm::Rng rng(7);

    auto show = [&](const char* name, const mdm::UnmaskOrder& order) {
        const auto rep = mdm::coverage_metrics(order);
        std::cout << name << ": mean prefix star discrepancy "
                  << rep.star_discrepancy_estimate << "\n  depth coverage:";
        for (size_t d = 0; d < rep.depth_coverage.size(); ++d) {
            std::cout << " " << rep.depth_coverage[d] << "/" << (1 << (2 * (d + 1)));
        }
        std::cout << "\n";
        std::vector<std::string> canvas(n, std::string(n, '.'));
        for (int i = 0; i < 16; ++i) {
            const auto [r, c] = order.positions[static_cast<size_t>(i)];
            canvas[static_cast<size_t>(r)][static_cast<size_t>(c)] =
                static_cast<char>(i < 10 ? '0' + i : 'a' + i - 10);
        }
        for (const auto& line : canvas) std::cout << "  " << line << "\n";
    };

    show("stratified", mdm::stratified_order(n, rng));
    show("halton", mdm::halton_order(n));
    show("uniform", mdm::uniform_order(n, rng));
    return 0;
}

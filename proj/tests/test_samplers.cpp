// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "mdm/diffusion.hpp"
#include "mdm/order.hpp"
#include "mdm/rng.hpp"
#include "mdm/stats.hpp"
#include "mdm/vocab.hpp"

using namespace mdm;

TEST_CASE("every sampler output is a permutation") {
    Rng rng(1);
    for (int n : {2, 4, 8, 16}) {
        for (int seed = 0; seed < 5; ++seed) {
            Rng r = rng.stream(static_cast<std::uint64_t>(n * 100 + seed));
            CHECK(stratified_order(n, r).is_permutation());
            CHECK(uniform_order(n, r).is_permutation());
        }
        CHECK(halton_order(n).is_permutation());
    }
}

TEST_CASE("stratified order n=2 emits one position per quadrant") {
    Rng rng(3);
    const auto order = stratified_order(2, rng);
    REQUIRE(order.size() == 4);
    std::set<std::pair<int, int>> seen(order.positions.begin(), order.positions.end());
    CHECK(seen.size() == 4);
}

TEST_CASE("stratified order n=4: quadrants first, then the remaining cells") {
    Rng root(17);
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng = root.stream(static_cast<std::uint64_t>(seed));
        const auto order = stratified_order(4, rng);
        REQUIRE(order.size() == 16);
        std::set<std::pair<int, int>> quads;
        for (int i = 0; i < 4; ++i) {
            const auto [r, c] = order.positions[static_cast<size_t>(i)];
            quads.insert({r / 2, c / 2});
        }
        CHECK(quads.size() == 4);  // positions 1..4 occupy the 4 quadrants
        CHECK(order.is_permutation());  // positions 5..16 fill every leftover 1x1 cell
    }
}

TEST_CASE("stratified order achieves perfect depth coverage at every depth") {
    Rng root(29);
    for (int n : {2, 4, 8, 16, 32}) {
        for (int seed = 0; seed < 10; ++seed) {
            Rng rng = root.stream(static_cast<std::uint64_t>(1000 * n + seed));
            const auto rep = coverage_metrics(stratified_order(n, rng));
            for (size_t d = 0; d < rep.depth_coverage.size(); ++d) {
                REQUIRE(rep.depth_coverage[d] == (1 << (2 * (static_cast<int>(d) + 1))));
            }
        }
    }
}

TEST_CASE("stratified order rejects non-power-of-two sides") {
    Rng rng(4);
    CHECK_THROWS_AS(stratified_order(3, rng), std::invalid_argument);
    CHECK_THROWS_AS(stratified_order(1, rng), std::invalid_argument);
}

TEST_CASE("halton order is deterministic and misses a quadrant in its 4-prefix at n=4") {
    const auto a = halton_order(4);
    const auto b = halton_order(4);
    CHECK(a.positions == b.positions);
    std::set<std::pair<int, int>> quads;
    for (int i = 0; i < 4; ++i) {
        const auto [r, c] = a.positions[static_cast<size_t>(i)];
        quads.insert({r / 2, c / 2});
    }
    CHECK(quads.size() < 4);
}

TEST_CASE("uniform order is seed-reproducible and rank-uniform") {
    Rng r1(5), r2(5);
    CHECK(uniform_order(2, r1).positions == uniform_order(2, r2).positions);

    // Over many draws each cell should be equally likely at each rank
    // (chi-square per rank, p > 0.001).
    const int draws = 10000;
    Rng root(99);
    std::vector<std::vector<double>> counts(4, std::vector<double>(4, 0.0));
    for (int i = 0; i < draws; ++i) {
        Rng r = root.stream(static_cast<std::uint64_t>(i));
        const auto ord = uniform_order(2, r);
        for (int rank = 0; rank < 4; ++rank) {
            const auto [rr, cc] = ord.positions[static_cast<size_t>(rank)];
            counts[static_cast<size_t>(rank)][static_cast<size_t>(rr * 2 + cc)] += 1.0;
        }
    }
    const std::vector<double> expected(4, draws / 4.0);
    for (int rank = 0; rank < 4; ++rank) {
        const double stat = chi_square_stat(counts[static_cast<size_t>(rank)], expected);
        CHECK(chi_square_sf(stat, 3) > 0.001);
    }
}

TEST_CASE("confidence policy tie-break and argmax behavior") {
    const auto v = Vocabulary::make(95, 4);
    const int V = v.total_size();
    SequenceState s;
    s.tokens.assign(6, v.mask_id());
    s.tags.assign(6, BranchTag::Und);

    PredictorOutput out;
    out.vocab_size = V;
    out.rows = {0, 1, 2, 3, 4, 5};
    out.logits.assign(6 * static_cast<size_t>(V), 0.0);

    ConfidencePolicy policy;
    Rng rng(1);

    SECTION("all confidences equal: lowest flat indices win") {
        const auto picked = policy.select(s, out, out.rows, 3, rng, nullptr);
        CHECK(picked == std::vector<int>{0, 1, 2});
    }

    SECTION("quota 1 with distinct confidences: argmax position") {
        out.logits[4 * static_cast<size_t>(V) + 7] = 5.0;  // position 4 most confident
        const auto picked = policy.select(s, out, out.rows, 1, rng, nullptr);
        CHECK(picked == std::vector<int>{4});
    }
}

TEST_CASE("confidence-based selection clusters reveals; stratified spreads them") {
    // Adversarial confidence surface: masked cells adjacent to a revealed cell
    // score much higher. Compare the same-step adjacency rate of revealed
    // pairs under confidence selection vs a stratified fixed order.
    const int n = 8;
    const auto v = Vocabulary::make(95, 4);
    const int V = v.total_size();
    const TokenId fill = v.vq_id(0);

    auto adversarial_logits = [&](const SequenceState& s) {
        PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), 0.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            const int pos = out.rows[r];
            const int row = pos / n, col = pos % n;
            bool near_revealed = false;
            for (auto [dr, dc] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                const int rr = row + dr, cc = col + dc;
                if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
                if (s.tokens[static_cast<size_t>(rr * n + cc)] != v.mask_id()) near_revealed = true;
            }
            out.logits[r * static_cast<size_t>(V) + static_cast<size_t>(fill)] =
                near_revealed ? 6.0 : 0.5;
        }
        return out;
    };

    auto adjacency_rate = [&](UnmaskPolicy& policy, Rng rng) {
        SequenceState s;
        s.tokens.assign(static_cast<size_t>(n * n), v.mask_id());
        s.tags.assign(static_cast<size_t>(n * n), BranchTag::Gen);
        policy.reset(s);
        int adjacent_pairs = 0, total_pairs = 0;
        const int quota = 4;
        while (s.count_masked(v) > 0) {
            const auto out = adversarial_logits(s);
            const auto masked = s.masked_positions(v);
            const auto chosen = policy.select(s, out, masked, quota, rng, nullptr);
            for (size_t i = 0; i < chosen.size(); ++i) {
                for (size_t j = i + 1; j < chosen.size(); ++j) {
                    const int a = chosen[i], b = chosen[j];
                    const int dr = std::abs(a / n - b / n), dc = std::abs(a % n - b % n);
                    if (dr + dc == 1) ++adjacent_pairs;
                    ++total_pairs;
                }
            }
            for (int pos : chosen) s.tokens[static_cast<size_t>(pos)] = fill;
        }
        return static_cast<double>(adjacent_pairs) / std::max(1, total_pairs);
    };

    ConfidencePolicy conf;
    Rng order_rng(123);
    const auto strat = stratified_order(n, order_rng);
    FixedOrderPolicy fixed(strat.flat());
    const double conf_rate = adjacency_rate(conf, Rng(1));
    const double strat_rate = adjacency_rate(fixed, Rng(1));
    CHECK(conf_rate > strat_rate);
}

TEST_CASE("coverage metrics on a hand-built order") {
    UnmaskOrder ord;
    ord.rows = ord.cols = 2;
    ord.positions = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};  // one per quadrant
    const auto rep = coverage_metrics(ord);
    REQUIRE(rep.depth_coverage.size() == 1);
    CHECK(rep.depth_coverage[0] == 4);
    CHECK(rep.depth_coverage[0] <= 4);  // never exceeds 4^d
}

TEST_CASE("coverage metrics validates input") {
    UnmaskOrder bad;
    bad.rows = bad.cols = 2;
    bad.positions = {{0, 0}, {0, 0}, {1, 0}, {1, 1}};
    CHECK_THROWS_AS(coverage_metrics(bad), std::invalid_argument);
}

TEST_CASE("mean prefix discrepancy: structured orders beat uniform at n=16 (smoke)") {
    // The acceptance suite evaluates the full three-way ordering at n=32;
    // stratified vs Halton is reported there. Here: both structured orders
    // beat uniform, and stratified wins the quadrant prefix (m = 4), which is
    // the coverage guarantee it actually provides.
    const int n = 16;
    const int seeds = 30;
    Rng root(2024);
    const double halton_disc = coverage_metrics(halton_order(n)).star_discrepancy_estimate;
    const double halton_d1 = star_discrepancy_estimate(halton_order(n).positions, n, 4);
    std::vector<double> strat, unif, strat_d1;
    for (int i = 0; i < seeds; ++i) {
        Rng r1 = root.stream(static_cast<std::uint64_t>(i));
        Rng r2 = root.stream(static_cast<std::uint64_t>(1000 + i));
        strat.push_back(coverage_metrics(stratified_order(n, r1)).star_discrepancy_estimate);
        unif.push_back(coverage_metrics(uniform_order(n, r2)).star_discrepancy_estimate);
        Rng r3 = root.stream(static_cast<std::uint64_t>(2000 + i));
        strat_d1.push_back(star_discrepancy_estimate(stratified_order(n, r3).positions, n, 4));
    }
    CHECK(mean(strat) < mean(unif));
    CHECK(halton_disc < mean(unif));
    CHECK(mean(strat_d1) < halton_d1);
}

TEST_CASE("order_for_shape falls back to uniform for unsupported shapes") {
    Rng rng(8);
    const auto ord = order_for_shape(OrderKind::Stratified, 3, 5, rng, /*warn_on_fallback=*/false);
    CHECK(ord.rows == 3);
    CHECK(ord.cols == 5);
    CHECK(ord.is_permutation());
}

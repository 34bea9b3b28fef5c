// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <memory>

#include "mdm/orchestrate.hpp"
#include "mdm/rng.hpp"
#include "mdm/scripted.hpp"

using namespace mdm;

namespace {

Vocabulary vocab() { return Vocabulary::make(95, 4); }

PlanningConfig toy_planning() {
    PlanningConfig pc;
    pc.grid = TimeGrid::uniform(4);
    pc.plan_slots = 6;  // label + 4 bins + EXP
    pc.resolution = 64;
    pc.map.add(64, 16);
    return pc;
}

ScriptedPlannerConfig planner_cfg(const Vocabulary& v, int prompt_len, double hit = 1.0 / 16.0) {
    ScriptedPlannerConfig sp;
    sp.prompt_len = prompt_len;
    sp.label = v.char_token('b');
    sp.box = quantize(BBox{0.25, 0.25, 0.5, 0.5});
    sp.side = 4;
    sp.target_vq = v.vq_id(1);
    sp.background_vq = v.vq_id(0);
    sp.cell_hit_prob = hit;
    return sp;
}

}  // namespace

TEST_CASE("plan serialization round-trips") {
    const auto v = vocab();
    LayoutPlan plan;
    LayoutItem a;
    a.label = v.encode_text("dog");
    a.box = QuantBox{{0, 256, 512, 1024}};
    LayoutItem b;
    b.label = v.encode_text("cat");
    b.box = QuantBox{{10, 20, 30, 40}};
    plan.items = {a, b};
    const auto tokens = serialize_plan(v, plan);
    const auto back = parse_plan(v, tokens, 0, static_cast<int>(tokens.size()));
    REQUIRE(back.items.size() == 2);
    CHECK(back.items[0].label == a.label);
    CHECK(back.items[0].box.bins == a.box.bins);
    CHECK(back.items[1].box.bins == b.box.bins);
}

TEST_CASE("plan parse failures") {
    const auto v = vocab();
    SECTION("item with fewer than four bins") {
        std::vector<TokenId> toks = {v.char_token('x'), v.bin_id(1), v.bin_id(2)};
        CHECK_THROWS_AS(parse_plan(v, toks, 0, 3), PlanParseError);
    }
    SECTION("more than four bins") {
        std::vector<TokenId> toks = {v.char_token('x')};
        for (int i = 0; i < 5; ++i) toks.push_back(v.bin_id(i));
        CHECK_THROWS_AS(parse_plan(v, toks, 0, static_cast<int>(toks.size())), PlanParseError);
    }
    SECTION("empty range is an empty plan") {
        CHECK(parse_plan(v, {}, 0, 0).items.empty());
    }
}

TEST_CASE("scripted planning decode parses into the expected plan and image") {
    const auto v = vocab();
    const auto prompt = v.encode_text("1 b a");
    const auto sp = planner_cfg(v, static_cast<int>(prompt.size()));
    const auto model = scripted_planner(v, sp);
    Rng rng(3);
    const auto res = generate_with_planning(v, model, prompt, toy_planning(), rng);
    REQUIRE(res.plan.items.size() == 1);
    CHECK(res.plan.items[0].label == std::vector<TokenId>{v.char_token('b')});
    CHECK(res.plan.items[0].box.bins == sp.box.bins);
    CHECK(res.image.size() == 16);
    for (TokenId t : res.image) CHECK(v.is_vq(t));
}

TEST_CASE("zero-object plan still produces an image") {
    const auto v = vocab();
    const auto prompt = v.encode_text("go");
    // plan_slots = 1: the only Und slot decodes straight to EXP
    auto model = scripted_predictor(v, [&v](const SequenceState& s, int pos) -> TokenId {
        if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) return v.vq_id(0);
        return v.exp_id();
    });
    PlanningConfig pc = toy_planning();
    pc.plan_slots = 1;
    Rng rng(4);
    const auto res = generate_with_planning(v, model, prompt, pc, rng);
    CHECK(res.plan.items.empty());
    CHECK(res.image.size() == 16);
}

TEST_CASE("planning decode that never emits an image span is an error") {
    const auto v = vocab();
    auto model = scripted_predictor(v, [&v](const SequenceState&, int) { return v.char_token('z'); });
    PlanningConfig pc = toy_planning();
    pc.plan_slots = 2;
    Rng rng(5);
    CHECK_THROWS_AS(generate_with_planning(v, model, v.encode_text("p"), pc, rng), PlanParseError);
}

TEST_CASE("edit_with_planning") {
    const auto v = vocab();
    PlanningConfig pc = toy_planning();
    std::vector<TokenId> source(16, v.vq_id(3));
    const auto instruction = v.encode_text("keep");

    SECTION("identity instruction with a copy model returns the source") {
        // Copies the conditioning span cell-by-cell into the generated span.
        auto model = scripted_predictor(v, [&v](const SequenceState& s, int pos) -> TokenId {
            if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) {
                int src_start = 0;  // source span starts the sequence
                int gen_start = -1;
                for (size_t i = 16; i < s.size(); ++i) {
                    if (s.tags[i] == BranchTag::Gen) {
                        gen_start = static_cast<int>(i);
                        break;
                    }
                }
                return s.tokens[static_cast<size_t>(src_start + pos - gen_start)];
            }
            const int off = pos - 20;  // source(16) + instruction(4)
            if (off == 0) return v.char_token('e');
            if (off >= 1 && off <= 4) return v.bin_id(256 * off);
            return v.exp_id();
        });
        Rng rng(6);
        const auto res = edit_with_planning(v, model, source, instruction, pc, rng);
        CHECK(res.edited == source);
        REQUIRE(res.plan.items.size() == 1);
        for (int b : res.plan.items[0].box.bins) CHECK((b >= 0 && b <= 1024));
    }

    SECTION("scripted region edit changes only cells inside the planned box") {
        // Box covers cell (1,1) of the 4x4 grid; model recolors it, copies the rest.
        const QuantBox region = quantize(BBox{0.25, 0.25, 0.5, 0.5});
        auto model = scripted_predictor(v, [&v, region](const SequenceState& s, int pos) -> TokenId {
            if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) {
                int gen_start = -1;
                for (size_t i = 16; i < s.size(); ++i) {
                    if (s.tags[i] == BranchTag::Gen) {
                        gen_start = static_cast<int>(i);
                        break;
                    }
                }
                const int cell = pos - gen_start;
                const int r = cell / 4, c = cell % 4;
                const BBox box = dequantize(region);
                const double cx = (c + 0.5) / 4.0, cy = (r + 0.5) / 4.0;
                const bool inside = cx > box.x1 && cx < box.x2 && cy > box.y1 && cy < box.y2;
                if (inside) return v.vq_id(1);
                return s.tokens[static_cast<size_t>(cell)];  // copy source
            }
            const int off = pos - 20;
            if (off == 0) return v.char_token('e');
            if (off >= 1 && off <= 4) return v.bin_id(region.bins[static_cast<size_t>(off - 1)]);
            return v.exp_id();
        });
        Rng rng(7);
        const auto res = edit_with_planning(v, model, source, instruction, pc, rng);
        REQUIRE(res.edited.size() == 16);
        for (int cell = 0; cell < 16; ++cell) {
            if (cell == 5) {
                CHECK(res.edited[static_cast<size_t>(cell)] == v.vq_id(1));
            } else {
                CHECK(res.edited[static_cast<size_t>(cell)] == source[static_cast<size_t>(cell)]);
            }
        }
    }

    SECTION("source span must match the resolution") {
        auto model = scripted_predictor(v, [&v](const SequenceState&, int) { return v.exp_id(); });
        std::vector<TokenId> short_src(9, v.vq_id(0));
        Rng rng(8);
        CHECK_THROWS_AS(edit_with_planning(v, model, short_src, instruction, pc, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("reflect_loop round accounting") {
    const auto v = vocab();
    const auto prompt = v.encode_text("1 b a");
    const auto sp = planner_cfg(v, static_cast<int>(prompt.size()), /*hit=*/1.0 / 16.0);
    const auto feedback = v.encode_text("redo");

    SECTION("always-accept critic stops after one round") {
        const auto model = scripted_planner(v, sp);
        Critic critic = [](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Accept, {}};
        };
        ReflectionConfig rc;
        rc.max_rounds = 5;
        Rng rng(9);
        const auto res = reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng);
        CHECK(res.rounds_used == 1);
        CHECK(res.rounds.size() == 1);
        CHECK(res.rounds[0].verdict == "accept");
    }

    SECTION("always-revise critic runs exactly N rounds with a bounded history") {
        Critic critic = [&feedback](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Revise, feedback};
        };
        ReflectionConfig rc;
        rc.max_rounds = 4;
        rc.history_window = 3;
        // each round's conditioning must never exceed the budget (asserted by
        // the sampler); generous budget here so no truncation is expected
        struct Probe {
            const Vocabulary& v;
            Predictor inner;
            int max_seen = 0;
            PredictorOutput operator()(const SequenceState& s) {
                max_seen = std::max(max_seen, static_cast<int>(s.size()));
                return inner(s);
            }
        };
        auto probe = std::make_shared<Probe>(Probe{v, scripted_planner(v, sp)});
        Predictor model = [probe](const SequenceState& s) { return (*probe)(s); };
        Rng rng(10);
        const auto res = reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng);
        CHECK(res.rounds_used == 4);
        CHECK(res.rounds.size() == 4);
        for (const auto& r : res.rounds) CHECK(r.verdict == "revise");
        CHECK(res.rounds[3].truncated == false);  // window 3 holds rounds 1..3
        CHECK(probe->max_seen <= 8192);
    }

    SECTION("history keeps at most the newest window rounds (truncation flagged)") {
        Critic critic = [&feedback](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Revise, feedback};
        };
        ReflectionConfig rc;
        rc.max_rounds = 6;
        rc.history_window = 3;
        const auto model = scripted_planner(v, sp);
        Rng rng(11);
        const auto res = reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng);
        REQUIRE(res.rounds.size() == 6);
        CHECK(res.rounds[3].truncated == false);  // rounds 1..3 in window
        CHECK(res.rounds[4].truncated == true);   // round 1 dropped
        CHECK(res.rounds[5].truncated == true);
    }

    SECTION("tight budgets truncate whole rounds and are never exceeded") {
        Critic critic = [&feedback](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Revise, feedback};
        };
        ReflectionConfig rc;
        rc.max_rounds = 4;
        rc.history_window = 3;
        // room for the prompt + one 27-token history round + the decode
        rc.context_budget = 75;
        const auto model = scripted_planner(v, sp);
        Rng rng(12);
        const auto res = reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng);
        REQUIRE(res.rounds.size() == 4);
        CHECK(res.rounds[2].truncated == true);  // window would fit, budget does not
        for (const auto& r : res.rounds) CHECK(r.tokens_used <= 75);
    }

    SECTION("N=1 equals generate_with_planning under the same seed") {
        const auto model = scripted_planner(v, sp);
        Critic critic = [](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Accept, {}};
        };
        ReflectionConfig rc;
        rc.max_rounds = 1;
        Rng r1(13), r2(13);
        const auto a = reflect_loop(v, model, critic, prompt, rc, toy_planning(), r1);
        const auto b = generate_with_planning(v, model, prompt, toy_planning(), r2);
        CHECK(a.image == b.image);
    }

    SECTION("revise without feedback is rejected") {
        const auto model = scripted_planner(v, sp);
        Critic critic = [](const std::vector<TokenId>&, const std::vector<TokenId>&) {
            return CritiqueResult{CritiqueResult::Verdict::Revise, {}};
        };
        ReflectionConfig rc;
        rc.max_rounds = 2;
        Rng rng(14);
        CHECK_THROWS_AS(reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng),
                        std::invalid_argument);
    }

    SECTION("critic exceptions propagate with the partial trace") {
        const auto model = scripted_planner(v, sp);
        int calls = 0;
        Critic critic = [&calls, &feedback](const std::vector<TokenId>&,
                                            const std::vector<TokenId>&) -> CritiqueResult {
            if (++calls >= 2) throw std::runtime_error("critic crashed");
            return CritiqueResult{CritiqueResult::Verdict::Revise, feedback};
        };
        ReflectionConfig rc;
        rc.max_rounds = 4;
        Rng rng(15);
        try {
            (void)reflect_loop(v, model, critic, prompt, rc, toy_planning(), rng);
            FAIL("expected CriticError");
        } catch (const CriticError& e) {
            CHECK(e.trace.size() == 2);
            CHECK(e.trace[1].verdict == "error");
        }
    }
}

// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mdm/modality.hpp"
#include "mdm/rng.hpp"
#include "mdm/scripted.hpp"
#include "support.hpp"

using namespace mdm;

namespace {

Vocabulary vocab() { return Vocabulary::make(95, 8); }

// text prefix + one image span + text suffix
SequenceState interleaved_state(const Vocabulary& v, int pre, int span, int post) {
    SequenceState s;
    for (int i = 0; i < pre; ++i) {
        s.tokens.push_back(v.char_token('t'));
        s.tags.push_back(BranchTag::Und);
    }
    for (int i = 0; i < span; ++i) {
        s.tokens.push_back(v.vq_id(i % 4));
        s.tags.push_back(BranchTag::Gen);
    }
    for (int i = 0; i < post; ++i) {
        s.tokens.push_back(v.char_token('u'));
        s.tags.push_back(BranchTag::Und);
    }
    return s;
}

}  // namespace

TEST_CASE("collapse_targets") {
    const auto v = vocab();

    SECTION("text-only input is unchanged") {
        const auto x0 = interleaved_state(v, 5, 0, 0);
        const auto out = collapse_targets(v, x0);
        CHECK(out.tokens == x0.tokens);
    }

    SECTION("one span collapses to a single EXP") {
        const auto x0 = interleaved_state(v, 2, 4, 1);
        const auto out = collapse_targets(v, x0);
        REQUIRE(out.size() == 4);
        CHECK(out.tokens[0] == v.char_token('t'));
        CHECK(out.tokens[1] == v.char_token('t'));
        CHECK(out.tokens[2] == v.exp_id());
        CHECK(out.tokens[3] == v.char_token('u'));
    }

    SECTION("two spans collapse to two EXPs in order") {
        auto x0 = interleaved_state(v, 1, 3, 1);
        const auto more = interleaved_state(v, 0, 2, 1);
        x0.tokens.insert(x0.tokens.end(), more.tokens.begin(), more.tokens.end());
        x0.tags.insert(x0.tags.end(), more.tags.begin(), more.tags.end());
        const auto out = collapse_targets(v, x0);
        // t [img3] u [img2] u  ->  t EXP u EXP u
        REQUIRE(out.size() == 5);
        CHECK(out.tokens[1] == v.exp_id());
        CHECK(out.tokens[3] == v.exp_id());
        const int length_drop = static_cast<int>(x0.size()) - static_cast<int>(out.size());
        CHECK(length_drop == (3 - 1) + (2 - 1));
    }

    SECTION("unannotated VQ tokens are rejected") {
        auto x0 = interleaved_state(v, 1, 2, 0);
        x0.tags[1] = BranchTag::Und;  // VQ token mis-tagged
        CHECK_THROWS_AS(collapse_targets(v, x0), std::invalid_argument);
    }
}

TEST_CASE("interleaved_forward boundary and case-split behavior") {
    const auto v = vocab();
    const auto x0 = interleaved_state(v, 3, 4, 2);
    InterleavedSpec spec = spec_from_tags(x0, {0.5}, {64});

    SECTION("t = 0 is the identity") {
        Rng rng(1);
        const auto out = interleaved_forward(v, x0, spec, 0.0, rng);
        CHECK(out.tokens == x0.tokens);
    }

    SECTION("t = 1: everything masked, spans present with Gen tags") {
        Rng rng(2);
        const auto out = interleaved_forward(v, x0, spec, 1.0, rng);
        REQUIRE(out.size() == x0.size());
        CHECK(out.count_masked(v) == static_cast<int>(x0.size()));
        for (size_t i = 0; i < out.size(); ++i) CHECK(out.tags[i] == x0.tags[i]);
    }

    SECTION("below t_exp the span is a single Und EXP-or-MASK token") {
        Rng rng(3);
        const auto out = interleaved_forward(v, x0, spec, 0.3, rng);
        REQUIRE(out.size() == x0.size() - 3);  // 4-token span became 1
        const TokenId collapsed = out.tokens[3];
        CHECK((collapsed == v.exp_id() || collapsed == v.mask_id()));
        CHECK(out.tags[3] == BranchTag::Und);
    }

    SECTION("above t_exp the span masks per token at rate t") {
        const auto wide = interleaved_state(v, 0, 64, 0);
        InterleavedSpec wspec = spec_from_tags(wide, {0.5}, {128});
        Rng root(4);
        const double t = 0.7;
        long long masked = 0;
        const int trials = 500;
        for (int i = 0; i < trials; ++i) {
            Rng r = root.stream(static_cast<std::uint64_t>(i));
            masked += interleaved_forward(v, wide, wspec, t, r).count_masked(v);
        }
        const double n = 64.0 * trials;
        const double rate = static_cast<double>(masked) / n;
        const double sigma = std::sqrt(t * (1 - t) / n);
        CHECK(std::abs(rate - t) < 3.0 * sigma);
    }
}

TEST_CASE("interleaved loss targets split at t_exp") {
    const auto v = vocab();
    const auto x0 = interleaved_state(v, 2, 4, 1);
    InterleavedSpec spec = spec_from_tags(x0, {0.5}, {64});

    SECTION("below t_exp the collapsed position's target is EXP") {
        const auto target = interleaved_target(v, x0, spec, 0.2);
        REQUIRE(target.size() == 4);
        CHECK(target.tokens[2] == v.exp_id());
    }

    SECTION("above t_exp the targets are the VQ tokens") {
        const auto target = interleaved_target(v, x0, spec, 0.8);
        REQUIRE(target.size() == x0.size());
        for (size_t i = 2; i < 6; ++i) CHECK(v.is_vq(target.tokens[i]));
    }

    SECTION("perfect predictor gives zero loss above every t_exp") {
        Rng rng(5);
        const double t = 0.9;
        const auto xt = interleaved_forward(v, x0, spec, t, rng);
        const auto target = interleaved_target(v, x0, spec, t);
        PredictorOutput out;
        out.vocab_size = v.total_size();
        out.rows = xt.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(v.total_size()), 0.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            out.logits[r * static_cast<size_t>(v.total_size()) +
                       static_cast<size_t>(target.tokens[static_cast<size_t>(out.rows[r])])] = 300.0;
        }
        CHECK(interleaved_loss(v, x0, spec, xt, out, t) == Catch::Approx(0.0).margin(1e-10));
    }
}

TEST_CASE("expand_exp") {
    const auto v = vocab();
    ResolutionMap map;
    map.add(64, 16);
    map.add(128, 64);

    SECTION("EXP expands into Gen-tagged masks of the mapped count") {
        SequenceState s;
        s.tokens = {v.char_token('a'), v.exp_id(), v.char_token('b')};
        s.tags = {BranchTag::Und, BranchTag::Und, BranchTag::Und};
        const auto res = expand_exp(v, s, 64, map);
        REQUIRE(res.state.size() == 2 + 16);
        REQUIRE(res.new_spans.size() == 1);
        CHECK(res.new_spans[0].start == 1);
        CHECK(res.new_spans[0].len == 16);
        CHECK(res.new_spans[0].grid_side == 4);
        for (int i = 1; i <= 16; ++i) {
            CHECK(res.state.tokens[static_cast<size_t>(i)] == v.mask_id());
            CHECK(res.state.tags[static_cast<size_t>(i)] == BranchTag::Gen);
        }
        CHECK(res.state.tokens.back() == v.char_token('b'));
    }

    SECTION("no EXP: identity") {
        const auto s = interleaved_state(v, 3, 0, 0);
        const auto res = expand_exp(v, s, 64, map);
        CHECK(res.state.tokens == s.tokens);
        CHECK(res.new_spans.empty());
    }

    SECTION("two EXPs expand left to right with exact length bookkeeping") {
        SequenceState s;
        s.tokens = {v.exp_id(), v.char_token('m'), v.exp_id()};
        s.tags = {BranchTag::Und, BranchTag::Und, BranchTag::Und};
        const auto res = expand_exp(v, s, 64, map);
        const int expected = static_cast<int>(s.size()) + 2 * (16 - 1);
        CHECK(static_cast<int>(res.state.size()) == expected);
        REQUIRE(res.new_spans.size() == 2);
        CHECK(res.new_spans[0].start == 0);
        CHECK(res.new_spans[1].start == 17);
    }

    SECTION("unknown resolution is an error") {
        SequenceState s;
        s.tokens = {v.exp_id()};
        s.tags = {BranchTag::Und};
        CHECK_THROWS_AS(expand_exp(v, s, 999, map), std::invalid_argument);
    }
}

TEST_CASE("interleaved reduction: zero image segments equals the plain pipeline") {
    const auto v = vocab();
    const auto x0 = interleaved_state(v, 24, 0, 0);
    InterleavedSpec spec = spec_from_tags(x0, {}, {});
    const double t = 0.45;

    Rng r1(31), r2(31);
    const auto a = interleaved_forward(v, x0, spec, t, r1);
    const auto b = forward_mask(v, x0, 0.0, t, r2);
    CHECK(a.tokens == b.tokens);  // identical draws, identical masks

    PredictorOutput out;
    out.vocab_size = v.total_size();
    out.rows = a.masked_positions(v);
    Rng r3(5);
    out.logits.resize(out.rows.size() * static_cast<size_t>(v.total_size()));
    for (auto& x : out.logits) x = r3.normal();
    CHECK(interleaved_loss(v, x0, spec, a, out, t) == mdm_loss(v, x0, b, out, t));
}

TEST_CASE("interleaved_sample with a text-only scripted model reduces to sample()") {
    const auto v = vocab();
    const TokenId a = v.char_token('q');
    auto model = scripted_predictor(v, [a](const SequenceState&, int) { return a; });
    const auto prompt = v.encode_text("go");
    ResolutionMap map;
    map.add(64, 16);

    Rng r1(9);
    const auto inter = interleaved_sample(v, model, prompt, 6, TimeGrid::uniform(3), map, 64, r1);

    SequenceState init = make_generation_state(v, prompt, 6);
    ConfidencePolicy policy;
    Rng r2(9);
    const auto plain = sample(v, model, init, TimeGrid::uniform(3), policy, r2);
    CHECK(inter.tokens == plain.tokens);
}

TEST_CASE("interleaved_sample expands EXP and finishes mask-free") {
    const auto v = vocab();
    ResolutionMap map;
    map.add(64, 16);
    const auto prompt = v.encode_text("p!");

    // Scripted interleaved model: first masked Und slot decodes to text, the
    // second to EXP; expanded image cells decode to VQ color 2.
    auto model = scripted_predictor(v, [&v, &prompt](const SequenceState& s, int pos) -> TokenId {
        if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) return v.vq_id(2);
        const int off = pos - static_cast<int>(prompt.size());
        return off == 0 ? v.char_token('k') : v.exp_id();
    });

    std::vector<TraceEvent> trace;
    InterleavedOptions opts;
    opts.trace = &trace;
    int calls = 0;
    opts.model_calls = &calls;
    Rng rng(13);
    const auto out =
        interleaved_sample(v, model, prompt, 2, TimeGrid::uniform(4), map, 64, rng, opts);

    CHECK(out.count_masked(v) == 0);
    CHECK(out.size() == prompt.size() + 1 + 16);  // text slot + expanded image
    // routing partition: tags total and disjoint by construction; image cells Gen
    int gen_count = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        if (out.tags[i] == BranchTag::Gen) {
            ++gen_count;
            CHECK(v.is_vq(out.tokens[i]));
        }
    }
    CHECK(gen_count == 16);
    bool saw_expand = false;
    for (const auto& e : trace) saw_expand |= e.event == "expand";
    CHECK(saw_expand);
}

TEST_CASE("interleaved_sample handles an EXP revealed at the final grid step") {
    const auto v = vocab();
    ResolutionMap map;
    map.add(64, 16);
    const auto prompt = v.encode_text("x");
    const int V = v.total_size();

    // Give EXP a weaker peak so confidence ordering defers it to the last step.
    auto model = [&](const SequenceState& s) {
        PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), 0.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            double* lg = out.logits.data() + r * static_cast<size_t>(V);
            const int pos = out.rows[r];
            if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) {
                lg[static_cast<size_t>(v.vq_id(1))] = 50.0;
            } else if (pos == static_cast<int>(prompt.size())) {
                lg[static_cast<size_t>(v.char_token('h'))] = 50.0;
            } else {
                lg[static_cast<size_t>(v.exp_id())] = 2.0;  // low confidence
            }
        }
        return out;
    };

    Rng rng(21);
    const auto out = interleaved_sample(v, model, prompt, 2, TimeGrid::uniform(2), map, 64, rng);
    CHECK(out.count_masked(v) == 0);
    CHECK(out.size() == prompt.size() + 1 + 16);
}

TEST_CASE("context budget violations raise BudgetExceededError") {
    const auto v = vocab();
    ResolutionMap map;
    map.add(64, 16);
    auto model = support::uniform_predictor(v);
    InterleavedOptions opts;
    opts.context_budget = 4;
    Rng rng(2);
    CHECK_THROWS_AS(
        interleaved_sample(v, model, v.encode_text("abc"), 8, TimeGrid::uniform(2), map, 64, rng, opts),
        BudgetExceededError);
}

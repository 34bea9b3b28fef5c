// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mdm/diffusion.hpp"
#include "mdm/grounding.hpp"
#include "mdm/modality.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

struct LayoutItem {
    std::vector<TokenId> label;
    QuantBox box;
};

struct LayoutPlan {
    std::vector<LayoutItem> items;
};

// Plan wire format: per item, label tokens then exactly 4 bin tokens; items
// separated by SEP; the plan region is terminated by the EXP token whose
// expansion produces the image span.
inline std::vector<TokenId> serialize_plan(const Vocabulary& v, const LayoutPlan& plan) {
    std::vector<TokenId> out;
    for (size_t i = 0; i < plan.items.size(); ++i) {
        if (i > 0) out.push_back(v.sep_id());
        const auto& item = plan.items[i];
        out.insert(out.end(), item.label.begin(), item.label.end());
        for (int b : item.box.bins) out.push_back(v.bin_id(b));
    }
    return out;
}

struct PlanParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parse the token range [begin, end) as a layout plan. Empty range = empty plan.
inline LayoutPlan parse_plan(const Vocabulary& v, const std::vector<TokenId>& tokens, int begin,
                             int end) {
    LayoutPlan plan;
    int i = begin;
    while (i < end) {
        LayoutItem item;
        while (i < end && !v.is_bin(tokens[static_cast<size_t>(i)])) {
            if (tokens[static_cast<size_t>(i)] == v.sep_id()) {
                throw PlanParseError("plan: separator before any bin token");
            }
            item.label.push_back(tokens[static_cast<size_t>(i)]);
            ++i;
        }
        if (item.label.empty()) throw PlanParseError("plan: item without label");
        for (int k = 0; k < 4; ++k) {
            if (i >= end || !v.is_bin(tokens[static_cast<size_t>(i)])) {
                throw PlanParseError("plan: item needs exactly 4 bin tokens");
            }
            item.box.bins[static_cast<size_t>(k)] = v.bin_index(tokens[static_cast<size_t>(i)]);
            ++i;
        }
        if (i < end && v.is_bin(tokens[static_cast<size_t>(i)])) {
            throw PlanParseError("plan: more than 4 bin tokens in one item");
        }
        plan.items.push_back(std::move(item));
        if (i < end) {
            if (tokens[static_cast<size_t>(i)] != v.sep_id()) {
                throw PlanParseError("plan: items must be SEP-separated");
            }
            ++i;
            if (i == end) throw PlanParseError("plan: trailing separator");
        }
    }
    return plan;
}

struct PlanningConfig {
    TimeGrid grid = TimeGrid::uniform(8);
    int plan_slots = 6;  // masked Und positions for the plan + the EXP trigger
    int resolution = 64;
    ResolutionMap map;  // must contain `resolution`
    double temperature = 0.0;
    OrderKind image_order = OrderKind::Stratified;
    int context_budget = 0;  // 0 = unlimited
    RestrictionFn restrict;
    // Layout first, image second: the plan slots consume each step's quota
    // before any expanded image span does.
    bool plan_first = true;
};

struct PlanningResult {
    LayoutPlan plan;
    std::vector<TokenId> image;
    SequenceState full;
    std::vector<TraceEvent> decode_trace;
    int model_calls = 0;
};

namespace detail {

// Locate the generated image span: the first maximal Gen-tagged run at or
// after `from`.
inline std::pair<int, int> find_image_span(const SequenceState& s, int from) {
    int start = -1;
    for (int i = from; i < static_cast<int>(s.size()); ++i) {
        if (s.tags[static_cast<size_t>(i)] == BranchTag::Gen) {
            start = i;
            break;
        }
    }
    if (start < 0) return {-1, -1};
    int end = start;
    while (end < static_cast<int>(s.size()) && s.tags[static_cast<size_t>(end)] == BranchTag::Gen) {
        ++end;
    }
    return {start, end};
}

}  // namespace detail

// One interleaved decode that must parse as layout items followed by an
// expanded image span. Parse failure is an error, never a silent fallback.
inline PlanningResult generate_with_planning(const Vocabulary& v, const Predictor& model,
                                             const std::vector<TokenId>& prompt,
                                             const PlanningConfig& cfg, Rng& rng) {
    PlanningResult res;
    InterleavedOptions opts;
    opts.temperature = cfg.temperature;
    opts.image_order = cfg.image_order;
    opts.model_calls = &res.model_calls;
    opts.trace = &res.decode_trace;
    opts.context_budget = cfg.context_budget;
    opts.restrict = cfg.restrict;
    opts.text_first = cfg.plan_first;
    res.full = interleaved_sample(v, model, prompt, cfg.plan_slots, cfg.grid, cfg.map,
                                  cfg.resolution, rng, opts);
    const int prompt_len = static_cast<int>(prompt.size());
    const auto [img_begin, img_end] = detail::find_image_span(res.full, prompt_len);
    if (img_begin < 0) throw PlanParseError("planning: decode produced no image span");
    res.plan = parse_plan(v, res.full.tokens, prompt_len, img_begin);
    res.image.assign(res.full.tokens.begin() + img_begin, res.full.tokens.begin() + img_end);
    return res;
}

struct EditResult {
    LayoutPlan plan;
    std::vector<TokenId> edited;
    SequenceState full;
    int model_calls = 0;
};

// Edit-region planning: conditioning = source image tokens + instruction; the
// decode emits a plan localizing the edit followed by the edited image.
inline EditResult edit_with_planning(const Vocabulary& v, const Predictor& model,
                                     const std::vector<TokenId>& source_image,
                                     const std::vector<TokenId>& instruction,
                                     const PlanningConfig& cfg, Rng& rng) {
    if (static_cast<int>(source_image.size()) != cfg.map.tokens_for(cfg.resolution)) {
        throw std::invalid_argument("edit_with_planning: source span inconsistent with resolution");
    }
    for (TokenId t : source_image) {
        if (!v.is_vq(t)) throw std::invalid_argument("edit_with_planning: source must be VQ tokens");
    }
    std::vector<TokenId> prompt = source_image;
    prompt.insert(prompt.end(), instruction.begin(), instruction.end());
    PlanningResult p = generate_with_planning(v, model, prompt, cfg, rng);
    EditResult res;
    res.plan = std::move(p.plan);
    res.edited = std::move(p.image);
    res.full = std::move(p.full);
    res.model_calls = p.model_calls;
    return res;
}

// ---------------------------------------------------------------------------
// Self-reflection loop
// ---------------------------------------------------------------------------

struct ReflectionConfig {
    int max_rounds = 1;
    int context_budget = 8192;
    int history_window = 3;  // newest rounds kept when truncating

    void validate() const {
        if (max_rounds < 1) throw std::invalid_argument("ReflectionConfig: max_rounds < 1");
        if (history_window < 0) throw std::invalid_argument("ReflectionConfig: negative window");
        if (context_budget < 1) throw std::invalid_argument("ReflectionConfig: empty budget");
    }
};

struct CritiqueResult {
    enum class Verdict { Accept, Revise };
    Verdict verdict = Verdict::Accept;
    std::vector<TokenId> feedback;  // non-empty whenever verdict is Revise
};

using Critic = std::function<CritiqueResult(const std::vector<TokenId>& image,
                                            const std::vector<TokenId>& prompt)>;

struct RoundTrace {
    int round = 0;
    LayoutPlan plan;
    std::string verdict;  // "accept" | "revise"
    std::vector<TokenId> feedback;
    int tokens_used = 0;
    bool truncated = false;
};

struct ReflectResult {
    std::vector<TokenId> image;
    LayoutPlan plan;
    std::vector<RoundTrace> rounds;
    int rounds_used = 0;
};

struct CriticError : std::runtime_error {
    std::vector<RoundTrace> trace;
    CriticError(const std::string& what, std::vector<RoundTrace> t)
        : std::runtime_error(what), trace(std::move(t)) {}
};

namespace detail {

struct HistoryRound {
    std::vector<TokenId> plan_tokens;
    std::vector<TokenId> image_tokens;
    std::vector<TokenId> feedback;
};

inline std::vector<TokenId> history_tokens(const Vocabulary& v, const HistoryRound& r) {
    std::vector<TokenId> out;
    out.push_back(v.sep_id());
    out.insert(out.end(), r.plan_tokens.begin(), r.plan_tokens.end());
    out.insert(out.end(), r.image_tokens.begin(), r.image_tokens.end());
    out.push_back(v.sep_id());
    out.insert(out.end(), r.feedback.begin(), r.feedback.end());
    return out;
}

}  // namespace detail

// Generate -> critique -> regenerate until the critic accepts or max_rounds
// is reached. Round 1 is exactly generate_with_planning (same draws from the
// same rng). Later rounds condition on the original prompt plus the newest
// `history_window` rounds (plan, image, critique), dropping whole old rounds
// first when the context budget demands it.
inline ReflectResult reflect_loop(const Vocabulary& v, const Predictor& model, const Critic& critic,
                                  const std::vector<TokenId>& prompt, const ReflectionConfig& rc,
                                  const PlanningConfig& pc, Rng& rng) {
    rc.validate();
    PlanningConfig round_cfg = pc;
    round_cfg.context_budget = rc.context_budget;

    ReflectResult res;
    std::vector<detail::HistoryRound> history;

    for (int round = 1; round <= rc.max_rounds; ++round) {
        // Assemble conditioning: prompt + kept history, newest-window rounds.
        const int keep_from =
            std::max(0, static_cast<int>(history.size()) - rc.history_window);
        std::vector<detail::HistoryRound> kept(history.begin() + keep_from, history.end());
        bool truncated = keep_from > 0;

        const int decode_overhead =
            round_cfg.plan_slots + pc.map.tokens_for(pc.resolution) - 1;
        auto conditioning_len = [&](const std::vector<detail::HistoryRound>& hs) {
            int len = static_cast<int>(prompt.size());
            for (const auto& h : hs) len += static_cast<int>(detail::history_tokens(v, h).size());
            return len;
        };
        while (!kept.empty() && conditioning_len(kept) + decode_overhead > rc.context_budget) {
            kept.erase(kept.begin());
            truncated = true;
        }
        if (conditioning_len(kept) + decode_overhead > rc.context_budget) {
            throw BudgetExceededError(conditioning_len(kept) + decode_overhead, rc.context_budget);
        }

        std::vector<TokenId> conditioning = prompt;
        for (const auto& h : kept) {
            const auto ht = detail::history_tokens(v, h);
            conditioning.insert(conditioning.end(), ht.begin(), ht.end());
        }

        PlanningResult gen = generate_with_planning(v, model, conditioning, round_cfg, rng);

        RoundTrace tr;
        tr.round = round;
        tr.plan = gen.plan;
        tr.tokens_used = static_cast<int>(gen.full.size());
        tr.truncated = truncated;

        CritiqueResult verdict;
        try {
            verdict = critic(gen.image, prompt);
        } catch (const std::exception& e) {
            tr.verdict = "error";
            res.rounds.push_back(std::move(tr));
            throw CriticError(std::string("critic failed: ") + e.what(), res.rounds);
        }
        if (verdict.verdict == CritiqueResult::Verdict::Revise && verdict.feedback.empty()) {
            throw std::invalid_argument("reflect_loop: Revise verdict without feedback");
        }
        tr.verdict = verdict.verdict == CritiqueResult::Verdict::Accept ? "accept" : "revise";
        tr.feedback = verdict.feedback;
        res.rounds.push_back(tr);

        res.image = gen.image;
        res.plan = gen.plan;
        res.rounds_used = round;
        if (verdict.verdict == CritiqueResult::Verdict::Accept) break;

        detail::HistoryRound h;
        h.plan_tokens = serialize_plan(v, gen.plan);
        h.image_tokens = gen.image;
        h.feedback = verdict.feedback;
        history.push_back(std::move(h));
    }
    return res;
}

}  // namespace mdm

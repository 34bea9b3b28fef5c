// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdm/diffusion.hpp"
#include "mdm/order.hpp"
#include "mdm/rng.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

// Output resolution (pixels per side) -> VQ token count. Counts are perfect
// squares; the default entries follow a 32px-per-token effective stride
// (tokenizer grid already compressed 4x).
struct ResolutionMap {
    std::map<int, int> entries;

    static ResolutionMap defaults() {
        ResolutionMap m;
        m.entries = {{256, 64}, {512, 256}, {1024, 1024}};
        return m;
    }

    void add(int resolution, int tokens) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
        if (side * side != tokens) {
            throw std::invalid_argument("ResolutionMap: token count must be a perfect square");
        }
        entries[resolution] = tokens;
    }

    int tokens_for(int resolution) const {
        auto it = entries.find(resolution);
        if (it == entries.end()) throw std::invalid_argument("ResolutionMap: unknown resolution");
        return it->second;
    }

    int grid_side(int resolution) const {
        return static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens_for(resolution)))));
    }
};

// Layout of an interleaved clean sequence: text runs and image spans, each
// image span carrying its collapse timestamp t_exp.
struct InterleavedSpec {
    struct Segment {
        bool is_image = false;
        int start = 0;  // offset in x0
        int len = 0;
        double t_exp = 0.5;    // image only
        int resolution = 0;    // image only
    };
    std::vector<Segment> segments;

    void validate(const SequenceState& x0) const {
        int expect = 0;
        for (const auto& seg : segments) {
            if (seg.start != expect || seg.len <= 0) {
                throw std::invalid_argument("InterleavedSpec: segments must tile the sequence");
            }
            if (seg.is_image && !(seg.t_exp > 0.0 && seg.t_exp < 1.0)) {
                throw std::invalid_argument("InterleavedSpec: t_exp outside (0,1)");
            }
            expect += seg.len;
        }
        if (expect != static_cast<int>(x0.size())) {
            throw std::invalid_argument("InterleavedSpec: does not cover the sequence");
        }
    }
};

// Derive the segment layout from branch tags (image spans = maximal Gen runs)
// and attach per-span t_exp values in order.
inline InterleavedSpec spec_from_tags(const SequenceState& x0, const std::vector<double>& t_exps,
                                      const std::vector<int>& resolutions) {
    InterleavedSpec spec;
    size_t img = 0;
    size_t i = 0;
    while (i < x0.size()) {
        const bool image = x0.tags[i] == BranchTag::Gen;
        size_t j = i;
        while (j < x0.size() && (x0.tags[j] == BranchTag::Gen) == image) ++j;
        InterleavedSpec::Segment seg;
        seg.is_image = image;
        seg.start = static_cast<int>(i);
        seg.len = static_cast<int>(j - i);
        if (image) {
            if (img >= t_exps.size() || img >= resolutions.size()) {
                throw std::invalid_argument("spec_from_tags: missing t_exp/resolution for image span");
            }
            seg.t_exp = t_exps[img];
            seg.resolution = resolutions[img];
            ++img;
        }
        spec.segments.push_back(seg);
        i = j;
    }
    return spec;
}

// X_0': every contiguous image span becomes a single EXP token.
inline SequenceState collapse_targets(const Vocabulary& v, const SequenceState& x0) {
    if (x0.count_masked(v) != 0) throw std::invalid_argument("collapse_targets: x0 must be mask-free");
    for (size_t i = 0; i < x0.size(); ++i) {
        if (v.is_vq(x0.tokens[i]) && x0.tags[i] != BranchTag::Gen) {
            throw std::invalid_argument("collapse_targets: unannotated VQ token");
        }
    }
    SequenceState out;
    out.t = x0.t;
    size_t i = 0;
    while (i < x0.size()) {
        if (x0.tags[i] == BranchTag::Gen) {
            size_t j = i;
            while (j < x0.size() && x0.tags[j] == BranchTag::Gen) ++j;
            out.tokens.push_back(v.exp_id());
            out.tags.push_back(BranchTag::Und);
            i = j;
        } else {
            out.tokens.push_back(x0.tokens[i]);
            out.tags.push_back(BranchTag::Und);
            ++i;
        }
    }
    return out;
}

// Modality-aware forward process. Text positions mask at the plain marginal
// rate t. An image span is present (per-token masking, Gen tags) when
// t >= t_exp, and collapsed to a single EXP-or-MASK Und token when t < t_exp.
// With no image segments this reduces exactly to forward_mask(0 -> t): the
// bernoulli draw sequence is identical.
inline SequenceState interleaved_forward(const Vocabulary& v, const SequenceState& x0,
                                         const InterleavedSpec& spec, double t, Rng& rng) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interleaved_forward: t outside [0,1]");
    spec.validate(x0);
    if (t == 0.0) return x0;  // clean boundary, outside the open-interval case split
    const TokenId m = v.mask_id();
    SequenceState out;
    out.t = t;
    for (const auto& seg : spec.segments) {
        if (!seg.is_image) {
            for (int i = seg.start; i < seg.start + seg.len; ++i) {
                const TokenId tok = x0.tokens[static_cast<size_t>(i)];
                out.tokens.push_back(rng.bernoulli(t) ? m : tok);
                out.tags.push_back(BranchTag::Und);
            }
        } else if (t >= seg.t_exp) {
            for (int i = seg.start; i < seg.start + seg.len; ++i) {
                const TokenId tok = x0.tokens[static_cast<size_t>(i)];
                out.tokens.push_back(rng.bernoulli(t) ? m : tok);
                out.tags.push_back(BranchTag::Gen);
            }
        } else {
            out.tokens.push_back(rng.bernoulli(t) ? m : v.exp_id());
            out.tags.push_back(BranchTag::Und);
        }
    }
    return out;
}

// Target sequence aligned with interleaved_forward's output at time t:
// image spans contribute their VQ tokens above t_exp and a single EXP below.
inline SequenceState interleaved_target(const Vocabulary& v, const SequenceState& x0,
                                        const InterleavedSpec& spec, double t) {
    spec.validate(x0);
    SequenceState out;
    out.t = 0.0;
    for (const auto& seg : spec.segments) {
        if (!seg.is_image || t >= seg.t_exp) {
            for (int i = seg.start; i < seg.start + seg.len; ++i) {
                out.tokens.push_back(x0.tokens[static_cast<size_t>(i)]);
                out.tags.push_back(x0.tags[static_cast<size_t>(i)]);
            }
        } else {
            out.tokens.push_back(v.exp_id());
            out.tags.push_back(BranchTag::Und);
        }
    }
    return out;
}

// Interleaved objective (the Eq.-style case split over t_exp): mdm_loss of the
// masked positions of xt against the per-segment target above.
inline double interleaved_loss(const Vocabulary& v, const SequenceState& x0,
                               const InterleavedSpec& spec, const SequenceState& xt,
                               const PredictorOutput& out, double t) {
    if (t <= 0.0) throw std::invalid_argument("interleaved_loss: t must be > 0");
    const SequenceState target = interleaved_target(v, x0, spec, t);
    if (target.size() != xt.size()) {
        throw std::invalid_argument("interleaved_loss: xt does not match the spec at this t");
    }
    return mdm_loss(v, target, xt, out, t);
}

// ---------------------------------------------------------------------------
// [exp] expansion
// ---------------------------------------------------------------------------

struct ImageSpan {
    int start = 0;
    int len = 0;
    int grid_side = 0;
};

struct ExpandResult {
    SequenceState state;
    std::vector<ImageSpan> new_spans;  // in left-to-right order
};

// Replace every EXP token by `tokens_for(resolution)` Gen-tagged masks,
// in place, left-to-right; everything else shifts right accordingly.
inline ExpandResult expand_exp(const Vocabulary& v, const SequenceState& state, int resolution,
                               const ResolutionMap& map) {
    const int count = map.tokens_for(resolution);
    const int side = map.grid_side(resolution);
    ExpandResult res;
    res.state.t = state.t;
    res.state.grid = state.grid;
    for (size_t i = 0; i < state.size(); ++i) {
        if (state.tokens[i] == v.exp_id()) {
            ImageSpan span;
            span.start = static_cast<int>(res.state.tokens.size());
            span.len = count;
            span.grid_side = side;
            res.new_spans.push_back(span);
            res.state.tokens.insert(res.state.tokens.end(), static_cast<size_t>(count), v.mask_id());
            res.state.tags.insert(res.state.tags.end(), static_cast<size_t>(count), BranchTag::Gen);
        } else {
            res.state.tokens.push_back(state.tokens[i]);
            res.state.tags.push_back(state.tags[i]);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Interleaved sampling (modality-aware reverse loop)
// ---------------------------------------------------------------------------

struct TraceEvent {
    int step = 0;
    std::string event;  // "unmask" | "expand"
    int position = 0;
    TokenId token = 0;
};

struct InterleavedOptions {
    double temperature = 0.0;
    OrderKind image_order = OrderKind::Stratified;
    RestrictionFn restrict;
    int* model_calls = nullptr;
    std::vector<TraceEvent>* trace = nullptr;
    int context_budget = 0;  // 0 = unlimited; else max input length per model call
    // Give the text region's masks priority over image spans when splitting a
    // step's quota (layout-first generation); default splits proportionally.
    bool text_first = false;
};

struct BudgetExceededError : std::runtime_error {
    explicit BudgetExceededError(int len, int budget)
        : std::runtime_error("context budget exceeded: " + std::to_string(len) + " > " +
                             std::to_string(budget)) {}
};

namespace detail {

// Track each expanded image span and its fixed unmask order; spans that start
// after an expansion point shift right.
struct SpanRegistry {
    struct Entry {
        ImageSpan span;
        std::vector<int> order;  // emission order of absolute positions
    };
    std::vector<Entry> entries;
};

// Proportional split of a step quota over regions by remaining mask count,
// remainder to the largest fractional shares (region index breaks ties).
inline std::vector<int> split_quota(int quota, const std::vector<int>& region_masks) {
    const int total = std::accumulate(region_masks.begin(), region_masks.end(), 0);
    std::vector<int> give(region_masks.size(), 0);
    if (total == 0 || quota == 0) return give;
    quota = std::min(quota, total);
    int assigned = 0;
    std::vector<std::pair<double, size_t>> fracs;
    for (size_t i = 0; i < region_masks.size(); ++i) {
        const double share = static_cast<double>(quota) * region_masks[i] / total;
        give[i] = std::min(region_masks[i], static_cast<int>(share));
        assigned += give[i];
        fracs.emplace_back(share - give[i], i);
    }
    std::stable_sort(fracs.begin(), fracs.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [frac, i] : fracs) {
        if (assigned >= quota) break;
        if (give[i] < region_masks[i]) {
            ++give[i];
            ++assigned;
        }
    }
    return give;
}

}  // namespace detail

// Modality-aware reverse loop: starts from `prompt` plus an all-Und masked
// region of length initial_len; whenever an EXP token is revealed it expands
// in place (before the next model call) into Gen-tagged masks which are then
// decoded with the image order policy. Per-step quotas restart over the
// remaining masks and remaining grid whenever the sequence grows. If an
// expansion lands on the final grid step, one extra full-unmask step runs so
// the result is always mask-free.
inline SequenceState interleaved_sample(const Vocabulary& v, const Predictor& model,
                                        const std::vector<TokenId>& prompt, int initial_len,
                                        const TimeGrid& grid, const ResolutionMap& map,
                                        int resolution, Rng& rng,
                                        const InterleavedOptions& opts = {}) {
    grid.validate();
    SequenceState state = make_generation_state(v, prompt, initial_len, BranchTag::Und);
    detail::SpanRegistry spans;
    ConfidencePolicy text_policy;

    auto quotas = step_quotas(state.count_masked(v), grid.steps, grid.K());
    int step_counter = 0;

    for (int k = grid.K(); k >= 1; --k) {
        const double s = grid.steps[static_cast<size_t>(k) - 1];
        std::vector<int> masked = state.masked_positions(v);
        if (masked.empty()) {
            state.t = s;
            continue;
        }
        ++step_counter;
        if (opts.context_budget > 0 && static_cast<int>(state.size()) > opts.context_budget) {
            throw BudgetExceededError(static_cast<int>(state.size()), opts.context_budget);
        }
        if (opts.model_calls) ++*opts.model_calls;
        PredictorOutput out = model(state);

        // Partition masked positions into the text region and image spans.
        std::vector<int> text_masked;
        std::vector<std::vector<int>> span_masked(spans.entries.size());
        for (int pos : masked) {
            bool in_span = false;
            for (size_t e = 0; e < spans.entries.size(); ++e) {
                const auto& sp = spans.entries[e].span;
                if (pos >= sp.start && pos < sp.start + sp.len) {
                    span_masked[e].push_back(pos);
                    in_span = true;
                    break;
                }
            }
            if (!in_span) text_masked.push_back(pos);
        }

        std::vector<int> region_counts;
        region_counts.push_back(static_cast<int>(text_masked.size()));
        for (const auto& sm : span_masked) region_counts.push_back(static_cast<int>(sm.size()));
        std::vector<int> give;
        if (opts.text_first) {
            const int q = std::min(quotas[static_cast<size_t>(k)],
                                   std::accumulate(region_counts.begin(), region_counts.end(), 0));
            const int to_text = std::min(q, region_counts[0]);
            std::vector<int> span_counts(region_counts.begin() + 1, region_counts.end());
            give = detail::split_quota(q - to_text, span_counts);
            give.insert(give.begin(), to_text);
        } else {
            give = detail::split_quota(quotas[static_cast<size_t>(k)], region_counts);
        }

        std::vector<int> chosen;
        SampleOptions pick_opts;
        pick_opts.restrict = opts.restrict;
        if (give[0] > 0) {
            auto sel = text_policy.select(state, out, text_masked, give[0], rng, opts.restrict);
            chosen.insert(chosen.end(), sel.begin(), sel.end());
        }
        for (size_t e = 0; e < spans.entries.size(); ++e) {
            if (give[e + 1] <= 0) continue;
            int taken = 0;
            for (int pos : spans.entries[e].order) {
                if (taken == give[e + 1]) break;
                if (std::binary_search(span_masked[e].begin(), span_masked[e].end(), pos)) {
                    chosen.push_back(pos);
                    ++taken;
                }
            }
        }
        std::sort(chosen.begin(), chosen.end());

        bool expanded = false;
        for (int pos : chosen) {
            TokenRange r;
            if (opts.restrict) r = opts.restrict(state, pos);
            const TokenId tok = draw_token(out, pos, r, opts.temperature, rng);
            state.tokens[static_cast<size_t>(pos)] = tok;
            if (opts.trace) opts.trace->push_back({step_counter, "unmask", pos, tok});
        }
        // Expansion happens after the step's reveals, before the next model call.
        std::vector<int> exp_positions;
        for (size_t i = 0; i < state.size(); ++i) {
            if (state.tokens[i] == v.exp_id()) exp_positions.push_back(static_cast<int>(i));
        }
        if (!exp_positions.empty()) {
            const int per_span = map.tokens_for(resolution) - 1;  // growth per expansion
            // Shift existing span entries by the growth inserted before them.
            for (auto& entry : spans.entries) {
                int before = 0;
                for (int ep : exp_positions) {
                    if (ep < entry.span.start) ++before;
                }
                const int delta = before * per_span;
                entry.span.start += delta;
                for (int& p : entry.order) p += delta;
            }
            ExpandResult ex = expand_exp(v, state, resolution, map);
            for (const auto& sp : ex.new_spans) {
                detail::SpanRegistry::Entry entry;
                entry.span = sp;
                UnmaskOrder ord = order_for_shape(opts.image_order, sp.grid_side, sp.grid_side, rng,
                                                  /*warn_on_fallback=*/false);
                for (int f : ord.flat()) entry.order.push_back(sp.start + f);
                spans.entries.push_back(std::move(entry));
                if (opts.trace) opts.trace->push_back({step_counter, "expand", sp.start, v.exp_id()});
            }
            state = std::move(ex.state);
            expanded = true;
        }
        state.t = s;
        if (expanded) {
            quotas = step_quotas(state.count_masked(v), grid.steps, k - 1);
        }
    }
    // A final-step expansion leaves fresh masks with no grid left; one extra
    // full-unmask step keeps the mask-free postcondition.
    if (state.count_masked(v) != 0) {
        std::vector<int> masked = state.masked_positions(v);
        ++step_counter;
        if (opts.model_calls) ++*opts.model_calls;
        PredictorOutput out = model(state);
        for (int pos : masked) {
            TokenRange r;
            if (opts.restrict) r = opts.restrict(state, pos);
            const TokenId tok = draw_token(out, pos, r, opts.temperature, rng);
            state.tokens[static_cast<size_t>(pos)] = tok;
            if (opts.trace) opts.trace->push_back({step_counter, "unmask", pos, tok});
        }
    }
    if (state.count_masked(v) != 0) throw IncompleteDecodeError(state);
    state.t = 0.0;
    return state;
}

}  // namespace mdm

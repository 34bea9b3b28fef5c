// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "mdm/grounding.hpp"
#include "mdm/orchestrate.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

// Predictor that puts (nearly) all mass on a scripted token per position.
// Positions are resolved via a user rule: state -> per-position target token.
// Handy for exercising the sampling machinery without a trained model.
inline Predictor scripted_predictor(const Vocabulary& v,
                                    std::function<TokenId(const SequenceState&, int)> rule,
                                    double peak_logit = 50.0) {
    const int V = v.total_size();
    return [v, rule = std::move(rule), peak_logit, V](const SequenceState& s) {
        PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), 0.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            const TokenId want = rule(s, out.rows[r]);
            if (want < 0 || want >= V) throw std::runtime_error("scripted rule: bad token");
            out.logits[r * static_cast<size_t>(V) + static_cast<size_t>(want)] = peak_logit;
        }
        return out;
    };
}

// Scripted planner for demos and orchestration tests: after a fixed prompt
// length, emits `label`, the box bins, EXP, then image cells. Image logits
// place the target color at each cell with probability `cell_hit_prob`
// (temperature-1 sampling of the decode loop supplies the randomness), so the
// per-round success rate of a reflection loop is controllable.
struct ScriptedPlannerConfig {
    int prompt_len = 0;  // retained for callers that log it; not used for slot lookup
    int plan_len = 6;    // label + 4 bins + EXP
    TokenId label = 0;
    QuantBox box;
    int side = 4;
    TokenId target_vq = 0;
    TokenId background_vq = 0;
    double cell_hit_prob = 1.0 / 16.0;
};

inline Predictor scripted_planner(const Vocabulary& v, const ScriptedPlannerConfig& cfg) {
    const int V = v.total_size();
    return [v, cfg, V](const SequenceState& s) {
        // The decode region is always the sequence suffix: plan_len slots, with
        // a side^2 image span after them once EXP has expanded. Keying offsets
        // off the suffix keeps the rule valid for conditioning of any length
        // (reflection history may itself contain Gen-tagged image tokens).
        const int span_len = cfg.side * cfg.side;
        const bool expanded = !s.tags.empty() && s.tags.back() == BranchTag::Gen;
        const int region_start = static_cast<int>(s.size()) -
                                 (expanded ? span_len + cfg.plan_len - 1 : cfg.plan_len);
        PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), -30.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            double* lg = out.logits.data() + r * static_cast<size_t>(V);
            const int pos = out.rows[r];
            const int off = pos - region_start;
            if (s.tags[static_cast<size_t>(pos)] == BranchTag::Gen) {
                // Image cell: mostly background, occasionally the target color.
                const double p = cfg.cell_hit_prob;
                lg[static_cast<size_t>(cfg.target_vq)] = std::log(p);
                lg[static_cast<size_t>(cfg.background_vq)] = std::log(1.0 - p);
                continue;
            }
            TokenId want;
            if (off == 0) {
                want = cfg.label;
            } else if (off >= 1 && off <= 4) {
                want = v.bin_id(cfg.box.bins[static_cast<size_t>(off - 1)]);
            } else {
                want = v.exp_id();
            }
            lg[static_cast<size_t>(want)] = 30.0;
        }
        return out;
    };
}

// Oracle critic for the single-target grid task: accept iff the image shows
// exactly one target cell on the background color.
inline Critic grid_oracle_critic(TokenId target_vq, TokenId background_vq,
                                 const std::vector<TokenId>& feedback) {
    return [=](const std::vector<TokenId>& image, const std::vector<TokenId>&) {
        int hits = 0;
        bool clean = true;
        for (TokenId t : image) {
            if (t == target_vq) {
                ++hits;
            } else if (t != background_vq) {
                clean = false;
            }
        }
        CritiqueResult r;
        if (hits == 1 && clean) {
            r.verdict = CritiqueResult::Verdict::Accept;
        } else {
            r.verdict = CritiqueResult::Verdict::Revise;
            r.feedback = feedback;
        }
        return r;
    };
}

}  // namespace mdm

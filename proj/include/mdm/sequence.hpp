// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mdm/vocab.hpp"

namespace mdm {

struct GridShape {
    int rows = 0;
    int cols = 0;
    bool valid() const { return rows > 0 && cols > 0; }
};

// A partially masked token sequence with per-position routing tags and the
// diffusion time it lives at.
struct SequenceState {
    std::vector<TokenId> tokens;
    std::vector<BranchTag> tags;
    double t = 0.0;
    std::optional<GridShape> grid;

    size_t size() const { return tokens.size(); }

    int count_masked(const Vocabulary& v) const {
        const TokenId m = v.mask_id();
        return static_cast<int>(std::count(tokens.begin(), tokens.end(), m));
    }

    std::vector<int> masked_positions(const Vocabulary& v) const {
        std::vector<int> out;
        const TokenId m = v.mask_id();
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] == m) out.push_back(static_cast<int>(i));
        }
        return out;
    }

    void validate(const Vocabulary& v) const {
        if (tokens.size() != tags.size()) {
            throw std::invalid_argument("SequenceState: tokens/tags length mismatch");
        }
        if (!(t >= 0.0 && t <= 1.0)) {
            throw std::invalid_argument("SequenceState: t outside [0,1]");
        }
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (!v.valid(tokens[i])) throw std::invalid_argument("SequenceState: invalid token id");
            if (v.is_vq(tokens[i]) && tags[i] != BranchTag::Gen) {
                throw std::invalid_argument("SequenceState: VQ token without Gen tag");
            }
            // Non-VQ unmasked content (text + specials) belongs to the Und branch;
            // masks may carry either tag (a Gen-tagged mask sits inside an
            // expanded image span).
            if (tokens[i] != v.mask_id() && !v.is_vq(tokens[i]) && tags[i] != BranchTag::Und) {
                throw std::invalid_argument("SequenceState: text/special token without Und tag");
            }
        }
    }
};

// Prompt followed by `answer_len` masked positions; the usual entry state for
// the reverse process.
inline SequenceState make_generation_state(const Vocabulary& v,
                                           const std::vector<TokenId>& prompt,
                                           int answer_len,
                                           BranchTag answer_tag = BranchTag::Und,
                                           std::optional<GridShape> grid = std::nullopt) {
    if (answer_len < 0) throw std::invalid_argument("answer_len must be >= 0");
    SequenceState s;
    s.tokens = prompt;
    s.tags.assign(prompt.size(), BranchTag::Und);
    for (size_t i = 0; i < prompt.size(); ++i) {
        if (v.is_vq(prompt[i])) s.tags[i] = BranchTag::Gen;
    }
    s.tokens.insert(s.tokens.end(), static_cast<size_t>(answer_len), v.mask_id());
    s.tags.insert(s.tags.end(), static_cast<size_t>(answer_len), answer_tag);
    s.t = 1.0;
    s.grid = grid;
    return s;
}

// Discretization 0 = t_0 < t_1 < ... < t_K = 1 of the reverse-process time.
struct TimeGrid {
    std::vector<double> steps;

    int K() const { return static_cast<int>(steps.size()) - 1; }

    static TimeGrid uniform(int k) {
        if (k < 1) throw std::invalid_argument("TimeGrid: K must be >= 1");
        TimeGrid g;
        g.steps.resize(static_cast<size_t>(k) + 1);
        for (int i = 0; i <= k; ++i) g.steps[static_cast<size_t>(i)] = static_cast<double>(i) / k;
        g.steps.front() = 0.0;
        g.steps.back() = 1.0;
        return g;
    }

    void validate() const {
        if (steps.size() < 2) throw std::invalid_argument("TimeGrid: needs at least 2 stamps");
        if (steps.front() != 0.0 || steps.back() != 1.0) {
            throw std::invalid_argument("TimeGrid: endpoints must be exactly 0 and 1");
        }
        for (size_t i = 1; i < steps.size(); ++i) {
            if (!(steps[i] > steps[i - 1])) {
                throw std::invalid_argument("TimeGrid: stamps must be strictly increasing");
            }
        }
    }
};

// Per-position categorical scores. Rows may cover a subset of positions
// (at minimum every masked one); `rows[i]` is the sequence position of row i.
struct PredictorOutput {
    int vocab_size = 0;
    std::vector<int> rows;
    std::vector<double> logits;  // row-major, rows.size() x vocab_size

    int row_of(int pos) const {
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] == pos) return static_cast<int>(i);
        }
        return -1;
    }

    bool has_row(int pos) const { return row_of(pos) >= 0; }

    const double* row_logits(int pos) const {
        const int r = row_of(pos);
        if (r < 0) throw std::invalid_argument("PredictorOutput: no logits for position");
        return logits.data() + static_cast<size_t>(r) * static_cast<size_t>(vocab_size);
    }
};

inline std::vector<double> softmax(const double* logits, int n) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    std::vector<double> p(static_cast<size_t>(n));
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        p[static_cast<size_t>(i)] = std::exp(logits[i] - mx);
        z += p[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] /= z;
    return p;
}

inline double log_softmax_at(const double* logits, int n, int index) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
    return logits[index] - mx - std::log(z);
}

// A model is anything that scores masked positions of a state.
using Predictor = std::function<PredictorOutput(const SequenceState&)>;

}  // namespace mdm

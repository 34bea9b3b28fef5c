// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdm/rng.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

// Probability that a clean token is masked at time t.
inline double marginal_mask_prob(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("marginal_mask_prob: t outside [0,1]");
    return t;
}

// Absorbing forward process q(X_t | X_s): each unmasked position is
// independently replaced by MASK with probability (t-s)/(1-s); masked
// positions stay masked. s = 1 is the degenerate all-mask fixed point and
// acts as the identity.
inline SequenceState forward_mask(const Vocabulary& v, const SequenceState& x0,
                                  double s, double t, Rng& rng) {
    if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("forward_mask: times outside [0,1]");
    }
    if (t < s) throw std::invalid_argument("forward_mask: t < s");
    if (x0.t != s) throw std::invalid_argument("forward_mask: x0.t != s");
    SequenceState out = x0;
    out.t = t;
    if (s == 1.0) return out;  // all-mask absorbing endpoint
    const double p = (t - s) / (1.0 - s);
    const TokenId m = v.mask_id();
    for (size_t i = 0; i < out.tokens.size(); ++i) {
        if (out.tokens[i] == m) continue;
        if (rng.bernoulli(p)) out.tokens[i] = m;
    }
    return out;
}

// Forward masking restricted to [begin, end); conditioning outside the span is
// left clean. Draw order matches forward_mask so the two agree on full spans.
inline SequenceState forward_mask_span(const Vocabulary& v, const SequenceState& x0,
                                       int begin, int end, double s, double t, Rng& rng) {
    if (begin < 0 || end > static_cast<int>(x0.size()) || begin > end) {
        throw std::invalid_argument("forward_mask_span: bad span");
    }
    if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0) || t < s) {
        throw std::invalid_argument("forward_mask_span: bad times");
    }
    SequenceState out = x0;
    out.t = t;
    if (s == 1.0) return out;
    const double p = (t - s) / (1.0 - s);
    const TokenId m = v.mask_id();
    for (int i = begin; i < end; ++i) {
        if (out.tokens[static_cast<size_t>(i)] == m) continue;
        if (rng.bernoulli(p)) out.tokens[static_cast<size_t>(i)] = m;
    }
    return out;
}

// Reverse posterior p(X_s | X_t, X_0-probs) per position: carry-over for
// unmasked positions; for masked positions, mass (t-s)/t on the predicted
// clean distribution and s/t on MASK. Returns a row per position of xt,
// each a distribution over the full vocabulary.
inline std::vector<std::vector<double>> reverse_posterior(
    const Vocabulary& v, const std::vector<std::vector<double>>& x0_probs,
    const SequenceState& xt, double s, double t) {
    if (t == 0.0) throw std::invalid_argument("reverse_posterior: t = 0");
    if (!(s >= 0.0 && s < t && t <= 1.0)) {
        throw std::invalid_argument("reverse_posterior: need 0 <= s < t <= 1");
    }
    if (x0_probs.size() != xt.size()) {
        throw std::invalid_argument("reverse_posterior: probs/state length mismatch");
    }
    const int V = v.total_size();
    const TokenId m = v.mask_id();
    std::vector<std::vector<double>> out(xt.size());
    for (size_t i = 0; i < xt.size(); ++i) {
        std::vector<double> row(static_cast<size_t>(V), 0.0);
        if (xt.tokens[i] != m) {
            row[static_cast<size_t>(xt.tokens[i])] = 1.0;
        } else {
            if (static_cast<int>(x0_probs[i].size()) != V) {
                throw std::invalid_argument("reverse_posterior: wrong distribution width");
            }
            const double keep = (t - s) / t;
            for (int k = 0; k < V; ++k) {
                row[static_cast<size_t>(k)] = keep * x0_probs[i][static_cast<size_t>(k)];
            }
            row[static_cast<size_t>(m)] += s / t;
        }
        out[i] = std::move(row);
    }
    return out;
}

// Masked diffusion objective: (1/t) * sum over masked positions of
// -log p(true token). Unmasked positions contribute zero.
inline double mdm_loss(const Vocabulary& v, const SequenceState& x0, const SequenceState& xt,
                       const PredictorOutput& out, double t) {
    if (t <= 0.0) throw std::invalid_argument("mdm_loss: t must be > 0");
    if (x0.size() != xt.size()) throw std::invalid_argument("mdm_loss: length mismatch");
    const TokenId m = v.mask_id();
    double acc = 0.0;
    for (size_t i = 0; i < xt.size(); ++i) {
        if (xt.tokens[i] != m) continue;
        const double* lg = out.row_logits(static_cast<int>(i));
        acc -= log_softmax_at(lg, out.vocab_size, static_cast<int>(x0.tokens[i]));
    }
    return acc / t;
}

// ---------------------------------------------------------------------------
// Reverse-process sampling
// ---------------------------------------------------------------------------

// Optional per-position restriction of the candidate vocabulary to a
// contiguous id range (e.g. box-bin slots). Empty = unrestricted.
struct TokenRange {
    TokenId lo = 0;
    TokenId hi = -1;  // inclusive; hi < lo means unrestricted
    bool restricted() const { return hi >= lo; }
};
using RestrictionFn = std::function<TokenRange(const SequenceState&, int pos)>;

// max softmax probability over the (possibly restricted) candidate set
inline double position_confidence(const PredictorOutput& out, int pos, const TokenRange& r) {
    const double* lg = out.row_logits(pos);
    const int V = out.vocab_size;
    const int lo = r.restricted() ? static_cast<int>(r.lo) : 0;
    const int hi = r.restricted() ? static_cast<int>(r.hi) : V - 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = lo; k <= hi; ++k) mx = std::max(mx, lg[k]);
    double z = 0.0, top = 0.0;
    for (int k = lo; k <= hi; ++k) {
        const double e = std::exp(lg[k] - mx);
        z += e;
        top = std::max(top, e);
    }
    return top / z;
}

// Draw (or argmax, at temperature 0) a token from the restricted candidates.
inline TokenId draw_token(const PredictorOutput& out, int pos, const TokenRange& r,
                          double temperature, Rng& rng) {
    const double* lg = out.row_logits(pos);
    const int V = out.vocab_size;
    const int lo = r.restricted() ? static_cast<int>(r.lo) : 0;
    const int hi = r.restricted() ? static_cast<int>(r.hi) : V - 1;
    if (temperature <= 0.0) {
        int best = lo;
        for (int k = lo + 1; k <= hi; ++k) {
            if (lg[k] > lg[best]) best = k;  // ties resolve to the lowest id
        }
        return static_cast<TokenId>(best);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = lo; k <= hi; ++k) mx = std::max(mx, lg[k]);
    std::vector<double> w(static_cast<size_t>(hi - lo + 1));
    for (int k = lo; k <= hi; ++k) {
        w[static_cast<size_t>(k - lo)] = std::exp((lg[k] - mx) / temperature);
    }
    return static_cast<TokenId>(lo + rng.categorical(w));
}

// Chooses which masked positions a step reveals (quota mode).
class UnmaskPolicy {
public:
    virtual ~UnmaskPolicy() = default;
    // Called once when sampling starts or the sequence layout changes.
    virtual void reset(const SequenceState& state) { (void)state; }
    // Pick up to `quota` positions among `masked` (ascending order).
    virtual std::vector<int> select(const SequenceState& state, const PredictorOutput& out,
                                    const std::vector<int>& masked, int quota, Rng& rng,
                                    const RestrictionFn& restrict) = 0;
};

// Highest-confidence-first, ties broken by lowest flat index.
class ConfidencePolicy final : public UnmaskPolicy {
public:
    std::vector<int> select(const SequenceState& state, const PredictorOutput& out,
                            const std::vector<int>& masked, int quota, Rng&,
                            const RestrictionFn& restrict) override {
        if (masked.empty()) throw std::runtime_error("ConfidencePolicy: no masked positions");
        std::vector<std::pair<double, int>> scored;
        scored.reserve(masked.size());
        for (int pos : masked) {
            TokenRange r;
            if (restrict) r = restrict(state, pos);
            scored.emplace_back(position_confidence(out, pos, r), pos);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const int take = std::min<int>(quota, static_cast<int>(scored.size()));
        std::vector<int> out_pos;
        out_pos.reserve(static_cast<size_t>(take));
        for (int i = 0; i < take; ++i) out_pos.push_back(scored[static_cast<size_t>(i)].second);
        std::sort(out_pos.begin(), out_pos.end());
        return out_pos;
    }
};

// Follows a fixed position order (stratified/Halton/uniform orders map grid
// cells to sequence positions through `seq_positions`).
class FixedOrderPolicy final : public UnmaskPolicy {
public:
    explicit FixedOrderPolicy(std::vector<int> seq_positions)
        : order_(std::move(seq_positions)) {}

    std::vector<int> select(const SequenceState&, const PredictorOutput&,
                            const std::vector<int>& masked, int quota, Rng&,
                            const RestrictionFn&) override {
        std::vector<int> out;
        for (int pos : order_) {
            if (static_cast<int>(out.size()) == quota) break;
            if (std::binary_search(masked.begin(), masked.end(), pos)) out.push_back(pos);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    std::vector<int> order_;
};

enum class StepMode {
    Quota,    // reveal a per-step quota of positions chosen by the policy
    Mixture,  // each masked position independently unmasks w.p. (t-s)/t
};

struct SampleOptions {
    StepMode mode = StepMode::Quota;
    double temperature = 0.0;
    RestrictionFn restrict;        // optional sub-vocabulary per position
    int* model_calls = nullptr;    // incremented per predictor invocation
};

// Per-step reveal budgets: quota_k = round(L * (t_k - t_{k-1})) for steps
// K..2, remainder at the final step, so they sum to L exactly.
inline std::vector<int> step_quotas(int n_masked, const std::vector<double>& steps,
                                    int first_step_index) {
    const int K = static_cast<int>(steps.size()) - 1;
    std::vector<int> q(static_cast<size_t>(K) + 1, 0);
    const double span = steps[static_cast<size_t>(first_step_index)] - steps.front();
    if (span <= 0.0) return q;
    int assigned = 0;
    for (int k = first_step_index; k >= 2; --k) {
        const double frac = (steps[static_cast<size_t>(k)] - steps[static_cast<size_t>(k) - 1]) / span;
        int qk = static_cast<int>(std::lround(n_masked * frac));
        qk = std::max(0, std::min(qk, n_masked - assigned));
        q[static_cast<size_t>(k)] = qk;
        assigned += qk;
    }
    q[1] = n_masked - assigned;
    return q;
}

// Raised when a decode cannot finish; carries the partial state.
struct IncompleteDecodeError : std::runtime_error {
    SequenceState partial;
    explicit IncompleteDecodeError(SequenceState s)
        : std::runtime_error("decode incomplete: mask positions remain"), partial(std::move(s)) {}
};

namespace detail {

inline void reveal(SequenceState& state, const PredictorOutput& out, const std::vector<int>& positions,
                   const SampleOptions& opts, Rng& rng) {
    for (int pos : positions) {
        TokenRange r;
        if (opts.restrict) r = opts.restrict(state, pos);
        state.tokens[static_cast<size_t>(pos)] = draw_token(out, pos, r, opts.temperature, rng);
    }
}

}  // namespace detail

// Reverse-process sampling loop over a discrete time grid. `initial` holds the
// conditioning (unmasked) plus the masked region to decode; already-unmasked
// tokens are never modified. Returns a mask-free state at t = 0.
inline SequenceState sample(const Vocabulary& v, const Predictor& model, const SequenceState& initial,
                            const TimeGrid& grid, UnmaskPolicy& policy, Rng& rng,
                            const SampleOptions& opts = {}) {
    grid.validate();
    SequenceState state = initial;
    state.t = 1.0;
    const int K = grid.K();
    const int n_masked0 = state.count_masked(v);
    policy.reset(state);

    std::vector<int> quotas;
    if (opts.mode == StepMode::Quota) quotas = step_quotas(n_masked0, grid.steps, K);

    for (int k = K; k >= 1; --k) {
        const double t = grid.steps[static_cast<size_t>(k)];
        const double s = grid.steps[static_cast<size_t>(k) - 1];
        std::vector<int> masked = state.masked_positions(v);
        if (masked.empty()) {
            state.t = s;
            continue;
        }
        if (opts.model_calls) ++*opts.model_calls;
        PredictorOutput out = model(state);
        if (out.vocab_size != v.total_size()) {
            throw std::runtime_error("sample: model output width mismatch");
        }
        for (int pos : masked) {
            if (!out.has_row(pos)) throw std::runtime_error("sample: model missing masked row");
        }

        std::vector<int> chosen;
        if (opts.mode == StepMode::Quota) {
            const int quota = quotas[static_cast<size_t>(k)];
            if (quota > 0) chosen = policy.select(state, out, masked, quota, rng, opts.restrict);
        } else {
            const double p = (t - s) / t;
            for (int pos : masked) {
                if (rng.bernoulli(p)) chosen.push_back(pos);
            }
        }
        detail::reveal(state, out, chosen, opts, rng);
        state.t = s;
    }
    if (state.count_masked(v) != 0) throw IncompleteDecodeError(state);
    return state;
}

// Confidence-threshold adaptive decoding: every masked position whose
// confidence clears the threshold unmasks; if none does, the single most
// confident position unmasks so progress is guaranteed.
inline SequenceState threshold_decode(const Vocabulary& v, const Predictor& model,
                                      const SequenceState& initial, double threshold,
                                      int max_steps, Rng& rng, const SampleOptions& opts = {}) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw std::invalid_argument("threshold_decode: threshold outside (0,1]");
    }
    if (max_steps < 1) throw std::invalid_argument("threshold_decode: max_steps < 1");
    SequenceState state = initial;
    for (int step = 0; step < max_steps; ++step) {
        std::vector<int> masked = state.masked_positions(v);
        if (masked.empty()) {
            state.t = 0.0;
            return state;
        }
        if (opts.model_calls) ++*opts.model_calls;
        PredictorOutput out = model(state);
        std::vector<int> chosen;
        double best_conf = -1.0;
        int best_pos = masked.front();
        for (int pos : masked) {
            TokenRange r;
            if (opts.restrict) r = opts.restrict(state, pos);
            const double c = position_confidence(out, pos, r);
            if (c >= threshold) chosen.push_back(pos);
            if (c > best_conf) {
                best_conf = c;
                best_pos = pos;
            }
        }
        if (chosen.empty()) chosen.push_back(best_pos);
        detail::reveal(state, out, chosen, opts, rng);
    }
    if (state.count_masked(v) != 0) throw IncompleteDecodeError(state);
    state.t = 0.0;
    return state;
}

}  // namespace mdm

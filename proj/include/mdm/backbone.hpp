// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdm/autograd.hpp"
#include "mdm/rng.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

enum class TaskMode { UndOnly, GenOnly, Interleaved };

inline const char* task_mode_name(TaskMode m) {
    switch (m) {
        case TaskMode::UndOnly: return "und_only";
        case TaskMode::GenOnly: return "gen_only";
        case TaskMode::Interleaved: return "interleaved";
    }
    return "?";
}

// Two-branch mixture-of-transformers shape: joint attention in the first
// `joint_layers` (M) layers, per-branch attention in the remaining K = N - M.
// Both branches project into a shared attention space of width attn_dim.
struct ModelConfig {
    int n_layers = 8;
    int joint_layers = 4;
    int und_width = 64;
    int gen_width = 32;
    int attn_dim = 64;
    int n_heads = 2;
    double mlp_ratio_und = 4.0;
    double mlp_ratio_gen = 4.0;
    int max_seq_len = 160;
    Vocabulary vocab = Vocabulary::make(95, 8);
    // Accounting-only overrides for per-branch embedding/head vocabulary rows
    // (0 = use vocab.total_size(), which is what toy models instantiate).
    int und_vocab_override = 0;
    int gen_vocab_override = 0;

    int und_hidden() const { return static_cast<int>(mlp_ratio_und * und_width); }
    int gen_hidden() const { return static_cast<int>(mlp_ratio_gen * gen_width); }
    int und_vocab_rows() const { return und_vocab_override > 0 ? und_vocab_override : vocab.total_size(); }
    int gen_vocab_rows() const { return gen_vocab_override > 0 ? gen_vocab_override : vocab.total_size(); }

    void validate() const {
        if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers < 1");
        if (joint_layers < 0 || joint_layers > n_layers) {
            throw std::invalid_argument("ModelConfig: joint_layers outside [0, n_layers]");
        }
        if (und_width < 1 || gen_width < 1) throw std::invalid_argument("ModelConfig: zero width");
        if (gen_width > und_width) {
            throw std::invalid_argument("ModelConfig: gen_width must not exceed und_width");
        }
        if (attn_dim < 1 || attn_dim % n_heads != 0) {
            throw std::invalid_argument("ModelConfig: attn_dim must be a positive multiple of n_heads");
        }
        if (und_hidden() < 1 || gen_hidden() < 1) throw std::invalid_argument("ModelConfig: zero mlp");
        if (max_seq_len < 1) throw std::invalid_argument("ModelConfig: max_seq_len < 1");
    }

    // The published full-scale shape; used for accounting, never instantiated.
    static ModelConfig paper_dims() {
        ModelConfig c;
        c.n_layers = 32;
        c.joint_layers = 16;
        c.und_width = 4096;
        c.gen_width = 2048;
        c.attn_dim = 4096;
        c.n_heads = 32;
        c.mlp_ratio_und = 3.0;  // hidden 12288
        c.mlp_ratio_gen = 4.0;  // hidden 8192
        c.max_seq_len = 8192;
        c.und_vocab_override = 126464;
        c.gen_vocab_override = 8192;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamComponent {
    long long attention = 0;
    long long mlp = 0;
    long long embeddings = 0;  // token + positional tables, output head, final norm
    long long total() const { return attention + mlp + embeddings; }
};

struct ParamReport {
    struct ModeCount {
        long long loaded = 0;
        long long trainable = 0;
        ParamComponent by;
    };
    ModeCount und_only;
    ModeCount gen_only;
    ModeCount interleaved;
    long long und_branch_total = 0;
    long long gen_branch_total = 0;
};

namespace detail {

struct BranchDims {
    long long width, hidden, attn_dim, vocab_rows, max_seq;
};

inline long long layer_attention_params(const BranchDims& b) {
    // attn norm + q/k/v projections (width -> attn_dim) + output (attn_dim -> width)
    return b.width + 3 * b.attn_dim * b.width + b.width * b.attn_dim;
}

inline long long layer_mlp_params(const BranchDims& b) {
    // mlp norm + gate/up (width -> hidden) + down (hidden -> width)
    return b.width + 3 * b.hidden * b.width;
}

inline ParamComponent branch_embed_params(const BranchDims& b) {
    ParamComponent c;
    c.embeddings = b.vocab_rows * b.width      // token table
                   + b.max_seq * b.width      // positional table
                   + b.vocab_rows * b.width   // head
                   + b.width;                 // final norm
    return c;
}

}  // namespace detail

// Exact per-mode parameter counts from the dimension formulas.
// Accounting convention: UND_ONLY = full understanding branch;
// GEN_ONLY = full generation branch plus the first M understanding *layers*
// (the paper-style "2.4B + 4B" decomposition, no und embeddings);
// INTERLEAVED = UND_ONLY + full generation branch, an exact identity.
// Trainable counts mirror the staging convention: generation-only training
// updates only the generation branch.
inline ParamReport param_report(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.gen_vocab_rows() <= 0 || cfg.gen_width <= 0) {
        throw std::invalid_argument("param_report: degenerate generation branch");
    }
    const detail::BranchDims und{cfg.und_width, cfg.und_hidden(), cfg.attn_dim,
                                 cfg.und_vocab_rows(), cfg.max_seq_len};
    const detail::BranchDims gen{cfg.gen_width, cfg.gen_hidden(), cfg.attn_dim,
                                 cfg.gen_vocab_rows(), cfg.max_seq_len};

    const long long und_layer_attn = detail::layer_attention_params(und);
    const long long und_layer_mlp = detail::layer_mlp_params(und);
    const long long gen_layer_attn = detail::layer_attention_params(gen);
    const long long gen_layer_mlp = detail::layer_mlp_params(gen);

    ParamReport r;
    const long long N = cfg.n_layers;
    const long long M = cfg.joint_layers;

    ParamComponent und_all;
    und_all.attention = N * und_layer_attn;
    und_all.mlp = N * und_layer_mlp;
    und_all.embeddings = detail::branch_embed_params(und).embeddings;
    ParamComponent gen_all;
    gen_all.attention = N * gen_layer_attn;
    gen_all.mlp = N * gen_layer_mlp;
    gen_all.embeddings = detail::branch_embed_params(gen).embeddings;

    r.und_branch_total = und_all.total();
    r.gen_branch_total = gen_all.total();

    r.und_only.by = und_all;
    r.und_only.loaded = und_all.total();
    r.und_only.trainable = und_all.total();

    r.gen_only.by.attention = M * und_layer_attn + gen_all.attention;
    r.gen_only.by.mlp = M * und_layer_mlp + gen_all.mlp;
    r.gen_only.by.embeddings = gen_all.embeddings;
    r.gen_only.loaded = r.gen_only.by.total();
    r.gen_only.trainable = gen_all.total();

    r.interleaved.by.attention = und_all.attention + gen_all.attention;
    r.interleaved.by.mlp = und_all.mlp + gen_all.mlp;
    r.interleaved.by.embeddings = und_all.embeddings + gen_all.embeddings;
    r.interleaved.loaded = r.interleaved.by.total();
    r.interleaved.trainable = r.interleaved.loaded;
    return r;
}

// ---------------------------------------------------------------------------
// Analytic FLOP accounting
// ---------------------------------------------------------------------------

struct TrainFlags {
    bool und_trainable = false;
    bool gen_trainable = false;
};

// Dense-transformer FLOP estimate summed over loaded layers and attention
// groups. Forward cost only by default; a trainable branch pays the usual
// +2x for its backward pass (frozen-but-loaded components pay forward only).
// Embedding/head lookups are excluded. 1 MAC = 2 FLOPs.
inline double flop_estimate(const ModelConfig& cfg, long long seq_und, long long seq_gen,
                            TaskMode mode, TrainFlags train = {}) {
    cfg.validate();
    if (seq_und < 0 || seq_gen < 0) throw std::invalid_argument("flop_estimate: negative lengths");
    if (mode == TaskMode::UndOnly) seq_gen = 0;

    const double mult_und = train.und_trainable ? 3.0 : 1.0;
    const double mult_gen = train.gen_trainable ? 3.0 : 1.0;
    const double Hu = cfg.und_width, Hg = cfg.gen_width, Da = cfg.attn_dim;
    const double hid_u = cfg.und_hidden(), hid_g = cfg.gen_hidden();

    // Per-token projection FLOPs for one layer of each branch.
    const double f_und = 2.0 * (3.0 * Hu * Da + Da * Hu + 3.0 * Hu * hid_u);
    const double f_gen = 2.0 * (3.0 * Hg * Da + Da * Hg + 3.0 * Hg * hid_g);

    const int N = cfg.n_layers;
    const int M = cfg.joint_layers;
    const double su = static_cast<double>(seq_und);
    const double sg = static_cast<double>(seq_gen);

    double total = 0.0;
    for (int l = 0; l < N; ++l) {
        const bool joint = l < M;
        const bool und_loaded = mode != TaskMode::GenOnly || joint;
        const bool gen_loaded = mode != TaskMode::UndOnly;
        if (und_loaded && su > 0) total += su * f_und * mult_und;
        if (gen_loaded && sg > 0) total += sg * f_gen * mult_gen;

        // Attention: 4 * s_q * s_k * attn_dim per group (scores + weighted sum).
        if (joint) {
            const double s = (und_loaded ? su : 0.0) + (gen_loaded ? sg : 0.0);
            const double mult = std::max(und_loaded && su > 0 ? mult_und : 1.0,
                                         gen_loaded && sg > 0 ? mult_gen : 1.0);
            total += 4.0 * s * s * Da * mult;
        } else {
            if (und_loaded && su > 0) total += 4.0 * su * su * Da * mult_und;
            if (gen_loaded && sg > 0) total += 4.0 * sg * sg * Da * mult_gen;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor value;
    Tensor grad;
};

struct MotModel {
    // Per-layer tensor indices within `params`.
    struct LayerIdx {
        int attn_norm, wq, wk, wv, wo, mlp_norm, gate, up, down;
    };
    struct BranchIdx {
        int tok_embed = -1, pos_embed = -1, final_norm = -1, head = -1;
        std::vector<LayerIdx> layers;
    };

    ModelConfig cfg;
    std::vector<NamedTensor> params;  // declaration order == checkpoint order
    BranchIdx und;
    BranchIdx gen;

    Tensor& value(int idx) { return params[static_cast<size_t>(idx)].value; }
    const Tensor& value(int idx) const { return params[static_cast<size_t>(idx)].value; }
    Tensor& gradient(int idx) { return params[static_cast<size_t>(idx)].grad; }

    long long param_count() const {
        long long n = 0;
        for (const auto& p : params) n += static_cast<long long>(p.value.size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params) p.grad.zero();
    }
};

namespace detail {

inline int add_tensor(MotModel& m, const std::string& name, int rows, int cols) {
    NamedTensor t;
    t.name = name;
    t.value = Tensor(rows, cols);
    t.grad = Tensor(rows, cols);
    m.params.push_back(std::move(t));
    return static_cast<int>(m.params.size()) - 1;
}

inline MotModel::BranchIdx declare_branch(MotModel& m, const std::string& prefix, int width,
                                          int hidden, int vocab_rows) {
    const auto& cfg = m.cfg;
    MotModel::BranchIdx b;
    b.tok_embed = add_tensor(m, prefix + ".tok_embed", vocab_rows, width);
    b.pos_embed = add_tensor(m, prefix + ".pos_embed", cfg.max_seq_len, width);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        MotModel::LayerIdx li;
        li.attn_norm = add_tensor(m, lp + ".attn_norm", 1, width);
        li.wq = add_tensor(m, lp + ".wq", cfg.attn_dim, width);
        li.wk = add_tensor(m, lp + ".wk", cfg.attn_dim, width);
        li.wv = add_tensor(m, lp + ".wv", cfg.attn_dim, width);
        li.wo = add_tensor(m, lp + ".wo", width, cfg.attn_dim);
        li.mlp_norm = add_tensor(m, lp + ".mlp_norm", 1, width);
        li.gate = add_tensor(m, lp + ".gate", hidden, width);
        li.up = add_tensor(m, lp + ".up", hidden, width);
        li.down = add_tensor(m, lp + ".down", width, hidden);
        b.layers.push_back(li);
    }
    b.final_norm = add_tensor(m, prefix + ".final_norm", 1, width);
    b.head = add_tensor(m, prefix + ".head", vocab_rows, width);
    return b;
}

inline bool is_norm_name(const std::string& name) {
    return name.find("norm") != std::string::npos;
}

}  // namespace detail

// Copy the leading sub-block of every understanding tensor into the matching
// generation tensor (all axes whose size differs are truncated).
inline void init_truncated(MotModel& m) {
    const size_t n = m.params.size() / 2;
    for (size_t i = 0; i < n; ++i) {
        const Tensor& src = m.params[i].value;            // und tensor
        Tensor& dst = m.params[n + i].value;              // gen counterpart
        if (dst.rows > src.rows || dst.cols > src.cols) {
            throw std::invalid_argument("init_truncated: gen tensor larger than und tensor");
        }
        for (int r = 0; r < dst.rows; ++r) {
            const double* s = src.row(r);
            double* d = dst.row(r);
            for (int c = 0; c < dst.cols; ++c) d[c] = s[c];
        }
    }
}

// Seeded toy initialization: und weights ~ N(0, 0.02), norms at 1; the gen
// branch is the truncated copy of the und branch.
inline MotModel init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    MotModel m;
    m.cfg = cfg;
    m.und = detail::declare_branch(m, "und", cfg.und_width, cfg.und_hidden(), cfg.und_vocab_rows());
    m.gen = detail::declare_branch(m, "gen", cfg.gen_width, cfg.gen_hidden(), cfg.gen_vocab_rows());
    const size_t half = m.params.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        auto& p = m.params[i];
        if (detail::is_norm_name(p.name)) {
            std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
        } else {
            for (double& x : p.value.data) x = rng.normal() * 0.02;
        }
    }
    init_truncated(m);
    return m;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardGraph {
    Tape tape;
    int logits = -1;             // [rows, vocab.total_size()]
    std::vector<int> rows;       // sequence positions, row order of `logits`
};

namespace detail {

struct BranchState {
    std::vector<int> rows;      // sequence positions handled by this branch
    int x = -1;                 // [rows, width] activations
};

// One branch's q/k/v projections for a layer.
struct Qkv {
    int q = -1, k = -1, v = -1;
};

inline Qkv project_qkv(Tape& tp, MotModel& m, const MotModel::BranchIdx& b, int layer, int x,
                       bool training) {
    auto reg = [&](int idx) {
        return training ? tp.param(m.value(idx), &m.gradient(idx)) : tp.input(m.value(idx));
    };
    const auto& li = b.layers[static_cast<size_t>(layer)];
    const int xn = tp.rmsnorm(x, reg(li.attn_norm));
    Qkv out;
    out.q = tp.matmul_nt(xn, reg(li.wq));
    out.k = tp.matmul_nt(xn, reg(li.wk));
    out.v = tp.matmul_nt(xn, reg(li.wv));
    return out;
}

inline int mlp_block(Tape& tp, MotModel& m, const MotModel::BranchIdx& b, int layer, int x,
                     bool training) {
    auto reg = [&](int idx) {
        return training ? tp.param(m.value(idx), &m.gradient(idx)) : tp.input(m.value(idx));
    };
    const auto& li = b.layers[static_cast<size_t>(layer)];
    const int xn = tp.rmsnorm(x, reg(li.mlp_norm));
    const int g = tp.silu(tp.matmul_nt(xn, reg(li.gate)));
    const int u = tp.matmul_nt(xn, reg(li.up));
    const int h = tp.matmul_nt(tp.mul(g, u), reg(li.down));
    return tp.add(x, h);
}

}  // namespace detail

// Build the forward computation for `state` under `mode`. `score_rows` lists
// the positions whose logits are wanted; empty means every position whose
// branch produces output in this mode. Logit rows are reported over the full
// unified vocabulary for both branches. Layers 1..M attend jointly in the
// shared attention space; later layers attend within each tag group, and in
// GenOnly mode the understanding branch simply is not loaded there.
inline ForwardGraph build_forward(MotModel& m, const SequenceState& state, TaskMode mode,
                                  std::vector<int> score_rows = {}, bool training = false) {
    const ModelConfig& cfg = m.cfg;
    const int L = static_cast<int>(state.size());
    if (L == 0) throw std::invalid_argument("build_forward: empty sequence");
    if (L > cfg.max_seq_len) throw std::invalid_argument("build_forward: sequence exceeds max_seq_len");

    detail::BranchState bu, bg;
    for (int i = 0; i < L; ++i) {
        (state.tags[static_cast<size_t>(i)] == BranchTag::Und ? bu : bg).rows.push_back(i);
    }
    if (mode == TaskMode::UndOnly && !bg.rows.empty()) {
        throw std::invalid_argument("build_forward: Gen-tagged position under UndOnly mode");
    }

    ForwardGraph fg;
    Tape& tp = fg.tape;
    auto reg = [&](int idx) {
        return training ? tp.param(m.value(idx), &m.gradient(idx)) : tp.input(m.value(idx));
    };

    auto embed_branch = [&](const MotModel::BranchIdx& b, const std::vector<int>& rows) {
        std::vector<int> toks;
        toks.reserve(rows.size());
        for (int r : rows) {
            TokenId t = state.tokens[static_cast<size_t>(r)];
            if (t >= m.value(b.tok_embed).rows) {
                throw std::invalid_argument("build_forward: token id outside embedding table");
            }
            toks.push_back(static_cast<int>(t));
        }
        const int te = tp.gather_rows(reg(b.tok_embed), toks);
        const int pe = tp.gather_rows(reg(b.pos_embed), rows);
        return tp.add(te, pe);
    };

    if (!bu.rows.empty()) bu.x = embed_branch(m.und, bu.rows);
    const bool gen_active = mode != TaskMode::UndOnly && !bg.rows.empty();
    if (gen_active) bg.x = embed_branch(m.gen, bg.rows);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const bool joint = l < cfg.joint_layers;
        const bool und_here = !bu.rows.empty() && (mode != TaskMode::GenOnly || joint);

        if (joint && und_here && gen_active) {
            auto qu = detail::project_qkv(tp, m, m.und, l, bu.x, training);
            auto qg = detail::project_qkv(tp, m, m.gen, l, bg.x, training);
            const int q = tp.concat_rows(qu.q, qg.q);
            const int k = tp.concat_rows(qu.k, qg.k);
            const int v = tp.concat_rows(qu.v, qg.v);
            const int o = tp.attention(q, k, v, cfg.n_heads);
            std::vector<int> head_rows(bu.rows.size()), tail_rows(bg.rows.size());
            for (size_t i = 0; i < head_rows.size(); ++i) head_rows[i] = static_cast<int>(i);
            for (size_t i = 0; i < tail_rows.size(); ++i) {
                tail_rows[i] = static_cast<int>(bu.rows.size() + i);
            }
            const int ou = tp.slice_rows(o, head_rows);
            const int og = tp.slice_rows(o, tail_rows);
            bu.x = tp.add(bu.x, tp.matmul_nt(ou, reg(m.und.layers[static_cast<size_t>(l)].wo)));
            bg.x = tp.add(bg.x, tp.matmul_nt(og, reg(m.gen.layers[static_cast<size_t>(l)].wo)));
            bu.x = detail::mlp_block(tp, m, m.und, l, bu.x, training);
            bg.x = detail::mlp_block(tp, m, m.gen, l, bg.x, training);
        } else {
            if (und_here) {
                auto qu = detail::project_qkv(tp, m, m.und, l, bu.x, training);
                const int o = tp.attention(qu.q, qu.k, qu.v, cfg.n_heads);
                bu.x = tp.add(bu.x, tp.matmul_nt(o, reg(m.und.layers[static_cast<size_t>(l)].wo)));
                bu.x = detail::mlp_block(tp, m, m.und, l, bu.x, training);
            }
            if (gen_active) {
                auto qg = detail::project_qkv(tp, m, m.gen, l, bg.x, training);
                const int o = tp.attention(qg.q, qg.k, qg.v, cfg.n_heads);
                bg.x = tp.add(bg.x, tp.matmul_nt(o, reg(m.gen.layers[static_cast<size_t>(l)].wo)));
                bg.x = detail::mlp_block(tp, m, m.gen, l, bg.x, training);
            }
        }
    }

    // Default scoring set: every position whose branch emits output here.
    if (score_rows.empty()) {
        if (mode != TaskMode::GenOnly) score_rows.insert(score_rows.end(), bu.rows.begin(), bu.rows.end());
        if (gen_active) score_rows.insert(score_rows.end(), bg.rows.begin(), bg.rows.end());
        std::sort(score_rows.begin(), score_rows.end());
    }

    std::vector<int> und_score, gen_score;
    for (int r : score_rows) {
        const bool is_gen = state.tags[static_cast<size_t>(r)] == BranchTag::Gen;
        if (is_gen) {
            if (!gen_active) throw std::invalid_argument("build_forward: Gen row scored without gen branch");
            gen_score.push_back(r);
        } else {
            if (mode == TaskMode::GenOnly) {
                throw std::invalid_argument("build_forward: Und row not scored in GenOnly mode");
            }
            und_score.push_back(r);
        }
    }

    auto branch_logits = [&](const MotModel::BranchIdx& b, const detail::BranchState& bs,
                             const std::vector<int>& wanted) -> int {
        std::vector<int> local;
        local.reserve(wanted.size());
        for (int r : wanted) {
            const auto it = std::lower_bound(bs.rows.begin(), bs.rows.end(), r);
            local.push_back(static_cast<int>(it - bs.rows.begin()));
        }
        const int xs = tp.slice_rows(bs.x, local);
        const int xn = tp.rmsnorm(xs, reg(b.final_norm));
        return tp.matmul_nt(xn, reg(b.head));
    };

    int lu = -1, lg = -1;
    if (!und_score.empty()) lu = branch_logits(m.und, bu, und_score);
    if (!gen_score.empty()) lg = branch_logits(m.gen, bg, gen_score);
    if (lu >= 0 && lg >= 0) {
        fg.logits = tp.concat_rows(lu, lg);
    } else {
        fg.logits = lu >= 0 ? lu : lg;
    }
    if (fg.logits < 0) throw std::invalid_argument("build_forward: nothing to score");
    fg.rows = und_score;
    fg.rows.insert(fg.rows.end(), gen_score.begin(), gen_score.end());
    return fg;
}

// Inference-only forward: logits for the requested (default: all scoreable)
// positions. Does not touch parameter gradients and never references weights
// outside the mode's loaded set.
inline PredictorOutput forward(const MotModel& model, const SequenceState& state, TaskMode mode,
                               std::vector<int> score_rows = {}) {
    MotModel& m = const_cast<MotModel&>(model);  // inference path registers inputs only
    ForwardGraph fg = build_forward(m, state, mode, std::move(score_rows), /*training=*/false);
    const Tensor& lg = fg.tape.value(fg.logits);
    PredictorOutput out;
    out.vocab_size = lg.cols;
    out.rows = fg.rows;
    out.logits = lg.data;
    return out;
}

// Predictor closure for the sampling loops.
inline Predictor make_predictor(const MotModel& model, TaskMode mode) {
    return [&model, mode](const SequenceState& s) {
        std::vector<int> rows = s.masked_positions(model.cfg.vocab);
        return forward(model, s, mode, std::move(rows));
    };
}

}  // namespace mdm

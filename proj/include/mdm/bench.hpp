// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "mdm/backbone.hpp"
#include "mdm/diffusion.hpp"
#include "mdm/grounding.hpp"
#include "mdm/io.hpp"
#include "mdm/order.hpp"
#include "mdm/tasks.hpp"

namespace mdm {

inline std::uint64_t model_hash(const MotModel& model) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the f32 image
    for (const auto& p : model.params) {
        for (double d : p.value.data) {
            const float f = static_cast<float>(d);
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof(bits));
            for (int i = 0; i < 4; ++i) {
                h ^= (bits >> (8 * i)) & 0xFF;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

inline const char* order_kind_name(OrderKind k) {
    switch (k) {
        case OrderKind::Stratified: return "stratified";
        case OrderKind::Halton: return "halton";
        case OrderKind::Uniform: return "uniform";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Task evaluation (one decoded sample per seed)
// ---------------------------------------------------------------------------

struct DecodeSettings {
    int steps = 8;               // quota-mode grid size; ignored in threshold mode
    double threshold = 0.0;      // > 0 switches to confidence-threshold decoding
    std::string sampler = "confidence";  // confidence | stratified | halton | uniform
    double temperature = 0.0;
    int max_steps = 4096;        // threshold mode cap
};

inline std::unique_ptr<UnmaskPolicy> make_policy(const std::string& sampler, int span_start,
                                                 int side, Rng& rng) {
    if (sampler == "confidence") return std::make_unique<ConfidencePolicy>();
    OrderKind kind;
    if (sampler == "stratified") {
        kind = OrderKind::Stratified;
    } else if (sampler == "halton") {
        kind = OrderKind::Halton;
    } else if (sampler == "uniform") {
        kind = OrderKind::Uniform;
    } else {
        throw std::invalid_argument("unknown sampler: " + sampler);
    }
    UnmaskOrder ord = order_for_shape(kind, side, side, rng);
    std::vector<int> seq;
    for (int f : ord.flat()) seq.push_back(span_start + f);
    return std::make_unique<FixedOrderPolicy>(std::move(seq));
}

struct TrialResult {
    double quality = 0.0;
    int model_calls = 0;
    SequenceState decoded;
};

// GridPattern: decode the image span and score admissibility (exact match to
// the task's constraint set).
inline TrialResult eval_grid_trial(const MotModel& model, const TaskConfig& cfg,
                                   const Vocabulary& v, const DecodeSettings& ds, Rng& rng) {
    const TaskSample s = draw_sample(cfg, v, rng);
    SequenceState init = make_generation_state(v, s.prompt, cfg.cells(), BranchTag::Gen,
                                               GridShape{cfg.side, cfg.side});
    const int span_start = static_cast<int>(s.prompt.size());
    Predictor pred = make_predictor(model, TaskMode::GenOnly);
    TrialResult tr;
    SampleOptions opts;
    opts.temperature = ds.temperature;
    opts.model_calls = &tr.model_calls;
    if (ds.threshold > 0.0) {
        tr.decoded = threshold_decode(v, pred, init, ds.threshold, ds.max_steps, rng, opts);
    } else {
        auto policy = make_policy(ds.sampler, span_start, cfg.side, rng);
        tr.decoded = sample(v, pred, init, TimeGrid::uniform(ds.steps), *policy, rng, opts);
    }
    std::vector<TokenId> image(tr.decoded.tokens.begin() + span_start, tr.decoded.tokens.end());
    tr.quality = grid_image_valid(cfg, v, image, s.target_color, s.background_color) ? 1.0 : 0.0;
    return tr;
}

// FindCell: decode the bin slots greedily under the bin restriction and score
// precision@0.5 across the sample's queries.
inline TrialResult eval_find_cell_trial(const MotModel& model, const TaskConfig& cfg,
                                        const Vocabulary& v, const DecodeSettings& ds, Rng& rng) {
    const TaskSample s = draw_sample(cfg, v, rng);
    SequenceState init = sample_to_state(v, s);
    const int prompt_len = static_cast<int>(s.prompt.size());
    std::vector<int> slot_positions;
    for (const auto& slots : s.slot_offsets) {
        for (int off : slots) {
            const int pos = prompt_len + off;
            init.tokens[static_cast<size_t>(pos)] = v.mask_id();
            slot_positions.push_back(pos);
        }
    }
    init.t = 1.0;
    const TokenId lo = v.first_bin_id(), hi = v.last_bin_id();
    SampleOptions opts;
    opts.temperature = ds.temperature;
    opts.restrict = [slot_positions, lo, hi](const SequenceState&, int pos) {
        for (int p : slot_positions) {
            if (p == pos) return TokenRange{lo, hi};
        }
        return TokenRange{};
    };
    TrialResult tr;
    opts.model_calls = &tr.model_calls;
    Predictor pred = make_predictor(model, TaskMode::Interleaved);
    ConfidencePolicy policy;
    tr.decoded = sample(v, pred, init, TimeGrid::uniform(ds.steps), policy, rng, opts);

    std::vector<BBox> preds, gts;
    for (size_t q = 0; q < s.slot_offsets.size(); ++q) {
        QuantBox qb;
        for (int k = 0; k < 4; ++k) {
            const int pos = prompt_len + s.slot_offsets[q][static_cast<size_t>(k)];
            const TokenId tok = tr.decoded.tokens[static_cast<size_t>(pos)];
            qb.bins[static_cast<size_t>(k)] = v.is_bin(tok) ? v.bin_index(tok) : 0;
        }
        BBox pb = dequantize(qb);
        if (pb.x1 > pb.x2) std::swap(pb.x1, pb.x2);
        if (pb.y1 > pb.y2) std::swap(pb.y1, pb.y2);
        preds.push_back(pb);
        gts.push_back(dequantize(s.gt_boxes[q]));
    }
    tr.quality = precision_at(preds, gts, 0.5);
    return tr;
}

// Caption: greedy decode of the caption text, scored by token accuracy.
inline TrialResult eval_caption_trial(const MotModel& model, const TaskConfig& cfg,
                                      const Vocabulary& v, const DecodeSettings& ds, Rng& rng) {
    const TaskSample s = draw_sample(cfg, v, rng);
    SequenceState init = make_generation_state(v, s.prompt, static_cast<int>(s.answer.size()),
                                               BranchTag::Und);
    Predictor pred = make_predictor(model, TaskMode::UndOnly);
    ConfidencePolicy policy;
    TrialResult tr;
    SampleOptions opts;
    opts.temperature = ds.temperature;
    opts.model_calls = &tr.model_calls;
    tr.decoded = sample(v, pred, init, TimeGrid::uniform(ds.steps), policy, rng, opts);
    std::vector<TokenId> text(tr.decoded.tokens.begin() + static_cast<long>(s.prompt.size()),
                              tr.decoded.tokens.end());
    tr.quality = token_accuracy(text, s.answer);
    return tr;
}

inline TrialResult eval_trial(const MotModel& model, const TaskConfig& cfg, const Vocabulary& v,
                              const DecodeSettings& ds, Rng& rng) {
    switch (cfg.kind) {
        case TaskKind::GridPattern: return eval_grid_trial(model, cfg, v, ds, rng);
        case TaskKind::FindCell: return eval_find_cell_trial(model, cfg, v, ds, rng);
        case TaskKind::Caption: return eval_caption_trial(model, cfg, v, ds, rng);
    }
    throw std::invalid_argument("eval_trial: bad task");
}

// Per-seed qualities; trial i uses the stream salt `base_salt + i`.
inline std::vector<double> eval_many(const MotModel& model, const TaskConfig& cfg,
                                     const Vocabulary& v, const DecodeSettings& ds, int trials,
                                     const Rng& root, std::uint64_t base_salt = 0) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        Rng r = root.stream(base_salt + static_cast<std::uint64_t>(i));
        out.push_back(eval_trial(model, cfg, v, ds, r).quality);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

struct BenchRow {
    std::string task;
    std::string sampler;
    int steps = 0;            // 0 in threshold mode
    double threshold = 0.0;   // 0 in step mode
    std::uint64_t seed = 0;
    double quality = 0.0;
    int model_calls = 0;
    double wall_seconds = 0.0;  // reported separately; excluded from data CSV
};

// Data CSV is fully deterministic given the seed; wall-clock lives in its own
// table so artifact bytes stay reproducible.
inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    CsvTable t;
    t.header = {"task", "sampler", "steps", "threshold", "seed", "quality", "model_calls"};
    for (const auto& r : rows) {
        t.rows.push_back({r.task, r.sampler, std::to_string(r.steps), format_double(r.threshold, 4),
                          std::to_string(r.seed), format_double(r.quality, 6),
                          std::to_string(r.model_calls)});
    }
    return t.to_string();
}

inline std::string timings_csv(const std::vector<BenchRow>& rows) {
    CsvTable t;
    t.header = {"task", "sampler", "steps", "threshold", "seed", "wall_seconds"};
    for (const auto& r : rows) {
        t.rows.push_back({r.task, r.sampler, std::to_string(r.steps), format_double(r.threshold, 4),
                          std::to_string(r.seed), format_double(r.wall_seconds, 6)});
    }
    return t.to_string();
}

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::GridPattern: return "grid";
        case TaskKind::FindCell: return "find-cell";
        case TaskKind::Caption: return "caption";
    }
    return "?";
}

inline std::vector<BenchRow> bench_samplers(const MotModel& model, const TaskConfig& cfg,
                                            const std::vector<std::string>& samplers,
                                            const std::vector<int>& step_counts, int seeds,
                                            std::uint64_t base_seed, double temperature = 1.0) {
    const Vocabulary v = cfg.vocab();
    std::vector<BenchRow> rows;
    const Rng root(base_seed);
    for (const auto& sampler : samplers) {
        for (int k : step_counts) {
            for (int i = 0; i < seeds; ++i) {
                DecodeSettings ds;
                ds.steps = k;
                ds.sampler = sampler;
                ds.temperature = temperature;
                Rng r = root.stream(static_cast<std::uint64_t>(i));
                const auto start = std::chrono::steady_clock::now();
                TrialResult tr = eval_trial(model, cfg, v, ds, r);
                const auto stop = std::chrono::steady_clock::now();
                BenchRow row;
                row.task = task_name(cfg.kind);
                row.sampler = sampler;
                row.steps = k;
                row.seed = static_cast<std::uint64_t>(i);
                row.quality = tr.quality;
                row.model_calls = tr.model_calls;
                row.wall_seconds = std::chrono::duration<double>(stop - start).count();
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

inline std::vector<BenchRow> bench_speed_quality(const MotModel& model, const TaskConfig& cfg,
                                                 const std::vector<int>& step_counts,
                                                 const std::vector<double>& thresholds, int seeds,
                                                 std::uint64_t base_seed,
                                                 double temperature = 1.0) {
    const Vocabulary v = cfg.vocab();
    std::vector<BenchRow> rows;
    const Rng root(base_seed);
    auto run_one = [&](const DecodeSettings& ds, int seed_idx) {
        Rng r = root.stream(static_cast<std::uint64_t>(seed_idx));
        const auto start = std::chrono::steady_clock::now();
        TrialResult tr = eval_trial(model, cfg, v, ds, r);
        const auto stop = std::chrono::steady_clock::now();
        BenchRow row;
        row.task = task_name(cfg.kind);
        row.sampler = ds.threshold > 0.0 ? "threshold" : ds.sampler;
        row.steps = ds.threshold > 0.0 ? 0 : ds.steps;
        row.threshold = ds.threshold;
        row.seed = static_cast<std::uint64_t>(seed_idx);
        row.quality = tr.quality;
        row.model_calls = tr.model_calls;
        row.wall_seconds = std::chrono::duration<double>(stop - start).count();
        rows.push_back(std::move(row));
    };
    for (int k : step_counts) {
        for (int i = 0; i < seeds; ++i) {
            DecodeSettings ds;
            ds.steps = k;
            ds.temperature = temperature;
            run_one(ds, i);
        }
    }
    for (double th : thresholds) {
        for (int i = 0; i < seeds; ++i) {
            DecodeSettings ds;
            ds.threshold = th;
            ds.temperature = temperature;
            run_one(ds, i);
        }
    }
    return rows;
}

}  // namespace mdm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdm/conditioning.hpp"
#include "mdm/grounding.hpp"
#include "mdm/modality.hpp"
#include "mdm/orchestrate.hpp"
#include "mdm/rng.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

enum class TaskKind { GridPattern, FindCell, Caption };

inline TaskKind task_kind_from_name(const std::string& s) {
    if (s == "grid" || s == "grid-pattern") return TaskKind::GridPattern;
    if (s == "find-cell") return TaskKind::FindCell;
    if (s == "caption") return TaskKind::Caption;
    throw std::invalid_argument("unknown task: " + s);
}

// Desk-scale synthetic tasks over colored grids, each with an exact
// ground-truth evaluator.
//
// GridPattern  (generation): prompt describes a colored-cell layout, the
//   image VQ tokens realize it. block == 1: "one target cell on background",
//   target position left free (any placement is admissible). block > 1:
//   unconstrained blocky pattern; every block x block tile must be uniform.
//   with_planning adds a (label, box) plan before the image span.
//   with_luminance appends a rendered LUMINANCE condition to the prompt.
// FindCell     (grounding): image with colored marker cells as conditioning,
//   per-label queries of 4 masked bin slots; targets are the quantized cell
//   boxes.
// Caption      (understanding): the image enters as an Und-tagged descriptor
//   span (semantic-embedding stand-in) and the masked caption text names the
//   target cell's color and the background.
struct TaskConfig {
    TaskKind kind = TaskKind::GridPattern;
    int side = 4;
    int colors = 4;
    int block = 1;
    bool with_planning = false;
    bool with_luminance = false;
    double luminance_dropout = 0.3;
    int max_queries = 1;  // FindCell: labels per sample (1..max, random)
    // with_planning only: probability of prepending a failed previous round
    // (SEP plan' image' SEP feedback) so reflection-style conditioning is
    // in-distribution at inference.
    double history_prob = 0.0;

    void validate() const {
        if (side < 2) throw std::invalid_argument("TaskConfig: side < 2");
        if (colors < 2) throw std::invalid_argument("TaskConfig: colors < 2");
        if (block < 1 || side % block != 0) {
            throw std::invalid_argument("TaskConfig: block must divide side");
        }
        if (colors > 26) throw std::invalid_argument("TaskConfig: colors > 26");
        if (max_queries < 1 || max_queries >= colors) {
            throw std::invalid_argument("TaskConfig: max_queries must be in [1, colors)");
        }
    }

    Vocabulary vocab() const { return Vocabulary::make(95, colors); }

    int cells() const { return side * side; }

    char color_letter(int idx) const { return static_cast<char>('a' + idx); }

    // Pixel scalar for a VQ color index, spread over 0..255.
    double pixel_value(int color_idx) const {
        return colors > 1 ? 255.0 * color_idx / (colors - 1) : 0.0;
    }

    // Toy resolution map entry: `side`-sided grids at a nominal 16px/token.
    int resolution() const { return side * 16; }

    ResolutionMap resolution_map() const {
        ResolutionMap m;
        m.add(resolution(), cells());
        return m;
    }
};

// One drawn instance of a task.
struct TaskSample {
    std::vector<TokenId> prompt;          // conditioning text (+ image for FindCell/Caption)
    std::vector<TokenId> answer;          // clean answer region
    std::vector<BranchTag> answer_tags;
    // GridPattern ground truth
    int target_color = -1;
    int background_color = -1;
    int target_cell = -1;
    // FindCell ground truth
    std::vector<int> query_colors;
    std::vector<QuantBox> gt_boxes;
    std::vector<std::array<int, 4>> slot_offsets;  // bin slots, relative to answer start
    // planning ground truth
    std::vector<TokenId> plan_tokens;  // serialized plan, relative prefix of answer
    // luminance conditioning
    std::optional<double> conditioned_luminance;
};

namespace detail {

inline QuantBox cell_box(int side, int cell) {
    const int r = cell / side;
    const int c = cell % side;
    BBox b{static_cast<double>(c) / side, static_cast<double>(r) / side,
           static_cast<double>(c + 1) / side, static_cast<double>(r + 1) / side};
    return quantize(b);
}

}  // namespace detail

// Deterministic sample generator: instance `index` of a task stream.
inline TaskSample draw_sample(const TaskConfig& cfg, const Vocabulary& v, Rng& rng) {
    cfg.validate();
    TaskSample s;
    switch (cfg.kind) {
        case TaskKind::GridPattern: {
            if (cfg.block > 1) {
                // Unconditional blocky pattern: every tile one color.
                s.prompt = v.encode_text("blk");
                const int tiles = cfg.side / cfg.block;
                std::vector<int> tile_color(static_cast<size_t>(tiles) * tiles);
                for (auto& t : tile_color) t = rng.uniform_below(cfg.colors);
                s.answer.resize(static_cast<size_t>(cfg.cells()));
                for (int r = 0; r < cfg.side; ++r) {
                    for (int c = 0; c < cfg.side; ++c) {
                        const int tile = (r / cfg.block) * tiles + (c / cfg.block);
                        s.answer[static_cast<size_t>(r * cfg.side + c)] =
                            v.vq_id(tile_color[static_cast<size_t>(tile)]);
                    }
                }
                s.answer_tags.assign(s.answer.size(), BranchTag::Gen);
                break;
            }
            if (cfg.with_luminance) {
                // Brightness field: cells iid bright/dark at a per-sample rate,
                // prompt optionally carries the measured luminance condition.
                const double p = 0.1 + 0.8 * rng.uniform();
                std::vector<TokenId> image(static_cast<size_t>(cfg.cells()));
                for (auto& t : image) t = v.vq_id(rng.bernoulli(p) ? cfg.colors - 1 : 0);
                std::string prompt = "im";
                std::vector<double> px(image.size());
                for (size_t i = 0; i < image.size(); ++i) {
                    px[i] = cfg.pixel_value(v.vq_index(image[i]));
                }
                const auto [lum, con] = measure_luminance_contrast(px);
                (void)con;
                if (!rng.bernoulli(cfg.luminance_dropout)) {
                    MicroConditions mc;
                    mc.luminance = lum;
                    prompt += "; " + render_conditions(mc);
                    s.conditioned_luminance = lum;
                }
                s.prompt = v.encode_text(prompt);
                s.answer = image;
                s.answer_tags.assign(s.answer.size(), BranchTag::Gen);
                break;
            }
            s.background_color = 0;
            s.target_color = 1 + rng.uniform_below(cfg.colors - 1);
            s.target_cell = rng.uniform_below(cfg.cells());
            std::string prompt = "1 ";
            prompt += cfg.color_letter(s.target_color);
            prompt += ' ';
            prompt += cfg.color_letter(s.background_color);
            std::vector<TokenId> image(static_cast<size_t>(cfg.cells()), v.vq_id(s.background_color));
            image[static_cast<size_t>(s.target_cell)] = v.vq_id(s.target_color);
            s.prompt = v.encode_text(prompt);

            if (cfg.with_planning && cfg.history_prob > 0.0 && rng.bernoulli(cfg.history_prob)) {
                // A rejected previous attempt: its image violates the prompt
                // (zero or two target cells), followed by the critic feedback.
                LayoutPlan prev_plan;
                LayoutItem prev_item;
                prev_item.label.push_back(v.char_token(cfg.color_letter(s.target_color)));
                const int prev_cell = rng.uniform_below(cfg.cells());
                prev_item.box = detail::cell_box(cfg.side, prev_cell);
                prev_plan.items.push_back(prev_item);
                std::vector<TokenId> prev_image(static_cast<size_t>(cfg.cells()),
                                                v.vq_id(s.background_color));
                if (rng.bernoulli(0.5)) {
                    // two targets
                    prev_image[static_cast<size_t>(prev_cell)] = v.vq_id(s.target_color);
                    const int extra = (prev_cell + 1 + rng.uniform_below(cfg.cells() - 1)) %
                                      cfg.cells();
                    prev_image[static_cast<size_t>(extra)] = v.vq_id(s.target_color);
                }  // else: zero targets
                s.prompt.push_back(v.sep_id());
                const auto pp = serialize_plan(v, prev_plan);
                s.prompt.insert(s.prompt.end(), pp.begin(), pp.end());
                s.prompt.insert(s.prompt.end(), prev_image.begin(), prev_image.end());
                s.prompt.push_back(v.sep_id());
                const auto fb = v.encode_text("redo");
                s.prompt.insert(s.prompt.end(), fb.begin(), fb.end());
            }

            if (cfg.with_planning) {
                LayoutPlan plan;
                LayoutItem item;
                item.label.push_back(v.char_token(cfg.color_letter(s.target_color)));
                item.box = detail::cell_box(cfg.side, s.target_cell);
                plan.items.push_back(item);
                s.plan_tokens = serialize_plan(v, plan);
                s.answer = s.plan_tokens;
                s.answer_tags.assign(s.answer.size(), BranchTag::Und);
                s.answer.insert(s.answer.end(), image.begin(), image.end());
                s.answer_tags.insert(s.answer_tags.end(), image.size(), BranchTag::Gen);
            } else {
                s.answer = image;
                s.answer_tags.assign(s.answer.size(), BranchTag::Gen);
            }
            break;
        }
        case TaskKind::FindCell: {
            const int n_queries = 1 + rng.uniform_below(cfg.max_queries);
            std::vector<int> cells, colors;
            for (int q = 0; q < n_queries; ++q) {
                int cell, color;
                do { cell = rng.uniform_below(cfg.cells()); } while (
                    std::find(cells.begin(), cells.end(), cell) != cells.end());
                do { color = 1 + rng.uniform_below(cfg.colors - 1); } while (
                    std::find(colors.begin(), colors.end(), color) != colors.end());
                cells.push_back(cell);
                colors.push_back(color);
            }
            std::vector<TokenId> image(static_cast<size_t>(cfg.cells()), v.vq_id(0));
            for (int q = 0; q < n_queries; ++q) {
                image[static_cast<size_t>(cells[static_cast<size_t>(q)])] =
                    v.vq_id(colors[static_cast<size_t>(q)]);
            }
            s.prompt = image;  // Gen-tagged conditioning span
            // Query section lives in the answer region: labels stay clean,
            // only the 4 bin slots per label are ever masked.
            for (int q = 0; q < n_queries; ++q) {
                if (q > 0) {
                    s.answer.push_back(v.sep_id());
                    s.answer_tags.push_back(BranchTag::Und);
                }
                s.answer.push_back(v.char_token(cfg.color_letter(colors[static_cast<size_t>(q)])));
                s.answer_tags.push_back(BranchTag::Und);
                std::array<int, 4> slots{};
                const QuantBox box = detail::cell_box(cfg.side, cells[static_cast<size_t>(q)]);
                for (int k = 0; k < 4; ++k) {
                    slots[static_cast<size_t>(k)] = static_cast<int>(s.answer.size());
                    s.answer.push_back(v.bin_id(box.bins[static_cast<size_t>(k)]));
                    s.answer_tags.push_back(BranchTag::Und);
                }
                s.slot_offsets.push_back(slots);
                s.gt_boxes.push_back(box);
                s.query_colors.push_back(colors[static_cast<size_t>(q)]);
            }
            break;
        }
        case TaskKind::Caption: {
            s.background_color = 0;
            s.target_color = 1 + rng.uniform_below(cfg.colors - 1);
            s.target_cell = rng.uniform_below(cfg.cells());
            // Semantic-embedding stand-in: uppercase descriptor characters.
            std::string desc;
            for (int i = 0; i < cfg.cells(); ++i) {
                desc += static_cast<char>('A' + (i == s.target_cell ? s.target_color : 0));
            }
            s.prompt = v.encode_text(desc);
            std::string caption = "1 ";
            caption += cfg.color_letter(s.target_color);
            caption += ' ';
            caption += cfg.color_letter(s.background_color);
            s.answer = v.encode_text(caption);
            s.answer_tags.assign(s.answer.size(), BranchTag::Und);
            break;
        }
    }
    return s;
}

// Clean full sequence (prompt + answer) for a sample.
inline SequenceState sample_to_state(const Vocabulary& v, const TaskSample& s) {
    SequenceState st;
    st.tokens = s.prompt;
    st.tags.assign(s.prompt.size(), BranchTag::Und);
    for (size_t i = 0; i < s.prompt.size(); ++i) {
        if (v.is_vq(s.prompt[i])) st.tags[i] = BranchTag::Gen;
    }
    st.tokens.insert(st.tokens.end(), s.answer.begin(), s.answer.end());
    st.tags.insert(st.tags.end(), s.answer_tags.begin(), s.answer_tags.end());
    st.t = 0.0;
    return st;
}

inline TaskMode task_mode(const TaskConfig& cfg) {
    switch (cfg.kind) {
        case TaskKind::GridPattern:
            return cfg.with_planning ? TaskMode::Interleaved : TaskMode::GenOnly;
        case TaskKind::FindCell:
            return TaskMode::Interleaved;
        case TaskKind::Caption:
            return TaskMode::UndOnly;
    }
    return TaskMode::Interleaved;
}

// ---------------------------------------------------------------------------
// Exact evaluators
// ---------------------------------------------------------------------------

// GridPattern admissibility of a decoded image span.
inline bool grid_image_valid(const TaskConfig& cfg, const Vocabulary& v,
                             const std::vector<TokenId>& image, int target_color,
                             int background_color) {
    if (static_cast<int>(image.size()) != cfg.cells()) return false;
    for (TokenId t : image) {
        if (!v.is_vq(t)) return false;
    }
    if (cfg.block > 1) {
        const int tiles = cfg.side / cfg.block;
        for (int tr = 0; tr < tiles; ++tr) {
            for (int tc = 0; tc < tiles; ++tc) {
                const TokenId first =
                    image[static_cast<size_t>(tr * cfg.block * cfg.side + tc * cfg.block)];
                for (int r = tr * cfg.block; r < (tr + 1) * cfg.block; ++r) {
                    for (int c = tc * cfg.block; c < (tc + 1) * cfg.block; ++c) {
                        if (image[static_cast<size_t>(r * cfg.side + c)] != first) return false;
                    }
                }
            }
        }
        return true;
    }
    int target_hits = 0;
    for (TokenId t : image) {
        const int color = v.vq_index(t);
        if (color == target_color) {
            ++target_hits;
        } else if (color != background_color) {
            return false;
        }
    }
    return target_hits == 1;
}

// Pixel field of a decoded image span (for luminance/contrast measurement).
inline std::vector<double> image_pixels(const TaskConfig& cfg, const Vocabulary& v,
                                        const std::vector<TokenId>& image) {
    std::vector<double> px;
    px.reserve(image.size());
    for (TokenId t : image) px.push_back(cfg.pixel_value(v.vq_index(t)));
    return px;
}

inline double token_accuracy(const std::vector<TokenId>& pred, const std::vector<TokenId>& truth) {
    if (pred.size() != truth.size() || truth.empty()) return 0.0;
    int hits = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (pred[i] == truth[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace mdm

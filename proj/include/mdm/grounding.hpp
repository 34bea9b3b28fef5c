// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mdm/diffusion.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace mdm {

// Box in the normalized [0,1] frame of the padded square image.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    void validate() const {
        if (!(x1 <= x2 && y1 <= y2)) throw std::invalid_argument("BBox: inverted box");
        if (x1 < 0 || y1 < 0 || x2 > 1 || y2 > 1) throw std::invalid_argument("BBox: outside [0,1]");
    }
    double area() const { return (x2 - x1) * (y2 - y1); }
};

// Four bin indices in 0..1024, one token each.
struct QuantBox {
    std::array<int, 4> bins{};  // x1, y1, x2, y2
};

// Pad the w x h image to a D x D square (D = max(w,h), original anchored at
// the top-left) and divide pixel coordinates by D.
inline BBox pad_and_normalize(double px1, double py1, double px2, double py2, int w, int h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("pad_and_normalize: empty image");
    if (px1 > px2 || py1 > py2) throw std::invalid_argument("pad_and_normalize: inverted box");
    if (px1 < 0 || py1 < 0 || px2 > w || py2 > h) {
        throw std::invalid_argument("pad_and_normalize: box outside image");
    }
    const double d = static_cast<double>(std::max(w, h));
    BBox b{px1 / d, py1 / d, px2 / d, py2 / d};
    b.validate();
    return b;
}

// bin = round(coord * 1024), half away from zero; dequantize returns bin/1024.
inline int quantize_coord(double c) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("quantize_coord: outside [0,1]");
    return static_cast<int>(std::lround(c * 1024.0));
}

inline QuantBox quantize(const BBox& b) {
    b.validate();
    return QuantBox{{quantize_coord(b.x1), quantize_coord(b.y1), quantize_coord(b.x2),
                     quantize_coord(b.y2)}};
}

inline BBox dequantize(const QuantBox& q) {
    for (int bin : q.bins) {
        if (bin < 0 || bin > 1024) throw std::invalid_argument("dequantize: bin outside 0..1024");
    }
    return BBox{q.bins[0] / 1024.0, q.bins[1] / 1024.0, q.bins[2] / 1024.0, q.bins[3] / 1024.0};
}

// Multi-box query: each label followed by exactly 4 masked bin slots,
// queries separated by SEP. Decoding the slots with the bin restriction
// yields one box per label.
struct MultiQuery {
    SequenceState state;
    std::vector<std::array<int, 4>> box_positions;  // per label, the 4 slot positions
};

inline MultiQuery build_multiquery(const Vocabulary& v,
                                   const std::vector<std::vector<TokenId>>& labels) {
    if (labels.empty()) throw std::invalid_argument("build_multiquery: no labels");
    MultiQuery q;
    q.state.t = 1.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].empty()) throw std::invalid_argument("build_multiquery: empty label");
        if (i > 0) {
            q.state.tokens.push_back(v.sep_id());
            q.state.tags.push_back(BranchTag::Und);
        }
        for (TokenId t : labels[i]) {
            q.state.tokens.push_back(t);
            q.state.tags.push_back(v.is_vq(t) ? BranchTag::Gen : BranchTag::Und);
        }
        std::array<int, 4> slots{};
        for (int k = 0; k < 4; ++k) {
            slots[static_cast<size_t>(k)] = static_cast<int>(q.state.tokens.size());
            q.state.tokens.push_back(v.mask_id());
            q.state.tags.push_back(BranchTag::Und);
        }
        q.box_positions.push_back(slots);
    }
    return q;
}

// Restriction closure limiting the query's box slots to the bin tokens.
inline RestrictionFn bin_restriction(const Vocabulary& v, const MultiQuery& q) {
    std::vector<int> slots;
    for (const auto& group : q.box_positions) {
        for (int p : group) slots.push_back(p);
    }
    const TokenId lo = v.first_bin_id();
    const TokenId hi = v.last_bin_id();
    return [slots, lo, hi](const SequenceState&, int pos) {
        for (int p : slots) {
            if (p == pos) return TokenRange{lo, hi};
        }
        return TokenRange{};
    };
}

inline std::vector<QuantBox> extract_boxes(const Vocabulary& v, const SequenceState& decoded,
                                           const MultiQuery& q) {
    std::vector<QuantBox> out;
    for (const auto& group : q.box_positions) {
        QuantBox b;
        for (int k = 0; k < 4; ++k) {
            const TokenId t = decoded.tokens[static_cast<size_t>(group[static_cast<size_t>(k)])];
            if (!v.is_bin(t)) throw std::runtime_error("extract_boxes: non-bin token in box slot");
            b.bins[static_cast<size_t>(k)] = v.bin_index(t);
        }
        out.push_back(b);
    }
    return out;
}

inline double iou(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Fraction of predictions whose IoU with the positionally matched ground
// truth clears the threshold (one prediction per query).
inline double precision_at(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                           double iou_thresh = 0.5) {
    if (preds.size() != gts.size() || preds.empty()) {
        throw std::invalid_argument("precision_at: size mismatch");
    }
    int hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (iou(preds[i], gts[i]) >= iou_thresh) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace mdm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mdm/scripted.hpp"
#include "mdm/sequence.hpp"
#include "mdm/vocab.hpp"

namespace support {

// Predictor with a fixed logit table per position, independent of state.
inline mdm::Predictor table_predictor(const mdm::Vocabulary& v,
                                      std::vector<std::vector<double>> per_position_logits) {
    const int V = v.total_size();
    return [v, per_position_logits = std::move(per_position_logits), V](const mdm::SequenceState& s) {
        mdm::PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), -40.0);
        for (size_t r = 0; r < out.rows.size(); ++r) {
            const auto& row = per_position_logits.at(static_cast<size_t>(out.rows[r]));
            for (size_t k = 0; k < row.size(); ++k) {
                out.logits[r * static_cast<size_t>(V) + k] = row[k];
            }
        }
        return out;
    };
}

// Uniform logits over the whole vocabulary.
inline mdm::Predictor uniform_predictor(const mdm::Vocabulary& v) {
    const int V = v.total_size();
    return [v, V](const mdm::SequenceState& s) {
        mdm::PredictorOutput out;
        out.vocab_size = V;
        out.rows = s.masked_positions(v);
        out.logits.assign(out.rows.size() * static_cast<size_t>(V), 0.0);
        return out;
    };
}

}  // namespace support

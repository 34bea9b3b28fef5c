// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mdm {

using TokenId = std::int32_t;

// Which transformer branch a position is routed to.
enum class BranchTag : std::uint8_t { Und = 0, Gen = 1 };

// Unified token id space: [text | image VQ | MASK EXP PAD SEP | 1025 box bins].
// Text ids map to printable ASCII (' '..'~') when text_count >= 95 so toy
// prompts can be written as plain strings.
struct Vocabulary {
    static constexpr int kBinCount = 1025;
    static constexpr int kFirstChar = 32;   // ' '
    static constexpr int kPrintableCount = 95;

    int text_count = 0;
    int vq_count = 0;

    static Vocabulary make(int text_count, int vq_count) {
        if (text_count <= 0 || vq_count < 0) {
            throw std::invalid_argument("Vocabulary: counts must be positive");
        }
        Vocabulary v;
        v.text_count = text_count;
        v.vq_count = vq_count;
        return v;
    }

    int specials_count() const { return 4 + kBinCount; }
    int total_size() const { return text_count + vq_count + specials_count(); }

    TokenId mask_id() const { return text_count + vq_count; }
    TokenId exp_id() const { return text_count + vq_count + 1; }
    TokenId pad_id() const { return text_count + vq_count + 2; }
    TokenId sep_id() const { return text_count + vq_count + 3; }
    TokenId bin_id(int k) const {
        if (k < 0 || k >= kBinCount) throw std::invalid_argument("bin index out of range");
        return text_count + vq_count + 4 + k;
    }
    TokenId first_bin_id() const { return text_count + vq_count + 4; }
    TokenId last_bin_id() const { return first_bin_id() + kBinCount - 1; }

    bool is_text(TokenId t) const { return t >= 0 && t < text_count; }
    bool is_vq(TokenId t) const { return t >= text_count && t < text_count + vq_count; }
    bool is_bin(TokenId t) const { return t >= first_bin_id() && t <= last_bin_id(); }
    bool is_special(TokenId t) const { return t >= text_count + vq_count && t < total_size(); }
    bool valid(TokenId t) const { return t >= 0 && t < total_size(); }

    int bin_index(TokenId t) const {
        if (!is_bin(t)) throw std::invalid_argument("token is not a bin token");
        return static_cast<int>(t - first_bin_id());
    }

    int vq_index(TokenId t) const {
        if (!is_vq(t)) throw std::invalid_argument("token is not a VQ token");
        return static_cast<int>(t - text_count);
    }

    TokenId vq_id(int index) const {
        if (index < 0 || index >= vq_count) throw std::invalid_argument("VQ index out of range");
        return static_cast<TokenId>(text_count + index);
    }

    // Char-level text tokens. Requires text_count >= 95.
    TokenId char_token(char c) const {
        const int idx = static_cast<int>(static_cast<unsigned char>(c)) - kFirstChar;
        if (idx < 0 || idx >= kPrintableCount || idx >= text_count) {
            throw std::invalid_argument("character outside text vocabulary");
        }
        return static_cast<TokenId>(idx);
    }

    std::vector<TokenId> encode_text(std::string_view s) const {
        std::vector<TokenId> out;
        out.reserve(s.size());
        for (char c : s) out.push_back(char_token(c));
        return out;
    }

    std::string decode_text(const std::vector<TokenId>& toks) const {
        std::string out;
        out.reserve(toks.size());
        for (TokenId t : toks) {
            if (is_text(t) && t < kPrintableCount) {
                out.push_back(static_cast<char>(kFirstChar + t));
            } else if (t == mask_id()) {
                out.push_back('_');
            } else {
                out.push_back('?');
            }
        }
        return out;
    }
};

}  // namespace mdm

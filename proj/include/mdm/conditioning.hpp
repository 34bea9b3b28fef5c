// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mdm/rng.hpp"

namespace mdm {

// Micro-conditions rendered as a plain-text suffix on prompts.
struct MicroConditions {
    std::optional<std::pair<int, int>> resolution;  // (w, h) pixels
    std::optional<std::pair<int, int>> crop;        // (x, y) pixels
    std::optional<double> aesthetic;
    std::optional<double> hps;
    std::optional<double> luminance;  // 0..255
    std::optional<double> contrast;   // >= 0

    bool operator==(const MicroConditions& o) const = default;
};

namespace detail {

inline std::string two_decimals(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("render_conditions: non-finite value");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
}

}  // namespace detail

// Canonical serialization: `KEY: VALUE` segments joined by `; `, keys in the
// fixed order [RES, CROP, AESTHETIC, HPS, LUMINANCE, CONTRAST]; RES as WxH,
// CROP as (x,y), scalars with exactly two decimals. Absent keys are omitted.
inline std::string render_conditions(const MicroConditions& c) {
    std::vector<std::string> parts;
    if (c.resolution) {
        parts.push_back("RES: " + std::to_string(c.resolution->first) + "x" +
                        std::to_string(c.resolution->second));
    }
    if (c.crop) {
        parts.push_back("CROP: (" + std::to_string(c.crop->first) + "," +
                        std::to_string(c.crop->second) + ")");
    }
    if (c.aesthetic) parts.push_back("AESTHETIC: " + detail::two_decimals(*c.aesthetic));
    if (c.hps) parts.push_back("HPS: " + detail::two_decimals(*c.hps));
    if (c.luminance) parts.push_back("LUMINANCE: " + detail::two_decimals(*c.luminance));
    if (c.contrast) parts.push_back("CONTRAST: " + detail::two_decimals(*c.contrast));
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += "; ";
        out += parts[i];
    }
    return out;
}

inline MicroConditions parse_conditions(const std::string& text) {
    MicroConditions c;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find("; ", pos);
        if (end == std::string::npos) end = text.size();
        const std::string seg = text.substr(pos, end - pos);
        const size_t colon = seg.find(": ");
        if (colon == std::string::npos) throw std::invalid_argument("parse_conditions: bad segment");
        const std::string key = seg.substr(0, colon);
        const std::string val = seg.substr(colon + 2);
        if (key == "RES") {
            const size_t x = val.find('x');
            if (x == std::string::npos) throw std::invalid_argument("parse_conditions: bad RES");
            c.resolution = {std::stoi(val.substr(0, x)), std::stoi(val.substr(x + 1))};
        } else if (key == "CROP") {
            const size_t comma = val.find(',');
            if (val.size() < 5 || val.front() != '(' || val.back() != ')' ||
                comma == std::string::npos) {
                throw std::invalid_argument("parse_conditions: bad CROP");
            }
            c.crop = {std::stoi(val.substr(1, comma - 1)),
                      std::stoi(val.substr(comma + 1, val.size() - comma - 2))};
        } else if (key == "AESTHETIC") {
            c.aesthetic = std::stod(val);
        } else if (key == "HPS") {
            c.hps = std::stod(val);
        } else if (key == "LUMINANCE") {
            c.luminance = std::stod(val);
        } else if (key == "CONTRAST") {
            c.contrast = std::stod(val);
        } else {
            throw std::invalid_argument("parse_conditions: unknown key " + key);
        }
        pos = end == text.size() ? end : end + 2;
    }
    return c;
}

// Each present key is independently dropped with probability p_drop.
inline MicroConditions dropout_conditions(const MicroConditions& c, double p_drop, Rng& rng) {
    if (!(p_drop >= 0.0 && p_drop <= 1.0)) {
        throw std::invalid_argument("dropout_conditions: p outside [0,1]");
    }
    MicroConditions out = c;
    if (out.resolution && rng.bernoulli(p_drop)) out.resolution.reset();
    if (out.crop && rng.bernoulli(p_drop)) out.crop.reset();
    if (out.aesthetic && rng.bernoulli(p_drop)) out.aesthetic.reset();
    if (out.hps && rng.bernoulli(p_drop)) out.hps.reset();
    if (out.luminance && rng.bernoulli(p_drop)) out.luminance.reset();
    if (out.contrast && rng.bernoulli(p_drop)) out.contrast.reset();
    return out;
}

// Luminance = mean of the pixel scalars, contrast = their (population)
// standard deviation.
inline std::pair<double, double> measure_luminance_contrast(const std::vector<double>& field) {
    if (field.empty()) throw std::invalid_argument("measure_luminance_contrast: empty field");
    double m = 0.0;
    for (double v : field) m += v;
    m /= static_cast<double>(field.size());
    double ss = 0.0;
    for (double v : field) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(field.size()))};
}

}  // namespace mdm

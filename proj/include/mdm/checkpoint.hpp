// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mdm/backbone.hpp"
#include "mdm/rng.hpp"

namespace mdm {

// Flat binary checkpoint:
//   magic "MDMCKPT\0" | u32 version | u64 config-JSON length | config JSON |
//   tensors in declaration order, row-major little-endian float32.
inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"n_layers", cfg.n_layers},
                          {"joint_layers", cfg.joint_layers},
                          {"und_width", cfg.und_width},
                          {"gen_width", cfg.gen_width},
                          {"attn_dim", cfg.attn_dim},
                          {"n_heads", cfg.n_heads},
                          {"mlp_ratio_und", cfg.mlp_ratio_und},
                          {"mlp_ratio_gen", cfg.mlp_ratio_gen},
                          {"max_seq_len", cfg.max_seq_len},
                          {"text_count", cfg.vocab.text_count},
                          {"vq_count", cfg.vocab.vq_count},
                          {"und_vocab_override", cfg.und_vocab_override},
                          {"gen_vocab_override", cfg.gen_vocab_override}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.joint_layers = j.at("joint_layers").get<int>();
    cfg.und_width = j.at("und_width").get<int>();
    cfg.gen_width = j.at("gen_width").get<int>();
    cfg.attn_dim = j.at("attn_dim").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.mlp_ratio_und = j.at("mlp_ratio_und").get<double>();
    cfg.mlp_ratio_gen = j.at("mlp_ratio_gen").get<double>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.vocab = Vocabulary::make(j.at("text_count").get<int>(), j.at("vq_count").get<int>());
    cfg.und_vocab_override = j.value("und_vocab_override", 0);
    cfg.gen_vocab_override = j.value("gen_vocab_override", 0);
    cfg.validate();
    return cfg;
}

inline void save_checkpoint(const MotModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::string cfg = config_to_json(model.cfg).dump();
    const std::uint64_t len = cfg.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::vector<float> buf;
    for (const auto& p : model.params) {
        buf.resize(p.value.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.value.data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline MotModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version");
    }
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string cfg_text(len, '\0');
    f.read(cfg_text.data(), static_cast<std::streamsize>(len));
    if (!f) throw std::runtime_error("load_checkpoint: truncated header");
    const ModelConfig cfg = config_from_json(nlohmann::json::parse(cfg_text));

    Rng scratch(0);
    MotModel model = init_model(cfg, scratch);
    std::vector<float> buf;
    for (auto& p : model.params) {
        buf.resize(p.value.size());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated tensor " + p.name);
        for (size_t i = 0; i < buf.size(); ++i) p.value.data[i] = static_cast<double>(buf[i]);
    }
    return model;
}

}  // namespace mdm

// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mdm/backbone.hpp"
#include "mdm/checkpoint.hpp"
#include "mdm/rng.hpp"
#include "mdm/sequence.hpp"

using namespace mdm;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.joint_layers = 1;
    c.und_width = 8;
    c.gen_width = 4;
    c.attn_dim = 8;
    c.n_heads = 2;
    c.mlp_ratio_und = 2.0;
    c.mlp_ratio_gen = 2.0;
    c.max_seq_len = 24;
    c.vocab = Vocabulary::make(95, 4);
    return c;
}

SequenceState mixed_state(const Vocabulary& v, int n_text, int n_gen) {
    SequenceState s;
    for (int i = 0; i < n_text; ++i) {
        s.tokens.push_back(v.char_token(static_cast<char>('a' + i % 4)));
        s.tags.push_back(BranchTag::Und);
    }
    for (int i = 0; i < n_gen; ++i) {
        s.tokens.push_back(v.vq_id(i % 4));
        s.tags.push_back(BranchTag::Gen);
    }
    return s;
}

bool outputs_equal(const PredictorOutput& a, const PredictorOutput& b) {
    return a.rows == b.rows && a.logits == b.logits;
}

}  // namespace

TEST_CASE("truncated initialization copies leading sub-blocks") {
    auto cfg = tiny_config();
    Rng rng(3);
    const auto model = init_model(cfg, rng);
    const size_t half = model.params.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        const Tensor& und = model.params[i].value;
        const Tensor& gen = model.params[half + i].value;
        for (int r = 0; r < gen.rows; ++r) {
            for (int c = 0; c < gen.cols; ++c) {
                REQUIRE(gen.at(r, c) == und.at(r, c));
            }
        }
    }
}

TEST_CASE("equal widths make the generation branch an exact copy") {
    auto cfg = tiny_config();
    cfg.gen_width = cfg.und_width;
    Rng rng(4);
    const auto model = init_model(cfg, rng);
    const size_t half = model.params.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        REQUIRE(model.params[i].value.data == model.params[half + i].value.data);
    }
}

TEST_CASE("re-initialization with the same seed is bit-identical") {
    auto cfg = tiny_config();
    Rng r1(99), r2(99);
    const auto a = init_model(cfg, r1);
    const auto b = init_model(cfg, r2);
    for (size_t i = 0; i < a.params.size(); ++i) {
        REQUIRE(a.params[i].value.data == b.params[i].value.data);
    }
}

TEST_CASE("all-Und outputs are bitwise invariant to generation-branch weights") {
    auto cfg = tiny_config();
    Rng rng(5);
    auto model = init_model(cfg, rng);
    const auto state = mixed_state(cfg.vocab, 6, 0);
    const auto before = forward(model, state, TaskMode::UndOnly);
    // scramble every gen tensor
    const size_t half = model.params.size() / 2;
    Rng noise(6);
    for (size_t i = half; i < model.params.size(); ++i) {
        for (double& x : model.params[i].value.data) x = noise.normal();
    }
    const auto after = forward(model, state, TaskMode::UndOnly);
    CHECK(outputs_equal(before, after));
    // the same holds under Interleaved mode when no Gen positions exist
    const auto inter = forward(model, state, TaskMode::Interleaved);
    CHECK(outputs_equal(before, inter));
}

TEST_CASE("GenOnly outputs are bitwise invariant to late und-branch layers") {
    auto cfg = tiny_config();
    cfg.n_layers = 4;
    cfg.joint_layers = 2;
    Rng rng(7);
    auto model = init_model(cfg, rng);
    const auto state = mixed_state(cfg.vocab, 4, 6);
    std::vector<int> gen_rows;
    for (int i = 4; i < 10; ++i) gen_rows.push_back(i);
    const auto before = forward(model, state, TaskMode::GenOnly, gen_rows);
    Rng noise(8);
    for (int l = cfg.joint_layers; l < cfg.n_layers; ++l) {
        const auto& li = model.und.layers[static_cast<size_t>(l)];
        for (int idx : {li.attn_norm, li.wq, li.wk, li.wv, li.wo, li.mlp_norm, li.gate, li.up,
                        li.down}) {
            for (double& x : model.value(idx).data) x = noise.normal();
        }
    }
    const auto after = forward(model, state, TaskMode::GenOnly, gen_rows);
    CHECK(outputs_equal(before, after));
}

TEST_CASE("M=0 text outputs equal an und-only forward on the text prefix") {
    auto cfg = tiny_config();
    cfg.joint_layers = 0;
    Rng rng(9);
    auto model = init_model(cfg, rng);
    const auto full = mixed_state(cfg.vocab, 5, 4);
    SequenceState text_only;
    text_only.tokens.assign(full.tokens.begin(), full.tokens.begin() + 5);
    text_only.tags.assign(full.tags.begin(), full.tags.begin() + 5);

    std::vector<int> text_rows{0, 1, 2, 3, 4};
    const auto a = forward(model, full, TaskMode::Interleaved, text_rows);
    const auto b = forward(model, text_only, TaskMode::UndOnly, text_rows);
    REQUIRE(a.rows == b.rows);
    for (size_t i = 0; i < a.logits.size(); ++i) {
        REQUIRE(a.logits[i] == Catch::Approx(b.logits[i]).margin(1e-12));
    }
}

TEST_CASE("joint layers propagate text perturbations into Gen outputs; M=0 does not") {
    auto cfg = tiny_config();
    const auto state = mixed_state(cfg.vocab, 3, 4);
    std::vector<int> gen_rows{3, 4, 5, 6};

    auto sensitivity = [&](int joint_layers) {
        ModelConfig c = cfg;
        c.joint_layers = joint_layers;
        Rng rng(11);
        auto model = init_model(c, rng);
        const auto base = forward(model, state, TaskMode::Interleaved, gen_rows);
        model.value(model.und.tok_embed).at(static_cast<int>(state.tokens[0]), 0) += 0.5;
        const auto bumped = forward(model, state, TaskMode::Interleaved, gen_rows);
        double delta = 0.0;
        for (size_t i = 0; i < base.logits.size(); ++i) {
            delta = std::max(delta, std::abs(base.logits[i] - bumped.logits[i]));
        }
        return delta;
    };

    CHECK(sensitivity(1) > 0.0);
    CHECK(sensitivity(0) == 0.0);
}

TEST_CASE("Gen tags under UndOnly mode are rejected") {
    auto cfg = tiny_config();
    Rng rng(12);
    auto model = init_model(cfg, rng);
    const auto state = mixed_state(cfg.vocab, 2, 2);
    CHECK_THROWS_AS(forward(model, state, TaskMode::UndOnly), std::invalid_argument);
}

TEST_CASE("param_report matches an independent summation oracle on toy dims") {
    ModelConfig cfg;
    cfg.n_layers = 8;
    cfg.joint_layers = 4;
    cfg.und_width = 64;
    cfg.gen_width = 32;
    cfg.attn_dim = 64;
    cfg.n_heads = 2;
    cfg.mlp_ratio_und = 4.0;
    cfg.mlp_ratio_gen = 4.0;
    cfg.max_seq_len = 160;
    cfg.vocab = Vocabulary::make(95, 8);
    const auto rep = param_report(cfg);

    // Hand-summed formulas, written independently of the implementation.
    const long long V = cfg.vocab.total_size();
    auto branch = [&](long long H, long long hid) {
        const long long attn = H + 3 * 64 * H + H * 64;  // norm + q/k/v + out, one layer
        const long long mlp = H + 2 * hid * H + hid * H;  // norm + gate/up + down
        const long long layers = 8 * (attn + mlp);
        const long long embeds = V * H + 160 * H + V * H + H;  // tok + pos + head + final norm
        return layers + embeds;
    };
    const long long und_total = branch(64, 256);
    const long long gen_total = branch(32, 128);
    CHECK(rep.und_only.loaded == und_total);
    CHECK(rep.gen_branch_total == gen_total);
    CHECK(rep.interleaved.loaded == und_total + gen_total);

    // additivity and ordering invariants
    CHECK(rep.interleaved.loaded == rep.und_only.loaded + rep.gen_branch_total);
    CHECK(rep.gen_only.loaded < rep.interleaved.loaded);

    // the instantiated toy model has exactly the reported element count
    Rng rng(1);
    const auto model = init_model(cfg, rng);
    CHECK(model.param_count() == rep.interleaved.loaded);
}

TEST_CASE("param_report at published dimensions lands within 5% of 6.4B/8B/10.4B") {
    const auto rep = param_report(ModelConfig::paper_dims());
    auto rel = [](double got, double want) { return std::abs(got - want) / want; };
    CHECK(rel(static_cast<double>(rep.gen_only.loaded), 6.4e9) < 0.05);
    CHECK(rel(static_cast<double>(rep.und_only.loaded), 8.0e9) < 0.05);
    CHECK(rel(static_cast<double>(rep.interleaved.loaded), 10.4e9) < 0.05);
}

TEST_CASE("degenerate generation branch is rejected") {
    auto cfg = tiny_config();
    cfg.gen_width = 0;
    CHECK_THROWS_AS(param_report(cfg), std::invalid_argument);
}

TEST_CASE("flop_estimate: decoupling strictly reduces attention cost") {
    auto cfg = ModelConfig::paper_dims();
    auto joint = cfg;
    joint.joint_layers = cfg.n_layers;
    auto decoupled = cfg;
    decoupled.joint_layers = cfg.n_layers - 1;
    const double fj = flop_estimate(joint, 128, 512, TaskMode::Interleaved);
    const double fd = flop_estimate(decoupled, 128, 512, TaskMode::Interleaved);
    CHECK(fd < fj);
    // the difference is exactly one layer's (|T|+|G|)^2 - (|T|^2+|G|^2) attention
    const double diff = 4.0 * cfg.attn_dim * (std::pow(128.0 + 512.0, 2) - (128.0 * 128 + 512.0 * 512));
    CHECK(fj - fd == Catch::Approx(diff).epsilon(1e-12));
}

TEST_CASE("flop_estimate: M=N equals the standard-MoT estimate") {
    auto elastic = ModelConfig::paper_dims();
    elastic.joint_layers = elastic.n_layers;
    const double got = flop_estimate(elastic, 100, 200, TaskMode::Interleaved);
    // standard MoT by hand: every layer joint, both branches
    const double Hu = 4096, Hg = 2048, Da = 4096, hu = 12288, hg = 8192;
    const double fu = 2 * (3 * Hu * Da + Da * Hu + 3 * Hu * hu);
    const double fg = 2 * (3 * Hg * Da + Da * Hg + 3 * Hg * hg);
    const double expect = 32 * (100 * fu + 200 * fg + 4 * 300.0 * 300.0 * Da);
    CHECK(got == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("training FLOP ratio of standard MoT over Elastic-MoT brackets the published speedup") {
    const auto elastic = ModelConfig::paper_dims();
    auto standard = elastic;
    standard.gen_width = elastic.und_width;
    standard.mlp_ratio_gen = elastic.mlp_ratio_und;
    standard.joint_layers = elastic.n_layers;
    const double e = flop_estimate(elastic, 256, 1024, TaskMode::GenOnly, {false, true});
    const double s = flop_estimate(standard, 256, 1024, TaskMode::Interleaved, {true, true});
    const double ratio = s / e;
    CHECK(ratio >= 2.5);
    CHECK(ratio <= 4.0);
}

TEST_CASE("checkpoint round-trips through the f32 on-disk format") {
    auto cfg = tiny_config();
    Rng rng(17);
    auto model = init_model(cfg, rng);
    const auto path = (std::filesystem::temp_directory_path() / "mdm_ckpt_test.bin").string();
    save_checkpoint(model, path);
    const auto loaded = load_checkpoint(path);

    REQUIRE(loaded.params.size() == model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i) {
        REQUIRE(loaded.params[i].name == model.params[i].name);
        for (size_t j = 0; j < model.params[i].value.data.size(); ++j) {
            const float f = static_cast<float>(model.params[i].value.data[j]);
            REQUIRE(loaded.params[i].value.data[j] == static_cast<double>(f));
        }
    }
    // byte-stable: saving the loaded model reproduces the file exactly
    const auto path2 = path + ".again";
    save_checkpoint(loaded, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("model forward rejects over-length sequences") {
    auto cfg = tiny_config();
    Rng rng(19);
    auto model = init_model(cfg, rng);
    auto state = mixed_state(cfg.vocab, cfg.max_seq_len + 1, 0);
    CHECK_THROWS_AS(forward(model, state, TaskMode::UndOnly), std::invalid_argument);
}

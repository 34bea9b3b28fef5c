// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: toy training, sampling, benchmarks, coordinate
// quantization, parameter/FLOP accounting, order visualization, and a
// reflection demo. Every command is deterministic given --seed; wall-clock
// timings are written to separate files so data artifacts stay byte-stable.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mdm/backbone.hpp"
#include "mdm/bench.hpp"
#include "mdm/checkpoint.hpp"
#include "mdm/conditioning.hpp"
#include "mdm/diffusion.hpp"
#include "mdm/grounding.hpp"
#include "mdm/io.hpp"
#include "mdm/modality.hpp"
#include "mdm/orchestrate.hpp"
#include "mdm/order.hpp"
#include "mdm/rng.hpp"
#include "mdm/scripted.hpp"
#include "mdm/tasks.hpp"
#include "mdm/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GlobalArgs {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string config_path;
};

nlohmann::json load_config(const GlobalArgs& g) {
    if (g.config_path.empty()) return nlohmann::json::object();
    return nlohmann::json::parse(mdm::read_file(g.config_path));
}

mdm::TaskConfig task_from_args(const std::string& task, int side, int colors, int block,
                               int max_queries, const nlohmann::json& cfg) {
    mdm::TaskConfig tc;
    std::string name = task;
    if (name == "grid-blocky") {
        tc.kind = mdm::TaskKind::GridPattern;
        tc.block = block > 1 ? block : 2;
    } else if (name == "grid-planned") {
        tc.kind = mdm::TaskKind::GridPattern;
        tc.with_planning = true;
    } else if (name == "grid-luminance") {
        tc.kind = mdm::TaskKind::GridPattern;
        tc.with_luminance = true;
    } else {
        tc.kind = mdm::task_kind_from_name(name);
        if (block > 1) tc.block = block;
    }
    tc.side = side;
    tc.colors = colors;
    tc.max_queries = max_queries;
    if (cfg.contains("task")) {
        const auto& j = cfg.at("task");
        tc.side = j.value("side", tc.side);
        tc.colors = j.value("colors", tc.colors);
        tc.block = j.value("block", tc.block);
        tc.with_planning = j.value("with_planning", tc.with_planning);
        tc.with_luminance = j.value("with_luminance", tc.with_luminance);
        tc.luminance_dropout = j.value("luminance_dropout", tc.luminance_dropout);
        tc.max_queries = j.value("max_queries", tc.max_queries);
    }
    tc.validate();
    return tc;
}

mdm::ModelConfig model_from_config(const nlohmann::json& cfg, const mdm::TaskConfig& task) {
    mdm::ModelConfig mc;
    mc.vocab = task.vocab();
    // Enough room for prompt + plan + image + reflection history.
    mc.max_seq_len = std::max(224, 4 * task.cells() + 96);
    if (cfg.contains("model")) {
        const auto& j = cfg.at("model");
        mc.n_layers = j.value("n_layers", mc.n_layers);
        mc.joint_layers = j.value("joint_layers", mc.joint_layers);
        mc.und_width = j.value("und_width", mc.und_width);
        mc.gen_width = j.value("gen_width", mc.gen_width);
        mc.attn_dim = j.value("attn_dim", mc.attn_dim);
        mc.n_heads = j.value("n_heads", mc.n_heads);
        mc.mlp_ratio_und = j.value("mlp_ratio_und", mc.mlp_ratio_und);
        mc.mlp_ratio_gen = j.value("mlp_ratio_gen", mc.mlp_ratio_gen);
        mc.max_seq_len = j.value("max_seq_len", mc.max_seq_len);
    }
    mc.validate();
    return mc;
}

mdm::TrainConfig train_from_config(const nlohmann::json& cfg, const mdm::TaskConfig& task,
                                   std::uint64_t seed, int steps) {
    mdm::TrainConfig tc = mdm::recommended_train_config(task, steps, seed);
    if (cfg.contains("train")) {
        const auto& j = cfg.at("train");
        tc.steps = j.value("steps", tc.steps);
        tc.batch_size = j.value("batch_size", tc.batch_size);
        tc.t_min = j.value("t_min", tc.t_min);
        tc.opt.kind = j.value("optimizer", tc.opt.kind);
        tc.opt.lr = j.value("lr", tc.opt.lr);
        tc.opt.beta1 = j.value("beta1", tc.opt.beta1);
        tc.opt.beta2 = j.value("beta2", tc.opt.beta2);
        tc.opt.grad_clip = j.value("grad_clip", tc.opt.grad_clip);
    }
    return tc;
}

void ensure_out(const GlobalArgs& g) { std::filesystem::create_directories(g.out_dir); }

std::string out_path(const GlobalArgs& g, const std::string& name) {
    return (std::filesystem::path(g.out_dir) / name).string();
}

nlohmann::json plan_to_json(const mdm::Vocabulary& v, const mdm::LayoutPlan& plan) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : plan.items) {
        items.push_back({{"label", v.decode_text(it.label)},
                         {"bins", {it.box.bins[0], it.box.bins[1], it.box.bins[2], it.box.bins[3]}}});
    }
    return items;
}

// ---------------------------------------------------------------------------

int cmd_train_toy(const GlobalArgs& g, const std::string& task, int side, int colors, int block,
                  int max_queries, int steps) {
    const auto cfg = load_config(g);
    const mdm::TaskConfig tc = task_from_args(task, side, colors, block, max_queries, cfg);
    const mdm::ModelConfig mc = model_from_config(cfg, tc);
    const mdm::TrainConfig trc = train_from_config(cfg, tc, g.seed, steps);
    ensure_out(g);

    mdm::TrainResult res = mdm::train_toy(tc, mc, trc);
    mdm::save_checkpoint(res.model, out_path(g, "checkpoint.bin"));

    mdm::CsvTable curve;
    curve.header = {"step", "loss"};
    for (size_t i = 0; i < res.loss_curve.size(); ++i) {
        curve.rows.push_back({std::to_string(i), mdm::format_double(res.loss_curve[i], 6)});
    }
    mdm::write_file(out_path(g, "loss_curve.csv"), curve.to_string());

    const auto [head, tail] = mdm::curve_endpoints(res.loss_curve);
    std::cout << "trained " << trc.steps << " steps; loss " << mdm::format_double(head, 4) << " -> "
              << mdm::format_double(tail, 4) << "\n";
    std::cout << "checkpoint: " << out_path(g, "checkpoint.bin") << "\n";
    return kExitOk;
}

int cmd_sample(const GlobalArgs& g, const std::string& checkpoint, const std::string& task,
               int side, int colors, int block, int steps, const std::string& sampler,
               double temperature, double threshold) {
    const auto cfg = load_config(g);
    const mdm::TaskConfig tc = task_from_args(task, side, colors, block, 1, cfg);
    const mdm::Vocabulary v = tc.vocab();
    mdm::MotModel model = mdm::load_checkpoint(checkpoint);
    ensure_out(g);

    mdm::DecodeSettings ds;
    ds.steps = steps;
    ds.sampler = sampler;
    ds.temperature = temperature;
    ds.threshold = threshold;
    mdm::Rng rng(g.seed);
    const mdm::TrialResult tr = mdm::eval_trial(model, tc, v, ds, rng);

    mdm::CsvTable toks;
    toks.header = {"position", "token", "tag"};
    for (size_t i = 0; i < tr.decoded.size(); ++i) {
        toks.rows.push_back({std::to_string(i), std::to_string(tr.decoded.tokens[i]),
                             tr.decoded.tags[i] == mdm::BranchTag::Gen ? "gen" : "und"});
    }
    mdm::write_file(out_path(g, "sample_tokens.csv"), toks.to_string());

    if (tc.kind == mdm::TaskKind::GridPattern) {
        // Render the image span as a grayscale PPM.
        const int span = tc.cells();
        const int start = static_cast<int>(tr.decoded.size()) - span;
        mdm::UnmaskOrder fake;
        fake.rows = fake.cols = tc.side;
        std::ostringstream os;
        os << "P6\n" << tc.side << " " << tc.side << "\n255\n";
        for (int i = 0; i < span; ++i) {
            const mdm::TokenId t = tr.decoded.tokens[static_cast<size_t>(start + i)];
            const int px = static_cast<int>(tc.pixel_value(v.vq_index(t)));
            os.put(static_cast<char>(px));
            os.put(static_cast<char>(px));
            os.put(static_cast<char>(px));
        }
        mdm::write_file(out_path(g, "sample.ppm"), os.str());
    }
    std::cout << "quality=" << tr.quality << " model_calls=" << tr.model_calls << "\n";
    return kExitOk;
}

int cmd_bench_samplers(const GlobalArgs& g, const std::string& checkpoint, const std::string& task,
                       int side, int colors, int block, std::vector<std::string> samplers,
                       std::vector<int> step_counts, int seeds, double temperature) {
    const auto cfg = load_config(g);
    const mdm::TaskConfig tc = task_from_args(task, side, colors, block, 1, cfg);
    mdm::MotModel model = mdm::load_checkpoint(checkpoint);
    ensure_out(g);
    const auto rows = mdm::bench_samplers(model, tc, samplers, step_counts, seeds, g.seed, temperature);
    mdm::write_file(out_path(g, "results.csv"), mdm::bench_csv(rows));
    mdm::write_file(out_path(g, "timings.csv"), mdm::timings_csv(rows));
    std::cout << "wrote " << rows.size() << " rows to " << out_path(g, "results.csv") << "\n";
    return kExitOk;
}

int cmd_bench_speed_quality(const GlobalArgs& g, const std::string& checkpoint,
                            const std::string& task, int side, int colors, int block,
                            std::vector<int> step_counts, std::vector<double> thresholds, int seeds,
                            double temperature) {
    const auto cfg = load_config(g);
    const mdm::TaskConfig tc = task_from_args(task, side, colors, block, 1, cfg);
    mdm::MotModel model = mdm::load_checkpoint(checkpoint);
    ensure_out(g);
    const auto rows =
        mdm::bench_speed_quality(model, tc, step_counts, thresholds, seeds, g.seed, temperature);
    mdm::write_file(out_path(g, "results.csv"), mdm::bench_csv(rows));
    mdm::write_file(out_path(g, "timings.csv"), mdm::timings_csv(rows));
    std::cout << "wrote " << rows.size() << " rows to " << out_path(g, "results.csv") << "\n";
    return kExitOk;
}

int cmd_quantize_bbox(const GlobalArgs& g, const std::string& in_path) {
    ensure_out(g);
    std::ifstream in(in_path);
    if (!in) throw std::runtime_error("quantize-bbox: cannot open " + in_path);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const mdm::BBox b = mdm::pad_and_normalize(j.at("x1").get<double>(), j.at("y1").get<double>(),
                                                   j.at("x2").get<double>(), j.at("y2").get<double>(),
                                                   j.at("w").get<int>(), j.at("h").get<int>());
        const mdm::QuantBox q = mdm::quantize(b);
        nlohmann::json o = j;
        o["nx1"] = b.x1;
        o["ny1"] = b.y1;
        o["nx2"] = b.x2;
        o["ny2"] = b.y2;
        o["bins"] = {q.bins[0], q.bins[1], q.bins[2], q.bins[3]};
        out << o.dump() << "\n";
    }
    mdm::write_file(out_path(g, "boxes.jsonl"), out.str());
    std::cout << "wrote " << out_path(g, "boxes.jsonl") << "\n";
    return kExitOk;
}

int cmd_mot_account(const GlobalArgs& g, bool paper, int seq_und, int seq_gen) {
    const auto cfg = load_config(g);
    mdm::ModelConfig mc;
    if (paper) {
        mc = mdm::ModelConfig::paper_dims();
    } else {
        const mdm::TaskConfig dummy;
        mc = model_from_config(cfg, dummy);
    }
    ensure_out(g);
    const mdm::ParamReport rep = mdm::param_report(mc);

    mdm::CsvTable t;
    t.header = {"mode", "loaded", "trainable", "attention", "mlp", "embeddings"};
    auto push = [&](const char* name, const mdm::ParamReport::ModeCount& m) {
        t.rows.push_back({name, std::to_string(m.loaded), std::to_string(m.trainable),
                          std::to_string(m.by.attention), std::to_string(m.by.mlp),
                          std::to_string(m.by.embeddings)});
    };
    push("und_only", rep.und_only);
    push("gen_only", rep.gen_only);
    push("interleaved", rep.interleaved);
    mdm::write_file(out_path(g, "params.csv"), t.to_string());

    // Training-cost comparison against an equal-width all-joint baseline.
    mdm::ModelConfig baseline = mc;
    baseline.gen_width = mc.und_width;
    baseline.mlp_ratio_gen = mc.mlp_ratio_und;
    baseline.joint_layers = mc.n_layers;
    const double elastic =
        mdm::flop_estimate(mc, seq_und, seq_gen, mdm::TaskMode::GenOnly, {false, true});
    const double standard =
        mdm::flop_estimate(baseline, seq_und, seq_gen, mdm::TaskMode::Interleaved, {true, true});
    mdm::CsvTable f;
    f.header = {"architecture", "seq_und", "seq_gen", "train_flops"};
    f.rows.push_back({"standard_mot", std::to_string(seq_und), std::to_string(seq_gen),
                      mdm::format_double(standard, 0)});
    f.rows.push_back({"elastic_mot", std::to_string(seq_und), std::to_string(seq_gen),
                      mdm::format_double(elastic, 0)});
    f.rows.push_back({"ratio", std::to_string(seq_und), std::to_string(seq_gen),
                      mdm::format_double(standard / elastic, 4)});
    mdm::write_file(out_path(g, "flops.csv"), f.to_string());

    std::cout << "loaded params  und_only=" << rep.und_only.loaded
              << "  gen_only=" << rep.gen_only.loaded << "  interleaved=" << rep.interleaved.loaded
              << "\n";
    std::cout << "train FLOP ratio standard/elastic = " << mdm::format_double(standard / elastic, 3)
              << "\n";
    return kExitOk;
}

int cmd_plot_order(const GlobalArgs& g, const std::string& kind, int n) {
    ensure_out(g);
    mdm::Rng rng(g.seed);
    mdm::UnmaskOrder order;
    if (kind == "stratified") {
        order = mdm::stratified_order(n, rng);
    } else if (kind == "halton") {
        order = mdm::halton_order(n);
    } else if (kind == "uniform") {
        order = mdm::uniform_order(n, rng);
    } else {
        throw std::invalid_argument("plot-order: unknown kind " + kind);
    }
    mdm::write_file(out_path(g, "order.csv"), mdm::order_to_csv(order));
    mdm::write_file(out_path(g, "order.ppm"), mdm::order_to_ppm(order));
    const auto rep = mdm::coverage_metrics(order);
    std::cout << "kind=" << kind << " n=" << n
              << " mean_star_discrepancy=" << mdm::format_double(rep.star_discrepancy_estimate, 6)
              << "\n";
    return kExitOk;
}

int cmd_reflect_demo(const GlobalArgs& g, int rounds, double hit_prob) {
    ensure_out(g);
    const mdm::Vocabulary v = mdm::Vocabulary::make(95, 4);
    const std::string prompt_text = "1 b a";
    const auto prompt = v.encode_text(prompt_text);

    mdm::ScriptedPlannerConfig sp;
    sp.prompt_len = static_cast<int>(prompt.size());
    sp.label = v.char_token('b');
    sp.side = 4;
    sp.target_vq = v.vq_id(1);
    sp.background_vq = v.vq_id(0);
    sp.cell_hit_prob = hit_prob;
    {
        mdm::BBox cell{0.25, 0.25, 0.5, 0.5};
        sp.box = mdm::quantize(cell);
    }
    const mdm::Predictor model = mdm::scripted_planner(v, sp);
    const mdm::Critic critic =
        mdm::grid_oracle_critic(sp.target_vq, sp.background_vq, v.encode_text("try again"));

    mdm::ReflectionConfig rc;
    rc.max_rounds = rounds;
    mdm::PlanningConfig pc;
    pc.grid = mdm::TimeGrid::uniform(4);
    pc.plan_slots = 6;
    pc.resolution = 64;
    pc.map.add(64, 16);
    pc.temperature = 1.0;

    mdm::Rng rng(g.seed);
    const mdm::ReflectResult res = mdm::reflect_loop(v, model, critic, prompt, rc, pc, rng);

    std::ostringstream trace;
    for (const auto& r : res.rounds) {
        nlohmann::json j{{"round", r.round},
                         {"plan", plan_to_json(v, r.plan)},
                         {"verdict", r.verdict},
                         {"feedback", v.decode_text(r.feedback)},
                         {"tokens_used", r.tokens_used},
                         {"truncated", r.truncated}};
        trace << j.dump() << "\n";
    }
    mdm::write_file(out_path(g, "reflect_trace.jsonl"), trace.str());
    std::cout << "rounds_used=" << res.rounds_used << " accepted="
              << (res.rounds.back().verdict == "accept" ? "yes" : "no") << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale masked diffusion engine"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--seed", g.seed, "global RNG seed");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--config", g.config_path, "JSON config file");

    std::string task = "grid", checkpoint, sampler = "confidence", kind = "stratified", in_path;
    int side = 4, colors = 4, block = 1, max_queries = 1, steps = 400, K = 8, n = 16, seeds = 20;
    int rounds = 4, seq_und = 256, seq_gen = 1024;
    double temperature = 0.0, threshold = 0.0, hit_prob = 1.0 / 16.0;
    bool paper = false;
    std::vector<std::string> samplers{"stratified", "uniform", "halton", "confidence"};
    std::vector<int> step_counts{1, 4, 16};
    std::vector<double> thresholds;

    auto* train = app.add_subcommand("train-toy", "train a toy model on a synthetic task");
    train->add_option("--task", task, "grid | grid-blocky | grid-planned | grid-luminance | find-cell | caption");
    train->add_option("--side", side);
    train->add_option("--colors", colors);
    train->add_option("--block", block);
    train->add_option("--max-queries", max_queries);
    train->add_option("--steps", steps, "training steps");

    auto* smp = app.add_subcommand("sample", "decode one sample from a checkpoint");
    smp->add_option("--checkpoint", checkpoint)->required();
    smp->add_option("--task", task);
    smp->add_option("--side", side);
    smp->add_option("--colors", colors);
    smp->add_option("--block", block);
    smp->add_option("--steps", K, "diffusion steps");
    smp->add_option("--sampler", sampler);
    smp->add_option("--temperature", temperature);
    smp->add_option("--threshold", threshold, "confidence threshold (enables adaptive decode)");

    auto* bs = app.add_subcommand("bench-samplers", "sampler quality benchmark");
    bs->add_option("--checkpoint", checkpoint)->required();
    bs->add_option("--task", task);
    bs->add_option("--side", side);
    bs->add_option("--colors", colors);
    bs->add_option("--block", block);
    bs->add_option("--samplers", samplers);
    bs->add_option("--K", step_counts);
    bs->add_option("--seeds", seeds);
    bs->add_option("--temperature", temperature);

    auto* bq = app.add_subcommand("bench-speed-quality", "steps/threshold sweep");
    bq->add_option("--checkpoint", checkpoint)->required();
    bq->add_option("--task", task);
    bq->add_option("--side", side);
    bq->add_option("--colors", colors);
    bq->add_option("--block", block);
    bq->add_option("--K", step_counts);
    bq->add_option("--thresholds", thresholds);
    bq->add_option("--seeds", seeds);
    bq->add_option("--temperature", temperature);

    auto* qb = app.add_subcommand("quantize-bbox", "quantize pixel boxes from JSONL");
    qb->add_option("--in", in_path)->required();

    auto* ma = app.add_subcommand("mot-account", "parameter and FLOP accounting");
    ma->add_flag("--paper", paper, "use the published full-scale dimensions");
    ma->add_option("--seq-und", seq_und);
    ma->add_option("--seq-gen", seq_gen);

    auto* po = app.add_subcommand("plot-order", "emit an unmask order as CSV + PPM");
    po->add_option("--kind", kind, "stratified | halton | uniform");
    po->add_option("--n", n, "grid side");

    auto* rd = app.add_subcommand("reflect-demo", "scripted reflection loop demo");
    rd->add_option("--rounds", rounds);
    rd->add_option("--hit-prob", hit_prob, "scripted per-cell target probability");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train_toy(g, task, side, colors, block, max_queries, steps);
        if (smp->parsed())
            return cmd_sample(g, checkpoint, task, side, colors, block, K, sampler, temperature,
                              threshold);
        if (bs->parsed())
            return cmd_bench_samplers(g, checkpoint, task, side, colors, block, samplers,
                                      step_counts, seeds, temperature);
        if (bq->parsed())
            return cmd_bench_speed_quality(g, checkpoint, task, side, colors, block, step_counts,
                                           thresholds, seeds, temperature);
        if (qb->parsed()) return cmd_quantize_bbox(g, in_path);
        if (ma->parsed()) return cmd_mot_account(g, paper, seq_und, seq_gen);
        if (po->parsed()) return cmd_plot_order(g, kind, n);
        if (rd->parsed()) return cmd_reflect_demo(g, rounds, hit_prob);
    } catch (const mdm::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}

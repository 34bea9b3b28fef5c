// SPDX-License-Identifier: Apache-2.0
//
// Runs the generate -> critique -> regenerate loop with a scripted planner
// whose image placement is random, and an oracle critic. More rounds, more
// accepted outputs.

#include <iostream>

#include "mdm/orchestrate.hpp"
#include "mdm/rng.hpp"
#include "mdm/scripted.hpp"

int main() {
    const auto v = mdm::Vocabulary::make(95, 4);
    const auto prompt = v.encode_text("1 b a");

    mdm::ScriptedPlannerConfig sp;
    sp.prompt_len = static_cast<int>(prompt.size());
    sp.label = v.char_token('b');
    sp.box = mdm::quantize(mdm::BBox{0.25, 0.25, 0.5, 0.5});
    sp.target_vq = v.vq_id(1);
    sp.background_vq = v.vq_id(0);
    sp.cell_hit_prob = 1.0 / 16.0;

    const auto model = mdm::scripted_planner(v, sp);
    const auto critic =
        mdm::grid_oracle_critic(sp.target_vq, sp.background_vq, v.encode_text("try again"));

    mdm::PlanningConfig pc;
    pc.grid = mdm::TimeGrid::uniform(4);
    pc.plan_slots = 6;
    pc.resolution = 64;
    pc.map.add(64, 16);
    pc.temperature = 1.0;

    for (int rounds : {1, 2, 4, 8}) {
        mdm::ReflectionConfig rc;
        rc.max_rounds = rounds;
        int accepted = 0;
        double used = 0.0;
        const int trials = 200;
        for (int i = 0; i < trials; ++i) {
            mdm::Rng rng(static_cast<std::uint64_t>(1000 + i));
            const auto res = mdm::reflect_loop(v, model, critic, prompt, rc, pc, rng);
            accepted += res.rounds.back().verdict == "accept";
            used += res.rounds_used;
        }
        std::cout << "N=" << rounds << "  success " << accepted << "/" << trials
                  << "  mean rounds used " << used / trials << "\n";
    }
    return 0;
}

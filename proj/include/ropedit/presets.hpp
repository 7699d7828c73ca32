#pragma once

// Named configuration presets. "paper-reference" carries the reference
// setup's published surface: 57 blocks (19 multi-stream + 38 single-stream),
// a 64x64 token grid, 50 denoising steps, guidance 3.5, the four-manipulation
// probing battery, R=7 / B=45, threshold 0.3, and the published layer sets.
// Head width stays at toy scale; nothing here claims weight compatibility.
// "toy" is the default desk-scale model.

#include <string>

#include "ropedit/editing.hpp"
#include "ropedit/masks.hpp"
#include "ropedit/mmdit.hpp"
#include "ropedit/probe.hpp"
#include "ropedit/rope.hpp"

namespace ropedit::presets {

struct Preset {
    std::string name;
    mmdit::ModelConfig config;
    std::vector<rope::Manipulation> battery;
    int reasoning_steps = 0;  // R
    int blend_steps = 0;      // B
    double threshold = masks::kDefaultBinarizeThreshold;
    probe::LayerSets reference_sets;  // empty unless the preset publishes sets
};

inline Preset toy() {
    Preset p;
    p.name = "toy";
    p.config = mmdit::ModelConfig{};  // 4+8 blocks, 16x16 grid, T=50
    p.battery = probe::default_battery(p.config.grid_h);
    p.reasoning_steps = editing::scaled_reasoning_steps(p.config.steps_T);
    p.blend_steps = editing::scaled_blend_steps(p.config.steps_T);
    for (int l = 0; l < p.config.layers(); ++l) p.reference_sets.L_all.push_back(l);
    return p;
}

inline Preset paper_reference() {
    Preset p;
    p.name = "paper-reference";
    p.config.n_multi = 19;
    p.config.n_single = 38;
    p.config.grid_h = 64;
    p.config.grid_w = 64;
    p.config.steps_T = 50;
    p.config.guidance_scale = 3.5;
    p.battery = probe::default_battery(p.config.grid_h);  // remove, (0,20), (10,10), (64,0)
    p.reasoning_steps = editing::kPaperReasoningSteps;    // 7
    p.blend_steps = editing::kPaperBlendSteps;            // 45
    p.threshold = 0.3;
    p.reference_sets.P = {1, 2, 4, 26, 30, 54, 55};
    p.reference_sets.C = {0, 7, 8, 9, 10, 18, 25, 28, 37, 42, 45, 50, 56};
    for (int l = 0; l < p.config.layers(); ++l) p.reference_sets.L_all.push_back(l);
    return p;
}

inline Preset by_name(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "paper-reference") return paper_reference();
    throw InputError("unknown preset '" + name + "' (available: toy, paper-reference)");
}

}  // namespace ropedit::presets

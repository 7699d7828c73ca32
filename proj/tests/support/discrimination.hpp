#pragma once

// Hand-constructed 2-layer model that separates the probing signal by
// construction: layer 0's queries/keys live entirely in the fastest rotary
// pair of each axis (so attention is driven by positional phase alignment),
// layer 1's live in the slowest pair (angles < 0.02 rad across the grid, so
// attention is driven by content similarity and barely notices key-side
// rope manipulation). Values, output projections, and feed-forwards stay at
// their standard initialization.

#include <random>

#include "ropedit/mmdit.hpp"

namespace ropedit_tests {

inline void restrict_projection_columns(ropedit::Tensor& w, const std::vector<int>& cols,
                                        double gain, std::mt19937& gen) {
    std::normal_distribution<float> dist;
    for (float& v : w.flat()) v = 0.0f;
    for (int c : cols) {
        double norm = 0.0;
        for (int i = 0; i < w.rows(); ++i) {
            w.at(i, c) = dist(gen);
            norm += static_cast<double>(w.at(i, c)) * w.at(i, c);
        }
        norm = std::sqrt(norm);
        for (int i = 0; i < w.rows(); ++i)
            w.at(i, c) = static_cast<float>(w.at(i, c) / norm * gain);
    }
}

inline ropedit::mmdit::Model discrimination_model(std::uint64_t seed = 424242) {
    ropedit::mmdit::ModelConfig cfg;
    cfg.n_multi = 1;
    cfg.n_single = 1;
    cfg.heads = 1;
    cfg.head_dim = 16;  // per-axis freqs 1, 1e-1, 1e-2, 1e-3
    cfg.text_len = 4;
    cfg.grid_h = 16;
    cfg.grid_w = 16;
    cfg.steps_T = 10;
    ropedit::mmdit::Model m = ropedit::mmdit::init_model(cfg, seed);

    std::mt19937 gen(static_cast<unsigned>(seed));
    const double gain = 3.0;
    // fastest pair of each axis half: dims {0,1} (row) and {8,9} (col)
    restrict_projection_columns(m.blocks[0].wq_img, {0, 1, 8, 9}, gain, gen);
    restrict_projection_columns(m.blocks[0].wk_img, {0, 1, 8, 9}, gain, gen);
    // slowest pair of each axis half: dims {6,7} and {14,15}
    restrict_projection_columns(m.blocks[1].wq_img, {6, 7, 14, 15}, gain, gen);
    restrict_projection_columns(m.blocks[1].wk_img, {6, 7, 14, 15}, gain, gen);
    return m;
}

}  // namespace ropedit_tests

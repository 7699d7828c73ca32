#pragma once

// Layer-wise positional-dependency probing: sweep (prompt x seed x layer x
// manipulation), score each probe sample against its unmanipulated baseline
// with PSNR, aggregate per layer, and classify layers into the
// position-dependent set P and the content-similarity set C.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ropedit/errors.hpp"
#include "ropedit/masks.hpp"
#include "ropedit/mmdit.hpp"
#include "ropedit/rope.hpp"

namespace ropedit::probe {

inline constexpr double kPsnrCapDb = 100.0;

// 10*log10(1/MSE) over all grid values (peak 1.0), capped at kPsnrCapDb so
// identical images aggregate finitely.
inline double psnr(const mmdit::ImageGrid& a, const mmdit::ImageGrid& b) {
    if (a.h != b.h || a.w != b.w || a.channels != b.channels) {
        throw DimensionError("psnr shape mismatch: " + std::to_string(a.h) + "x" +
                             std::to_string(a.w) + "x" + std::to_string(a.channels) + " vs " +
                             std::to_string(b.h) + "x" + std::to_string(b.w) + "x" +
                             std::to_string(b.channels));
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = static_cast<double>(a.values[i]) - b.values[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.values.size());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// PSNR restricted to cells where the mask is true (all channels of the cell).
inline double psnr_masked(const mmdit::ImageGrid& a, const mmdit::ImageGrid& b,
                          const masks::BinaryMask& mask) {
    if (a.h != b.h || a.w != b.w || a.channels != b.channels) {
        throw DimensionError("psnr_masked: image shape mismatch");
    }
    if (mask.h != a.h || mask.w != a.w) {
        throw DimensionError("psnr_masked: mask shape mismatch");
    }
    double mse = 0.0;
    std::size_t n = 0;
    for (int r = 0; r < a.h; ++r) {
        for (int c = 0; c < a.w; ++c) {
            if (!mask.at(r, c)) continue;
            for (int ch = 0; ch < a.channels; ++ch) {
                const double d = static_cast<double>(a.at(r, c, ch)) - b.at(r, c, ch);
                mse += d * d;
                ++n;
            }
        }
    }
    if (n == 0) throw EmptyMaskError("psnr_masked: empty mask");
    mse /= static_cast<double>(n);
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// -------------------------------------------------------------------- types

struct ProbeSpec {
    std::vector<std::string> prompts;                 // N >= 1
    std::vector<std::uint64_t> seeds;                 // M >= 1
    std::vector<rope::Manipulation> manipulations;    // Keep excluded; it is the baseline
    std::vector<int> layers;                          // empty = all layers

    void validate(int model_layers) const {
        if (prompts.empty()) throw ConfigError("probe spec needs at least one prompt");
        if (seeds.empty()) throw ConfigError("probe spec needs at least one seed");
        if (manipulations.empty()) throw ConfigError("probe spec needs at least one manipulation");
        for (const auto& m : manipulations) {
            if (m.kind == rope::Manipulation::Kind::Keep) {
                throw ConfigError("Keep is the baseline and cannot be probed");
            }
        }
        for (int l : layers) {
            if (l < 0 || l >= model_layers) {
                throw ConfigError("probe layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(model_layers) + ")");
            }
        }
    }
};

// The default manipulation battery, scaled to the model grid: the large shift
// moves by a full grid height.
inline std::vector<rope::Manipulation> default_battery(int grid_h) {
    return {rope::Manipulation::remove(), rope::Manipulation::shift(0, 20),
            rope::Manipulation::shift(10, 10), rope::Manipulation::shift(grid_h, 0)};
}

struct ProbeRow {
    int layer = 0;
    rope::Manipulation manipulation;
    int prompt_idx = 0;
    std::uint64_t seed = 0;
    double psnr_db = 0.0;
};

struct ProbeReport {
    std::vector<ProbeRow> rows;  // layer-major, then manipulation, prompt, seed

    // Mean PSNR per (layer, manipulation label).
    std::map<std::pair<int, std::string>, double> mean_by_layer_manipulation() const {
        std::map<std::pair<int, std::string>, std::pair<double, int>> acc;
        for (const auto& r : rows) {
            auto& slot = acc[{r.layer, rope::to_string(r.manipulation)}];
            slot.first += r.psnr_db;
            slot.second += 1;
        }
        std::map<std::pair<int, std::string>, double> out;
        for (const auto& [k, v] : acc) out[k] = v.first / v.second;
        return out;
    }

    // Mean PSNR per layer across all manipulations and runs.
    std::map<int, double> mean_by_layer() const {
        std::map<int, std::pair<double, int>> acc;
        for (const auto& r : rows) {
            auto& slot = acc[r.layer];
            slot.first += r.psnr_db;
            slot.second += 1;
        }
        std::map<int, double> out;
        for (const auto& [k, v] : acc) out[k] = v.first / v.second;
        return out;
    }
};

struct LayerSets {
    std::vector<int> P;      // position-dependent
    std::vector<int> C;      // content-similarity-dependent
    std::vector<int> L_all;  // every layer
};

// ---------------------------------------------------------------- run_probe

// One baseline sample per (prompt, seed), then per (layer, manipulation) a
// sample identical except that single layer's key-side rope manipulation.
// Query-side rope is never touched. Embarrassingly parallel: every work item
// is a pure function of its inputs, results land in preassigned slots, so
// jobs=N output is bit-identical to serial.
inline ProbeReport run_probe(const mmdit::Model& model, const ProbeSpec& spec, int jobs = 1) {
    spec.validate(model.cfg.layers());
    std::vector<int> layers = spec.layers;
    if (layers.empty()) {
        layers.resize(static_cast<std::size_t>(model.cfg.layers()));
        for (int l = 0; l < model.cfg.layers(); ++l) layers[static_cast<std::size_t>(l)] = l;
    }

    const int n_prompts = static_cast<int>(spec.prompts.size());
    const int n_seeds = static_cast<int>(spec.seeds.size());
    const int n_runs = n_prompts * n_seeds;

    std::vector<mmdit::PromptEmbedding> embeddings;
    embeddings.reserve(static_cast<std::size_t>(n_prompts));
    for (const auto& p : spec.prompts) embeddings.push_back(mmdit::encode_prompt(p, model.cfg));

    auto sample_image = [&](int prompt_idx, std::uint64_t seed,
                            const std::vector<rope::Manipulation>& manips) {
        const auto traj = mmdit::euler_sample(model, embeddings[static_cast<std::size_t>(prompt_idx)],
                                              seed, model.cfg.steps_T, nullptr, manips);
        return mmdit::decode(traj.back());
    };

    // Phase 1: baselines, one per (prompt, seed).
    std::vector<mmdit::ImageGrid> baselines(static_cast<std::size_t>(n_runs));
    auto run_items = [&](int count, auto&& fn) {
        const int workers = std::max(1, std::min(jobs, count));
        if (workers == 1) {
            for (int i = 0; i < count; ++i) fn(i);
            return;
        }
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (int i = w; i < count; i += workers) fn(i);
            });
        }
        for (auto& th : pool) th.join();
    };

    run_items(n_runs, [&](int i) {
        const int pi = i / n_seeds;
        const std::uint64_t seed = spec.seeds[static_cast<std::size_t>(i % n_seeds)];
        baselines[static_cast<std::size_t>(i)] = sample_image(pi, seed, {});
    });

    // Phase 2: probes, one per (layer, manipulation, prompt, seed).
    const int n_manips = static_cast<int>(spec.manipulations.size());
    const int n_items = static_cast<int>(layers.size()) * n_manips * n_runs;
    ProbeReport report;
    report.rows.resize(static_cast<std::size_t>(n_items));

    run_items(n_items, [&](int idx) {
        int rest = idx;
        const int run = rest % n_runs;
        rest /= n_runs;
        const int mi = rest % n_manips;
        const int li = rest / n_manips;

        const int layer = layers[static_cast<std::size_t>(li)];
        const rope::Manipulation& manip = spec.manipulations[static_cast<std::size_t>(mi)];
        const int pi = run / n_seeds;
        const std::uint64_t seed = spec.seeds[static_cast<std::size_t>(run % n_seeds)];

        std::vector<rope::Manipulation> manips(static_cast<std::size_t>(model.cfg.layers()));
        manips[static_cast<std::size_t>(layer)] = manip;
        const mmdit::ImageGrid probe_img = sample_image(pi, seed, manips);

        ProbeRow& row = report.rows[static_cast<std::size_t>(idx)];
        row.layer = layer;
        row.manipulation = manip;
        row.prompt_idx = pi;
        row.seed = seed;
        row.psnr_db = psnr(baselines[static_cast<std::size_t>(run)], probe_img);
    });
    return report;
}

// ----------------------------------------------------------------- classify

// Rank layers by mean PSNR ascending (ties by layer index): the lowest
// ceil(p_frac*L) become P, the highest ceil(c_frac*L) become C. The fractions
// default to the published set sizes (7/57 and 13/57). When the ceilings of
// both fractions would overlap, C yields: n_c = min(ceil(c*L), L - n_p).
inline LayerSets classify_layers(const std::map<int, double>& mean_psnr_by_layer, double p_frac,
                                 double c_frac) {
    if (!(p_frac > 0.0) || !(c_frac > 0.0) || p_frac + c_frac > 1.0) {
        throw ConfigError("classify_layers: need 0 < p_frac, c_frac and p_frac + c_frac <= 1");
    }
    const int L = static_cast<int>(mean_psnr_by_layer.size());
    if (L < 2) throw ConfigError("classify_layers: need at least 2 layers, got " + std::to_string(L));

    std::vector<std::pair<double, int>> ranked;  // (mean psnr, layer)
    ranked.reserve(static_cast<std::size_t>(L));
    for (const auto& [layer, mean] : mean_psnr_by_layer) ranked.emplace_back(mean, layer);
    std::sort(ranked.begin(), ranked.end());

    const int n_p = static_cast<int>(std::ceil(p_frac * L));
    const int n_c = std::min(static_cast<int>(std::ceil(c_frac * L)), L - n_p);

    LayerSets sets;
    for (int i = 0; i < n_p; ++i) sets.P.push_back(ranked[static_cast<std::size_t>(i)].second);
    for (int i = L - n_c; i < L; ++i) sets.C.push_back(ranked[static_cast<std::size_t>(i)].second);
    for (const auto& [layer, mean] : mean_psnr_by_layer) sets.L_all.push_back(layer);
    std::sort(sets.P.begin(), sets.P.end());
    std::sort(sets.C.begin(), sets.C.end());
    std::sort(sets.L_all.begin(), sets.L_all.end());
    return sets;
}

inline LayerSets classify_layers(const ProbeReport& report, double p_frac, double c_frac) {
    return classify_layers(report.mean_by_layer(), p_frac, c_frac);
}

inline constexpr double kDefaultPFrac = 7.0 / 57.0;
inline constexpr double kDefaultCFrac = 13.0 / 57.0;

// ---------------------------------------------------------------------- CSV

namespace detail {

inline std::string format_db(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

inline std::string rows_csv(const ProbeReport& report) {
    std::string out = "layer,manipulation,prompt_idx,seed,psnr_db\n";
    for (const auto& r : report.rows) {
        out += std::to_string(r.layer) + "," + rope::to_string(r.manipulation) + "," +
               std::to_string(r.prompt_idx) + "," + std::to_string(r.seed) + "," +
               detail::format_db(r.psnr_db) + "\n";
    }
    return out;
}

inline std::string aggregate_csv(const ProbeReport& report) {
    std::string out = "layer,mean_psnr_db\n";
    for (const auto& [layer, mean] : report.mean_by_layer()) {
        out += std::to_string(layer) + "," + detail::format_db(mean) + "\n";
    }
    return out;
}

// Per-(layer, manipulation) means; the plotting contract for dependency scatters.
inline std::string scatter_csv(const ProbeReport& report) {
    std::string out = "layer,manipulation,mean_psnr_db\n";
    for (const auto& [key, mean] : report.mean_by_layer_manipulation()) {
        out += std::to_string(key.first) + "," + key.second + "," + detail::format_db(mean) + "\n";
    }
    return out;
}

// Parse an aggregate CSV (layer,mean_psnr_db). Errors name the offending line.
inline std::map<int, double> parse_aggregate_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::map<int, double> out;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != "layer,mean_psnr_db") {
                throw InputError("aggregate CSV line 1: expected header 'layer,mean_psnr_db'");
            }
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw InputError("aggregate CSV line " + std::to_string(lineno) + ": missing comma");
        }
        try {
            const int layer = std::stoi(line.substr(0, comma));
            const double mean = std::stod(line.substr(comma + 1));
            out[layer] = mean;
        } catch (const std::exception&) {
            throw InputError("aggregate CSV line " + std::to_string(lineno) + ": cannot parse '" +
                             line + "'");
        }
    }
    if (out.empty()) throw InputError("aggregate CSV has no data rows");
    return out;
}

// Prompt corpus: one prompt per line, blank lines skipped.
inline std::vector<std::string> parse_corpus(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::string> prompts;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        bool blank = true;
        for (char c : line) {
            if (c != ' ' && c != '\t') {
                blank = false;
                break;
            }
        }
        if (!blank) prompts.push_back(line);
    }
    return prompts;
}

}  // namespace ropedit::probe

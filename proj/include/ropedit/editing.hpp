#pragma once

// Attention-injection editing: lockstep paired (source, edit) generation with
// per-layer, per-timestep K/V substitution. Both streams advance inside one
// step function per timestep; the source stream's K/V are captured layer by
// layer and the edit stream's corresponding layer substitutes them according
// to the active rules. The source stream is never perturbed, and text-token
// Q/K/V are never substituted.
//
// Masks act at token granularity: a token is in or out, substitutions are
// selections, never interpolation.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ropedit/errors.hpp"
#include "ropedit/masks.hpp"
#include "ropedit/mmdit.hpp"
#include "ropedit/tensor.hpp"

namespace ropedit::editing {

// ---------------------------------------------------------------- value maps

// Relocate the source object's values by a fixed offset; cells that are
// neither source-object nor target keep the edit stream's own values, so the
// vacated region is inpainted from the editing prompt.
struct MoveMap {
    int dr = 0;
    int dc = 0;
    masks::BinaryMask object;
};

// Copy a src_h x src_w source grid into the edit grid at (row, col).
struct PasteMap {
    int row = 0;
    int col = 0;
    int src_h = 0;
    int src_w = 0;
};

using ValueMap = std::variant<MoveMap, PasteMap>;

inline Tensor map_values(const Tensor& v_edit, const Tensor& v_src, const MoveMap& m) {
    const int h = m.object.h, w = m.object.w;
    if (v_edit.rows() != h * w || v_src.rows() != h * w || v_edit.cols() != v_src.cols()) {
        throw DimensionError("map_values: tensors " + shape_str(v_edit) + " / " +
                             shape_str(v_src) + " do not match " + std::to_string(h) + "x" +
                             std::to_string(w) + " object mask");
    }
    Tensor out = v_edit;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!m.object.at(r, c)) continue;
            const int tr = r + m.dr, tc = c + m.dc;
            if (tr < 0 || tr >= h || tc < 0 || tc >= w) {
                throw ConfigError("map_values: object cell (" + std::to_string(r) + "," +
                                  std::to_string(c) + ") moves out of bounds by (" +
                                  std::to_string(m.dr) + "," + std::to_string(m.dc) + ")");
            }
            const float* src = v_src.row(r * w + c);
            float* dst = out.row(tr * w + tc);
            for (int ch = 0; ch < v_src.cols(); ++ch) dst[ch] = src[ch];
        }
    }
    return out;
}

inline Tensor paste_values(const Tensor& v_edit, const Tensor& v_src, const PasteMap& m,
                           int edit_h, int edit_w) {
    if (v_src.rows() != m.src_h * m.src_w) {
        throw DimensionError("paste_values: source " + shape_str(v_src) + " does not match " +
                             std::to_string(m.src_h) + "x" + std::to_string(m.src_w));
    }
    if (v_edit.rows() != edit_h * edit_w || v_edit.cols() != v_src.cols()) {
        throw DimensionError("paste_values: edit tensor " + shape_str(v_edit) +
                             " does not match edit grid / channels");
    }
    if (m.row < 0 || m.col < 0 || m.row + m.src_h > edit_h || m.col + m.src_w > edit_w) {
        throw ConfigError("paste_values: rectangle " + std::to_string(m.src_h) + "x" +
                          std::to_string(m.src_w) + " at (" + std::to_string(m.row) + "," +
                          std::to_string(m.col) + ") overflows " + std::to_string(edit_h) + "x" +
                          std::to_string(edit_w));
    }
    Tensor out = v_edit;
    for (int r = 0; r < m.src_h; ++r) {
        for (int c = 0; c < m.src_w; ++c) {
            const float* src = v_src.row(r * m.src_w + c);
            float* dst = out.row((m.row + r) * edit_w + (m.col + c));
            for (int ch = 0; ch < v_src.cols(); ++ch) dst[ch] = src[ch];
        }
    }
    return out;
}

// ------------------------------------------------------------------- rules

struct KvFull {};
struct KvMasked {
    masks::BinaryMask mask;  // true: keep edit K/V, false: inject src
};
struct VMasked {
    masks::BinaryMask mask;  // true: inject src V, false: keep edit
};
struct VMapped {
    ValueMap map;
};

using InjectionMode = std::variant<KvFull, KvMasked, VMasked, VMapped>;

// Active for timesteps t_lo <= t <= t_hi (sampling order counts t down from
// steps_T). An empty range (t_lo > t_hi) is a valid no-op rule.
struct InjectionRule {
    std::vector<int> layers;
    int t_hi = 0;
    int t_lo = 0;
    InjectionMode mode;

    bool active_at(int t) const { return t_lo <= t && t <= t_hi; }
    bool covers_layer(int layer) const {
        for (int l : layers)
            if (l == layer) return true;
        return false;
    }
};

inline void validate_rules(const std::vector<InjectionRule>& rules, int model_layers, int steps_T) {
    for (const auto& r : rules) {
        for (int l : r.layers) {
            if (l < 0 || l >= model_layers) {
                throw ConfigError("injection rule layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(model_layers) + ")");
            }
        }
        if (r.t_lo <= r.t_hi && (r.t_lo < 1 || r.t_hi > steps_T)) {
            throw ConfigError("injection rule timesteps [" + std::to_string(r.t_hi) + ".." +
                              std::to_string(r.t_lo) + "] outside [1, " + std::to_string(steps_T) +
                              "]");
        }
    }
}

// Paper defaults, as fractions of the 50-step schedule.
inline constexpr int kPaperReasoningSteps = 7;   // R
inline constexpr int kPaperBlendSteps = 45;      // B
inline constexpr int kPaperTotalSteps = 50;

inline int scaled_reasoning_steps(int steps_T) {
    const int r = static_cast<int>(std::lround(static_cast<double>(kPaperReasoningSteps) * steps_T /
                                               kPaperTotalSteps));
    return std::max(2, r);
}

inline int scaled_blend_steps(int steps_T) {
    return static_cast<int>(std::lround(static_cast<double>(kPaperBlendSteps) * steps_T /
                                        kPaperTotalSteps));
}

// ------------------------------------------------------------- paired runs

// Chained FNV over every state in a trajectory, initial noise included.
inline std::uint64_t trajectory_checksum(const std::vector<mmdit::LatentGrid>& traj) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& z : traj) h = io::fnv1a_floats(z.values.flat(), h);
    return h;
}

// Request to record one stream's attention weights at one timestep.
struct AttentionCapture {
    int t = -1;
    bool from_src = true;
    std::vector<int> layers;
    std::map<int, Tensor> attn;  // filled by the run
};

class PairedRun {
public:
    PairedRun(const mmdit::Model& model, const mmdit::PromptEmbedding& prompt_src,
              const mmdit::PromptEmbedding& prompt_edit, std::uint64_t seed, int steps_T,
              int src_h = 0, int src_w = 0)
        : prompt_src_(prompt_src), prompt_edit_(prompt_edit) {
        if (steps_T < 1) throw ConfigError("PairedRun: steps_T must be >= 1");
        model_ = model;
        model_.cfg.steps_T = steps_T;
        const int eh = model.cfg.grid_h, ew = model.cfg.grid_w;
        const int sh = src_h > 0 ? src_h : eh;
        const int sw = src_w > 0 ? src_w : ew;
        z_init_src_ = mmdit::initial_noise(model_.cfg, seed, sh, sw);
        z_init_edit_ = (sh == eh && sw == ew) ? z_init_src_
                                              : mmdit::initial_noise(model_.cfg, seed, eh, ew);
        reset();
    }

    int steps_T() const { return model_.cfg.steps_T; }
    int t() const { return t_; }
    bool done() const { return t_ < 1; }
    const mmdit::LatentGrid& z_src() const { return z_src_; }
    const mmdit::LatentGrid& z_edit() const { return z_edit_; }
    std::uint64_t src_traj_checksum() const { return src_ck_; }
    std::uint64_t edit_traj_checksum() const { return edit_ck_; }
    const mmdit::Model& model() const { return model_; }

    // Restart both streams from the saved initial noise ("reasoning" restarts).
    void reset() {
        z_src_ = z_init_src_;
        z_edit_ = z_init_edit_;
        t_ = model_.cfg.steps_T;
        src_ck_ = io::fnv1a_floats(z_src_.values.flat());
        edit_ck_ = io::fnv1a_floats(z_edit_.values.flat());
    }

    // Advance both streams one timestep: the src pass records K/V for the
    // layers rules need, then the edit pass substitutes per the active rules.
    void step(const std::vector<InjectionRule>& rules, AttentionCapture* capture = nullptr) {
        if (done()) throw ConfigError("PairedRun::step past t=1");
        validate_rules(rules, model_.cfg.layers(), model_.cfg.steps_T);
        const int t = t_;

        std::vector<const InjectionRule*> active;
        for (const auto& r : rules) {
            if (r.active_at(t) && !r.layers.empty()) active.push_back(&r);
        }

        std::map<int, std::pair<Tensor, Tensor>> src_kv;  // layer -> (K_img, V_img)
        mmdit::ForwardHooks src_hooks;
        if (!active.empty()) {
            src_hooks.kv_tap = [&](int layer, const Tensor& k, const Tensor& v) {
                for (const auto* r : active) {
                    if (r->covers_layer(layer)) {
                        src_kv.emplace(layer, std::make_pair(k, v));
                        return;
                    }
                }
            };
        }
        const bool cap_src = capture && capture->from_src && capture->t == t;
        const bool cap_edit = capture && !capture->from_src && capture->t == t;
        if (cap_src) {
            src_hooks.attn_sink = [&](int layer, const Tensor& attn) {
                for (int l : capture->layers) {
                    if (l == layer) {
                        capture->attn.emplace(layer, attn);
                        return;
                    }
                }
            };
        }
        const mmdit::LatentGrid v_src = mmdit::velocity(model_, z_src_, t, prompt_src_, &src_hooks);

        mmdit::ForwardHooks edit_hooks;
        if (!active.empty()) {
            edit_hooks.kv_override = [&](int layer, Tensor& k, Tensor& v) {
                for (const auto* r : active) {
                    if (!r->covers_layer(layer)) continue;
                    const auto it = src_kv.find(layer);
                    if (it == src_kv.end()) {
                        throw InjectionError(t, layer, "no source K/V captured");
                    }
                    apply_mode_(r->mode, it->second.first, it->second.second, k, v, t, layer);
                }
            };
        }
        if (cap_edit) {
            edit_hooks.attn_sink = [&](int layer, const Tensor& attn) {
                for (int l : capture->layers) {
                    if (l == layer) {
                        capture->attn.emplace(layer, attn);
                        return;
                    }
                }
            };
        }
        const mmdit::LatentGrid v_edit =
            mmdit::velocity(model_, z_edit_, t, prompt_edit_, &edit_hooks);

        const double dsigma =
            mmdit::sigma_at(t - 1, model_.cfg.steps_T) - mmdit::sigma_at(t, model_.cfg.steps_T);
        mmdit::euler_step_inplace(z_src_, v_src, dsigma);
        mmdit::euler_step_inplace(z_edit_, v_edit, dsigma);
        src_ck_ = io::fnv1a_floats(z_src_.values.flat(), src_ck_);
        edit_ck_ = io::fnv1a_floats(z_edit_.values.flat(), edit_ck_);
        --t_;
    }

    void run_to_end(const std::vector<InjectionRule>& rules, AttentionCapture* capture = nullptr) {
        while (!done()) step(rules, capture);
    }

private:
    void apply_mode_(const InjectionMode& mode, const Tensor& k_src, const Tensor& v_src,
                     Tensor& k_edit, Tensor& v_edit, int t, int layer) const {
        const int eh = z_edit_.h, ew = z_edit_.w;
        if (std::holds_alternative<KvFull>(mode)) {
            if (!k_src.same_shape(k_edit)) {
                throw InjectionError(t, layer, "source K " + shape_str(k_src) +
                                                   " vs edit K " + shape_str(k_edit));
            }
            k_edit = k_src;
            v_edit = v_src;
            return;
        }
        if (const auto* km = std::get_if<KvMasked>(&mode)) {
            check_mask_(km->mask, eh, ew, t, layer);
            if (!k_src.same_shape(k_edit)) {
                throw InjectionError(t, layer, "source K " + shape_str(k_src) +
                                                   " vs edit K " + shape_str(k_edit));
            }
            select_rows_(k_edit, k_src, km->mask, /*true_keeps_edit=*/true);
            select_rows_(v_edit, v_src, km->mask, /*true_keeps_edit=*/true);
            return;
        }
        if (const auto* vm = std::get_if<VMasked>(&mode)) {
            check_mask_(vm->mask, eh, ew, t, layer);
            if (!v_src.same_shape(v_edit)) {
                throw InjectionError(t, layer, "source V " + shape_str(v_src) +
                                                   " vs edit V " + shape_str(v_edit));
            }
            select_rows_(v_edit, v_src, vm->mask, /*true_keeps_edit=*/false);
            return;
        }
        const auto& map = std::get<VMapped>(mode).map;
        try {
            if (const auto* mv = std::get_if<MoveMap>(&map)) {
                v_edit = map_values(v_edit, v_src, *mv);
            } else {
                v_edit = paste_values(v_edit, v_src, std::get<PasteMap>(map), eh, ew);
            }
        } catch (const DimensionError& e) {
            throw InjectionError(t, layer, e.what());
        }
    }

    static void select_rows_(Tensor& edit, const Tensor& src, const masks::BinaryMask& mask,
                             bool true_keeps_edit) {
        for (int i = 0; i < edit.rows(); ++i) {
            const bool bit = mask.bits[static_cast<std::size_t>(i)] != 0;
            if (bit == true_keeps_edit) continue;
            const float* s = src.row(i);
            float* d = edit.row(i);
            for (int j = 0; j < edit.cols(); ++j) d[j] = s[j];
        }
    }

    static void check_mask_(const masks::BinaryMask& mask, int h, int w, int t, int layer) {
        if (mask.h != h || mask.w != w) {
            throw InjectionError(t, layer, "mask " + std::to_string(mask.h) + "x" +
                                               std::to_string(mask.w) + " vs grid " +
                                               std::to_string(h) + "x" + std::to_string(w));
        }
    }

    mmdit::Model model_;
    mmdit::PromptEmbedding prompt_src_, prompt_edit_;
    mmdit::LatentGrid z_init_src_, z_init_edit_;
    mmdit::LatentGrid z_src_, z_edit_;
    int t_ = 0;
    std::uint64_t src_ck_ = 0, edit_ck_ = 0;
};

// Run both streams to completion under a fixed rule list.
struct PairedResult {
    mmdit::ImageGrid x_src;
    mmdit::ImageGrid x_edit;
    mmdit::LatentGrid z0_src;
    mmdit::LatentGrid z0_edit;
    std::uint64_t src_traj_checksum = 0;
    std::uint64_t edit_traj_checksum = 0;
};

inline PairedResult run_paired(const mmdit::Model& model, const std::string& prompt_src,
                               const std::string& prompt_edit, std::uint64_t seed,
                               const std::vector<InjectionRule>& rules, int steps_T = 0,
                               int src_h = 0, int src_w = 0) {
    const int T = steps_T > 0 ? steps_T : model.cfg.steps_T;
    validate_rules(rules, model.cfg.layers(), T);
    PairedRun run(model, mmdit::encode_prompt(prompt_src, model.cfg),
                  mmdit::encode_prompt(prompt_edit, model.cfg), seed, T, src_h, src_w);
    run.run_to_end(rules);
    PairedResult out;
    out.z0_src = run.z_src();
    out.z0_edit = run.z_edit();
    out.x_src = mmdit::decode(out.z0_src);
    out.x_edit = mmdit::decode(out.z0_edit);
    out.src_traj_checksum = run.src_traj_checksum();
    out.edit_traj_checksum = run.edit_traj_checksum();
    return out;
}

// -------------------------------------------------------------------- tasks

struct TaskParams {
    int steps_T = 0;          // 0: model default
    int reasoning_steps = 0;  // 0: scaled paper default R
    int blend_steps = -1;     // <0: scaled paper default B
    double threshold = masks::kDefaultBinarizeThreshold;
    int sample_points = 4;
    bool head_average = true;
    int connectivity = 4;

    int resolve_T(const mmdit::ModelConfig& cfg) const {
        return steps_T > 0 ? steps_T : cfg.steps_T;
    }
    int resolve_R(int T) const {
        const int r = reasoning_steps > 0 ? reasoning_steps : scaled_reasoning_steps(T);
        if (r >= T) throw ConfigError("reasoning steps R=" + std::to_string(r) +
                                      " must be < steps_T=" + std::to_string(T));
        return r;
    }
    int resolve_B(int T) const {
        const int b = blend_steps >= 0 ? blend_steps : scaled_blend_steps(T);
        if (b > T) throw ConfigError("blend steps B=" + std::to_string(b) +
                                     " must be <= steps_T=" + std::to_string(T));
        return b;
    }
};

struct EditResult {
    mmdit::ImageGrid x_src;
    mmdit::ImageGrid x_edit;
    std::optional<masks::BinaryMask> object_mask;   // M_obj
    std::optional<masks::BinaryMask> coarse_fg;     // M_fg
    std::optional<masks::BinaryMask> refined_fg;    // M_fg after refinement
    std::uint64_t src_traj_checksum = 0;
    std::uint64_t edit_traj_checksum = 0;
};

inline constexpr std::uint64_t kPointStream = 0x504f494eull;

namespace detail {

// Sample the source stream alone for the first R steps and return the
// largest-component binary mask of the given text token's cross-attention
// heatmap at the last reasoning step.
inline masks::BinaryMask reason_mask_from_src(const mmdit::Model& model,
                                              const mmdit::PromptEmbedding& prompt,
                                              std::uint64_t seed, int T, int R,
                                              const std::vector<int>& layers, int token_index,
                                              const TaskParams& params,
                                              masks::MaskProvenance provenance) {
    mmdit::Model scoped = model;
    scoped.cfg.steps_T = T;
    mmdit::LatentGrid z = mmdit::initial_noise(scoped.cfg, seed, scoped.cfg.grid_h,
                                               scoped.cfg.grid_w);
    std::map<int, Tensor> attn;
    for (int t = T; t >= T - R + 1; --t) {
        mmdit::ForwardHooks hooks;
        const bool last = t == T - R + 1;
        if (last) {
            hooks.attn_sink = [&](int layer, const Tensor& a) {
                for (int l : layers) {
                    if (l == layer) {
                        attn.emplace(layer, a);
                        return;
                    }
                }
            };
        }
        const mmdit::LatentGrid v = mmdit::velocity(scoped, z, t, prompt, last ? &hooks : nullptr);
        mmdit::euler_step_inplace(z, v, mmdit::sigma_at(t - 1, T) - mmdit::sigma_at(t, T));
    }
    const auto heat = masks::extract_token_heatmap(attn, token_index, layers, params.head_average,
                                                   scoped.cfg.text_len, scoped.cfg.grid_h,
                                                   scoped.cfg.grid_w);
    masks::BinaryMask coarse = masks::largest_component(
        masks::binarize(heat, params.threshold), params.connectivity);
    coarse.provenance = provenance;
    return coarse;
}

}  // namespace detail

// Reasoning-before-generation object addition. Phase 1 injects the source
// K/V into the position-dependent layers for the first R steps, reads the
// object token's cross-attention mask out of the edit stream at the last of
// those steps, and derives M_obj. Phase 2 restarts both streams from the
// saved noise and runs all T steps with the masked injection, so source
// information only reaches the regions irrelevant to the new object.
inline EditResult edit_object_addition(const mmdit::Model& model, const std::string& p_src,
                                       const std::string& p_edit, int object_token_index,
                                       std::uint64_t seed, const std::vector<int>& layers_P,
                                       const TaskParams& params = {}) {
    const int T = params.resolve_T(model.cfg);
    const int R = params.resolve_R(T);
    const auto prompt_src = mmdit::encode_prompt(p_src, model.cfg);
    const auto prompt_edit = mmdit::encode_prompt(p_edit, model.cfg);
    if (object_token_index < 0 ||
        object_token_index >= static_cast<int>(prompt_edit.token_ids.size())) {
        throw InputError("object token index " + std::to_string(object_token_index) +
                         " not present in the editing prompt's " +
                         std::to_string(prompt_edit.token_ids.size()) + " tokens");
    }

    PairedRun run(model, prompt_src, prompt_edit, seed, T);

    // Phase 1: full K/V injection in P while the attention mask forms.
    std::vector<InjectionRule> reasoning_rules{{layers_P, T, T - R + 1, KvFull{}}};
    AttentionCapture capture;
    capture.t = T - R + 1;
    capture.from_src = false;
    capture.layers = layers_P;
    for (int i = 0; i < R; ++i) run.step(reasoning_rules, &capture);

    const auto heat = masks::extract_token_heatmap(capture.attn, object_token_index, layers_P,
                                                   params.head_average, model.cfg.text_len,
                                                   model.cfg.grid_h, model.cfg.grid_w);
    masks::BinaryMask m_obj = masks::largest_component(
        masks::binarize(heat, params.threshold), params.connectivity);
    m_obj.provenance = masks::MaskProvenance::object;

    // Phase 2: restart and run all steps with the masked blend.
    run.reset();
    std::vector<InjectionRule> rules{{layers_P, T, 1, KvMasked{m_obj}}};
    run.run_to_end(rules);

    EditResult out;
    out.x_src = mmdit::decode(run.z_src());
    out.x_edit = mmdit::decode(run.z_edit());
    out.object_mask = std::move(m_obj);
    out.src_traj_checksum = run.src_traj_checksum();
    out.edit_traj_checksum = run.edit_traj_checksum();
    return out;
}

// Non-rigid editing: full K/V injection in the content-similarity layers for
// every step.
inline EditResult edit_non_rigid(const mmdit::Model& model, const std::string& p_src,
                                 const std::string& p_edit, std::uint64_t seed,
                                 const std::vector<int>& layers_C,
                                 const TaskParams& params = {}) {
    const int T = params.resolve_T(model.cfg);
    const std::vector<InjectionRule> rules{{layers_C, T, 1, KvFull{}}};
    const PairedResult r = run_paired(model, p_src, p_edit, seed, rules, T);
    EditResult out;
    out.x_src = r.x_src;
    out.x_edit = r.x_edit;
    out.src_traj_checksum = r.src_traj_checksum;
    out.edit_traj_checksum = r.edit_traj_checksum;
    return out;
}

// Background replacement: derive the coarse foreground mask from the source
// stream's cross-attention, refine it through the pluggable refiner, then
// value-blend across all layers until step T-B+1; the remaining steps run
// uninjected.
inline EditResult edit_background(const mmdit::Model& model, const std::string& p_src,
                                  const std::string& p_edit, std::uint64_t seed,
                                  const masks::MaskRefiner& refiner, int fg_token_index,
                                  const std::vector<int>& layers_P,
                                  const TaskParams& params = {}) {
    const int T = params.resolve_T(model.cfg);
    const int R = params.resolve_R(T);
    const int B = params.resolve_B(T);
    const auto prompt_src = mmdit::encode_prompt(p_src, model.cfg);
    if (fg_token_index < 0 || fg_token_index >= static_cast<int>(prompt_src.token_ids.size())) {
        throw InputError("foreground token index " + std::to_string(fg_token_index) +
                         " not present in the source prompt's " +
                         std::to_string(prompt_src.token_ids.size()) + " tokens");
    }

    masks::BinaryMask coarse =
        detail::reason_mask_from_src(model, prompt_src, seed, T, R, layers_P, fg_token_index,
                                     params, masks::MaskProvenance::foreground_coarse);
    SeededRng point_rng(seed, kPointStream);
    const auto points = masks::sample_foreground_points(coarse, params.sample_points, point_rng);
    masks::BinaryMask refined = refiner.refine(coarse, points);
    if (!refined.same_shape(coarse)) {
        throw DimensionError("mask refiner changed the mask shape");
    }
    refined.provenance = masks::MaskProvenance::foreground_refined;
    if (refined.count() == 0) throw EmptyMaskError("refined foreground mask is empty");

    std::vector<InjectionRule> rules;
    std::vector<int> all_layers(static_cast<std::size_t>(model.cfg.layers()));
    for (int l = 0; l < model.cfg.layers(); ++l) all_layers[static_cast<std::size_t>(l)] = l;
    if (B > 0) rules.push_back({all_layers, T, T - B + 1, VMasked{refined}});

    const PairedResult r = run_paired(model, p_src, p_edit, seed, rules, T);
    EditResult out;
    out.x_src = r.x_src;
    out.x_edit = r.x_edit;
    out.coarse_fg = std::move(coarse);
    out.refined_fg = std::move(refined);
    out.src_traj_checksum = r.src_traj_checksum;
    out.edit_traj_checksum = r.edit_traj_checksum;
    return out;
}

// Object movement: value mapping across all layers until step T-B+1.
inline EditResult edit_move(const mmdit::Model& model, const std::string& p_src,
                            const std::string& p_edit, std::uint64_t seed, const MoveMap& map,
                            const TaskParams& params = {}) {
    const int T = params.resolve_T(model.cfg);
    const int B = params.resolve_B(T);
    std::vector<InjectionRule> rules;
    std::vector<int> all_layers(static_cast<std::size_t>(model.cfg.layers()));
    for (int l = 0; l < model.cfg.layers(); ++l) all_layers[static_cast<std::size_t>(l)] = l;
    if (B > 0) rules.push_back({all_layers, T, T - B + 1, VMapped{ValueMap{map}}});
    const PairedResult r = run_paired(model, p_src, p_edit, seed, rules, T);
    EditResult out;
    out.x_src = r.x_src;
    out.x_edit = r.x_edit;
    masks::BinaryMask obj = map.object;
    obj.provenance = masks::MaskProvenance::object;
    out.object_mask = std::move(obj);
    out.src_traj_checksum = r.src_traj_checksum;
    out.edit_traj_checksum = r.edit_traj_checksum;
    return out;
}

// Outpainting: the source stream generates at the pasted rectangle's size and
// its values are copied into the larger edit grid each blended step.
inline EditResult edit_outpaint(const mmdit::Model& model, const std::string& p_src,
                                const std::string& p_edit, std::uint64_t seed, const PasteMap& map,
                                const TaskParams& params = {}) {
    if (map.src_h < 1 || map.src_w < 1) throw ConfigError("outpaint: source size must be >= 1");
    const int T = params.resolve_T(model.cfg);
    const int B = params.resolve_B(T);
    std::vector<InjectionRule> rules;
    std::vector<int> all_layers(static_cast<std::size_t>(model.cfg.layers()));
    for (int l = 0; l < model.cfg.layers(); ++l) all_layers[static_cast<std::size_t>(l)] = l;
    if (B > 0) rules.push_back({all_layers, T, T - B + 1, VMapped{ValueMap{map}}});
    const PairedResult r =
        run_paired(model, p_src, p_edit, seed, rules, T, map.src_h, map.src_w);
    EditResult out;
    out.x_src = r.x_src;
    out.x_edit = r.x_edit;
    out.src_traj_checksum = r.src_traj_checksum;
    out.edit_traj_checksum = r.edit_traj_checksum;
    return out;
}

// Derive an object mask for movement from the source stream's cross-attention
// (the manifest may alternatively supply the mask directly).
inline masks::BinaryMask reason_object_mask(const mmdit::Model& model, const std::string& p_src,
                                            std::uint64_t seed, int object_token_index,
                                            const std::vector<int>& layers_P,
                                            const TaskParams& params = {}) {
    const int T = params.resolve_T(model.cfg);
    const int R = params.resolve_R(T);
    const auto prompt_src = mmdit::encode_prompt(p_src, model.cfg);
    if (object_token_index < 0 ||
        object_token_index >= static_cast<int>(prompt_src.token_ids.size())) {
        throw InputError("object token index " + std::to_string(object_token_index) +
                         " not present in the source prompt");
    }
    return detail::reason_mask_from_src(model, prompt_src, seed, T, R, layers_P,
                                        object_token_index, params,
                                        masks::MaskProvenance::object);
}

}  // namespace ropedit::editing

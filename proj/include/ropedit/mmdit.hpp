#pragma once

// Toy-scale multimodal diffusion transformer: hashed prompt embeddings,
// multi-stream and single-stream blocks with joint text+image self-attention,
// rectified-flow Euler sampling, inverse-Euler inversion, and the fixed
// affine latent codec.
//
// Stand-ins relative to the full-scale architecture, by construction:
//   * patch embedding is the identity; the token grid IS the latent,
//   * timestep conditioning is layer norm + per-block (scale, shift)
//     modulated by the noise level, a minimal adaLN substitute,
//   * single conditional stream; guidance_scale is carried in the config
//     for interface fidelity but no classifier-free mixing is performed,
//   * the rotary table is a faithful stand-in for the mechanism, not a
//     weight-compatible replica of any pretrained layout.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ropedit/errors.hpp"
#include "ropedit/io.hpp"
#include "ropedit/rope.hpp"
#include "ropedit/tensor.hpp"

namespace ropedit::mmdit {

// ------------------------------------------------------------------- config

struct ModelConfig {
    int n_multi = 4;
    int n_single = 8;
    int heads = 4;
    int head_dim = 16;
    int text_len = 8;
    int grid_h = 16;
    int grid_w = 16;
    int vocab_buckets = 4096;
    double rope_base = 10000.0;
    double guidance_scale = 3.5;
    int steps_T = 50;

    int layers() const { return n_multi + n_single; }
    int channels() const { return heads * head_dim; }
    int image_tokens() const { return grid_h * grid_w; }

    void validate() const {
        if (n_multi < 0 || n_single < 0 || layers() < 1)
            throw ConfigError("model needs at least one block");
        if (heads < 1) throw ConfigError("heads must be >= 1");
        if (head_dim < 4 || head_dim % 4 != 0)
            throw ConfigError("head_dim must be >= 4 and divisible by 4, got " +
                              std::to_string(head_dim));
        if (text_len < 1) throw ConfigError("text_len must be >= 1");
        if (grid_h < 1 || grid_w < 1) throw ConfigError("grid dimensions must be >= 1");
        if (vocab_buckets < 1) throw ConfigError("vocab_buckets must be >= 1");
        if (!(rope_base > 1.0)) throw ConfigError("rope_base must be > 1");
        if (steps_T < 1) throw ConfigError("steps_T must be >= 1");
    }
};

// ------------------------------------------------------------------ weights

// Feed-forward hidden width as a multiple of channels.
inline constexpr int kFfMult = 2;

// Multi-stream blocks project text and image through separate matrices;
// single-stream blocks reuse the img set for both modalities (txt tensors
// stay empty).
struct BlockWeights {
    bool multi_stream = false;
    Tensor wq_txt, wk_txt, wv_txt, wo_txt, ff1_txt, ff2_txt;
    Tensor wq_img, wk_img, wv_img, wo_img, ff1_img, ff2_img;
    Tensor mod_scale, mod_shift;  // [1 x channels]
};

struct Model {
    ModelConfig cfg;
    std::vector<BlockWeights> blocks;
    rope::RotaryTable table;
};

namespace detail {

// Gaussian fill, then normalize every column to unit L2 norm. Random unit
// columns are nearly orthogonal at these widths, so projections are roughly
// norm-preserving.
inline Tensor init_projection(int in_dim, int out_dim, SeededRng& rng) {
    Tensor w({in_dim, out_dim});
    for (float& v : w.flat()) v = rng.next_normal();
    for (int j = 0; j < out_dim; ++j) {
        double norm = 0.0;
        for (int i = 0; i < in_dim; ++i) norm += static_cast<double>(w.at(i, j)) * w.at(i, j);
        norm = std::sqrt(norm);
        for (int i = 0; i < in_dim; ++i)
            w.at(i, j) = static_cast<float>(w.at(i, j) / norm);
    }
    return w;
}

inline Tensor init_vector(int dim, SeededRng& rng) {
    Tensor v({1, dim});
    for (float& x : v.flat()) x = rng.next_normal();
    return v;
}

}  // namespace detail

inline constexpr std::uint64_t kWeightStream = 0x57454947ull;   // weight init
inline constexpr std::uint64_t kNoiseStream = 0ull;             // initial latents
inline constexpr std::uint64_t kPromptEmbedSeed = 0x454d4244ull;

// Deterministic: two calls with equal (cfg, seed) produce bit-identical
// weights. Tensors are drawn in the serialization order below.
inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.table = rope::build_table(cfg.head_dim, cfg.rope_base);
    SeededRng rng(seed, kWeightStream);
    const int c = cfg.channels();
    const int ff = kFfMult * c;
    m.blocks.resize(static_cast<std::size_t>(cfg.layers()));
    for (int l = 0; l < cfg.layers(); ++l) {
        BlockWeights& b = m.blocks[static_cast<std::size_t>(l)];
        b.multi_stream = l < cfg.n_multi;
        if (b.multi_stream) {
            b.wq_txt = detail::init_projection(c, c, rng);
            b.wk_txt = detail::init_projection(c, c, rng);
            b.wv_txt = detail::init_projection(c, c, rng);
            b.wo_txt = detail::init_projection(c, c, rng);
            b.ff1_txt = detail::init_projection(c, ff, rng);
            b.ff2_txt = detail::init_projection(ff, c, rng);
        }
        b.wq_img = detail::init_projection(c, c, rng);
        b.wk_img = detail::init_projection(c, c, rng);
        b.wv_img = detail::init_projection(c, c, rng);
        b.wo_img = detail::init_projection(c, c, rng);
        b.ff1_img = detail::init_projection(c, ff, rng);
        b.ff2_img = detail::init_projection(ff, c, rng);
        b.mod_scale = detail::init_vector(c, rng);
        b.mod_shift = detail::init_vector(c, rng);
    }
    return m;
}

// ------------------------------------------------------------------ prompts

struct PromptEmbedding {
    std::vector<int> token_ids;  // hash buckets, truncated to text_len
    Tensor embeddings;           // [text_len x channels], zero rows pad
};

namespace detail {

inline std::uint64_t hash_token(const std::string& tok) { return io::fnv1a(tok); }

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

// Whitespace-tokenize, hash each token into a vocab bucket, and look up the
// bucket's fixed random embedding row. A pure function of (text, cfg): two
// models with the same config see identical prompt embeddings.
inline PromptEmbedding encode_prompt(const std::string& text, const ModelConfig& cfg) {
    const auto tokens = detail::whitespace_tokens(text);
    if (tokens.empty()) throw InputError("empty prompt");
    PromptEmbedding pe;
    pe.embeddings = Tensor({cfg.text_len, cfg.channels()});
    const int n = std::min<int>(static_cast<int>(tokens.size()), cfg.text_len);
    for (int i = 0; i < n; ++i) {
        const int bucket = static_cast<int>(detail::hash_token(tokens[static_cast<std::size_t>(i)]) %
                                            static_cast<std::uint64_t>(cfg.vocab_buckets));
        pe.token_ids.push_back(bucket);
        SeededRng row_rng(kPromptEmbedSeed, static_cast<std::uint64_t>(bucket));
        float* row = pe.embeddings.row(i);
        for (int j = 0; j < cfg.channels(); ++j) row[j] = row_rng.next_normal();
    }
    return pe;
}

// ------------------------------------------------------------------ latents

struct LatentGrid {
    int h = 0;
    int w = 0;
    Tensor values;  // [h*w x channels]

    int tokens() const { return h * w; }
};

struct ImageGrid {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<float> values;  // row-major (h, w, c), in [0,1]

    float at(int r, int c, int ch) const {
        return values[(static_cast<std::size_t>(r) * w + c) * channels + ch];
    }
};

inline constexpr float kDecodeScale = 0.25f;
inline constexpr float kDecodeShift = 0.5f;

// Fixed affine + clip codec; monotone per channel, used only for PSNR and export.
inline ImageGrid decode(const LatentGrid& z) {
    ImageGrid img;
    img.h = z.h;
    img.w = z.w;
    img.channels = z.values.cols();
    img.values.resize(z.values.size());
    const float* src = z.values.data();
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        float v = kDecodeScale * src[i] + kDecodeShift;
        img.values[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return img;
}

// --------------------------------------------------------------------- hooks

// Per-forward instrumentation. All callbacks are optional; a null hook set and
// a set of no-op callbacks produce bit-identical results.
struct ForwardHooks {
    // Observe each layer's image-token K/V (pre-rotary, pre-substitution).
    std::function<void(int layer, const Tensor& k_img, const Tensor& v_img)> kv_tap;
    // Substitute the image-token K/V a layer attends with (pre-rotary).
    std::function<void(int layer, Tensor& k_img, Tensor& v_img)> kv_override;
    // Receive each layer's attention weights, shape {heads, total, total}.
    std::function<void(int layer, const Tensor& attn)> attn_sink;
    // Running max |activation| across block outputs, for divergence guards.
    double* max_abs_activation = nullptr;
};

using KvHook = std::function<void(Tensor& k_img, Tensor& v_img)>;

// ---------------------------------------------------------------- attention

struct AttentionResult {
    Tensor txt_out;  // [text_len x channels]
    Tensor img_out;  // [tokens x channels]
    Tensor attn;     // {heads, total, total} softmax weights
};

namespace detail {

inline Tensor slice_cols(const Tensor& x, int col0, int ncols) {
    Tensor out({x.rows(), ncols});
    for (int i = 0; i < x.rows(); ++i) {
        const float* src = x.row(i) + col0;
        float* dst = out.row(i);
        for (int j = 0; j < ncols; ++j) dst[j] = src[j];
    }
    return out;
}

inline void paste_cols(Tensor& dst, const Tensor& src, int col0) {
    for (int i = 0; i < src.rows(); ++i) {
        const float* s = src.row(i);
        float* d = dst.row(i) + col0;
        for (int j = 0; j < src.cols(); ++j) d[j] = s[j];
    }
}

inline Tensor vstack(const Tensor& top, const Tensor& bottom) {
    Tensor out({top.rows() + bottom.rows(), top.cols()});
    std::copy(top.flat().begin(), top.flat().end(), out.flat().begin());
    std::copy(bottom.flat().begin(), bottom.flat().end(),
              out.flat().begin() + static_cast<std::ptrdiff_t>(top.size()));
    return out;
}

}  // namespace detail

// Joint self-attention over [text, image] tokens. Queries always rotate with
// the unmanipulated grid; keys rotate (or not) per k_manip. Text tokens carry
// the all-zero position and are never rotated or substituted. The returned
// attention weights are materialized only when want_attn is set (they are
// needed for mask extraction, not for the forward value).
inline AttentionResult joint_attention(const BlockWeights& block, const ModelConfig& cfg,
                                       const Tensor& txt, const Tensor& img,
                                       const rope::PositionGrid& grid,
                                       const rope::Manipulation& k_manip,
                                       const rope::RotaryTable& table,
                                       const KvHook* kv_override = nullptr,
                                       const ForwardHooks* hooks = nullptr, int layer = -1,
                                       bool want_attn = true) {
    const int c = cfg.channels();
    if (txt.ndim() != 2 || txt.cols() != c) {
        throw DimensionError("joint_attention: text tensor " + shape_str(txt) +
                             " does not match channels " + std::to_string(c));
    }
    if (img.ndim() != 2 || img.cols() != c || img.rows() != grid.tokens()) {
        throw DimensionError("joint_attention: image tensor " + shape_str(img) +
                             " does not match grid tokens " + std::to_string(grid.tokens()) +
                             " x channels " + std::to_string(c));
    }
    const Tensor& wq_t = block.multi_stream ? block.wq_txt : block.wq_img;
    const Tensor& wk_t = block.multi_stream ? block.wk_txt : block.wk_img;
    const Tensor& wv_t = block.multi_stream ? block.wv_txt : block.wv_img;
    const Tensor& wo_t = block.multi_stream ? block.wo_txt : block.wo_img;

    Tensor q_txt = matmul(txt, wq_t);
    Tensor k_txt = matmul(txt, wk_t);
    Tensor v_txt = matmul(txt, wv_t);
    Tensor q_img = matmul(img, block.wq_img);
    Tensor k_img = matmul(img, block.wk_img);
    Tensor v_img = matmul(img, block.wv_img);

    if (hooks && hooks->kv_tap) hooks->kv_tap(layer, k_img, v_img);
    if (kv_override && *kv_override) {
        (*kv_override)(k_img, v_img);
        if (k_img.rows() != grid.tokens() || k_img.cols() != c ||
            v_img.rows() != grid.tokens() || v_img.cols() != c) {
            throw DimensionError("kv hook returned mismatched shapes K=" + shape_str(k_img) +
                                 " V=" + shape_str(v_img) + " at layer " + std::to_string(layer));
        }
    }

    const rope::KeyPositions key_pos = rope::manipulate_positions(grid, k_manip);

    const int lt = txt.rows();
    const int li = img.rows();
    const int total = lt + li;
    const int hd = cfg.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const bool keep_attn = want_attn || (hooks && hooks->attn_sink);
    Tensor attn;
    if (keep_attn) attn = Tensor({cfg.heads, total, total});
    Tensor mixed({total, c});
    for (int h = 0; h < cfg.heads; ++h) {
        const int c0 = h * hd;
        Tensor qh_img = rope::apply_rope(detail::slice_cols(q_img, c0, hd), grid, table);
        Tensor kh_img = detail::slice_cols(k_img, c0, hd);
        if (key_pos.rotate) kh_img = rope::apply_rope(kh_img, key_pos.grid, table);
        Tensor qh = detail::vstack(detail::slice_cols(q_txt, c0, hd), qh_img);
        Tensor kh = detail::vstack(detail::slice_cols(k_txt, c0, hd), kh_img);
        Tensor vh = detail::vstack(detail::slice_cols(v_txt, c0, hd),
                                   detail::slice_cols(v_img, c0, hd));

        Tensor weights = softmax_rows(matmul_nt(qh, kh), scale);
        if (keep_attn) {
            std::copy(weights.flat().begin(), weights.flat().end(),
                      attn.flat().begin() + static_cast<std::ptrdiff_t>(h) * total * total);
        }
        detail::paste_cols(mixed, matmul(weights, vh), c0);
    }

    if (hooks && hooks->attn_sink) hooks->attn_sink(layer, attn);

    AttentionResult out;
    Tensor mixed_txt({lt, c}), mixed_img({li, c});
    std::copy_n(mixed.flat().begin(), static_cast<std::size_t>(lt) * c, mixed_txt.flat().begin());
    std::copy_n(mixed.flat().begin() + static_cast<std::ptrdiff_t>(lt) * c,
                static_cast<std::size_t>(li) * c, mixed_img.flat().begin());
    out.txt_out = matmul(mixed_txt, wo_t);
    out.img_out = matmul(mixed_img, block.wo_img);
    out.attn = std::move(attn);
    return out;
}

// ----------------------------------------------------------------- velocity

namespace detail {

inline constexpr double kNormEps = 1e-6;

// Fixed 4-way partial sums keep the reductions in f64 and vectorizable.
inline double sum4(const float* p, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += p[j];
        s1 += p[j + 1];
        s2 += p[j + 2];
        s3 += p[j + 3];
    }
    for (; j < n; ++j) s0 += p[j];
    return ((s0 + s1) + s2) + s3;
}

inline Tensor layer_norm(const Tensor& x) {
    Tensor out({x.rows(), x.cols()});
    const int n = x.cols();
    for (int i = 0; i < x.rows(); ++i) {
        const float* src = x.row(i);
        const double mean = sum4(src, n) / n;
        double v0 = 0.0, v1 = 0.0, v2 = 0.0, v3 = 0.0;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const double d0 = src[j] - mean, d1 = src[j + 1] - mean;
            const double d2 = src[j + 2] - mean, d3 = src[j + 3] - mean;
            v0 += d0 * d0;
            v1 += d1 * d1;
            v2 += d2 * d2;
            v3 += d3 * d3;
        }
        for (; j < n; ++j) {
            const double d = src[j] - mean;
            v0 += d * d;
        }
        const double var = (((v0 + v1) + v2) + v3) / n;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        float* dst = out.row(i);
        for (j = 0; j < n; ++j) dst[j] = static_cast<float>((src[j] - mean) * inv);
    }
    return out;
}

inline void modulate_inplace(Tensor& x, const Tensor& scale, const Tensor& shift, double g) {
    const float* sc = scale.data();
    const float* sh = shift.data();
    for (int i = 0; i < x.rows(); ++i) {
        float* r = x.row(i);
        for (int j = 0; j < x.cols(); ++j) {
            r[j] = static_cast<float>(r[j] * (1.0 + g * sc[j]) + g * sh[j]);
        }
    }
}

// tanh-form GELU written as x * sigmoid(2t); same function, but the exp
// variant vectorizes where libm tanh does not.
inline float gelu(float x) {
    const float t = 0.7978845608f * (x + 0.044715f * x * x * x);
    return x / (1.0f + ropedit::detail::fast_expf(-2.0f * t));
}

inline Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& w2) {
    Tensor h = matmul(x, w1);
    for (float& v : h.flat()) v = gelu(v);
    return matmul(h, w2);
}

inline void add_inplace(Tensor& x, const Tensor& d) {
    float* a = x.data();
    const float* b = d.data();
    for (std::size_t i = 0; i < x.size(); ++i) a[i] += b[i];
}

inline void track_max_abs(const ForwardHooks* hooks, const Tensor& a, const Tensor& b) {
    if (!hooks || !hooks->max_abs_activation) return;
    double m = *hooks->max_abs_activation;
    for (float v : a.flat()) m = std::max(m, static_cast<double>(std::fabs(v)));
    for (float v : b.flat()) m = std::max(m, static_cast<double>(std::fabs(v)));
    *hooks->max_abs_activation = m;
}

}  // namespace detail

// Noise level of timestep t under the linear schedule; sigma_T = 1, sigma_0 = 0.
inline double sigma_at(int t, int steps_T) {
    return static_cast<double>(t) / static_cast<double>(steps_T);
}

// One full forward pass: the rectified-flow velocity at state z, timestep t.
// Patch embedding is the identity; every block runs layer norm + timestep
// modulation, joint attention, and a feed-forward, each with residuals. The
// predicted velocity is the accumulated residual update (final image stream
// minus the input), so a model with zeroed output projections predicts
// exactly zero. k_manips, when nonempty, gives the key-side rope manipulation
// per layer.
inline LatentGrid velocity(const Model& model, const LatentGrid& z, int t,
                           const PromptEmbedding& prompt,
                           const ForwardHooks* hooks = nullptr,
                           const std::vector<rope::Manipulation>& k_manips = {}) {
    const ModelConfig& cfg = model.cfg;
    if (t < 1 || t > cfg.steps_T) {
        throw ConfigError("velocity: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(cfg.steps_T) + "]");
    }
    if (!k_manips.empty() && static_cast<int>(k_manips.size()) != cfg.layers()) {
        throw ConfigError("velocity: k_manips has " + std::to_string(k_manips.size()) +
                          " entries for " + std::to_string(cfg.layers()) + " layers");
    }
    if (z.values.ndim() != 2 || z.values.cols() != cfg.channels() ||
        z.values.rows() != z.tokens()) {
        throw DimensionError("velocity: latent " + shape_str(z.values) + " does not match " +
                             std::to_string(z.tokens()) + " tokens x " +
                             std::to_string(cfg.channels()) + " channels");
    }

    const rope::PositionGrid grid = rope::grid_positions(z.h, z.w);
    const double g = sigma_at(t, cfg.steps_T);

    Tensor x_txt = prompt.embeddings;
    Tensor x_img = z.values;
    for (int l = 0; l < cfg.layers(); ++l) {
        const BlockWeights& block = model.blocks[static_cast<std::size_t>(l)];
        Tensor h_txt = detail::layer_norm(x_txt);
        Tensor h_img = detail::layer_norm(x_img);
        detail::modulate_inplace(h_txt, block.mod_scale, block.mod_shift, g);
        detail::modulate_inplace(h_img, block.mod_scale, block.mod_shift, g);

        const rope::Manipulation manip =
            k_manips.empty() ? rope::Manipulation::keep() : k_manips[static_cast<std::size_t>(l)];
        KvHook bound;
        if (hooks && hooks->kv_override) {
            bound = [hooks, l](Tensor& k, Tensor& v) { hooks->kv_override(l, k, v); };
        }
        AttentionResult att =
            joint_attention(block, cfg, h_txt, h_img, grid, manip, model.table,
                            bound ? &bound : nullptr, hooks, l, /*want_attn=*/false);
        detail::add_inplace(x_txt, att.txt_out);
        detail::add_inplace(x_img, att.img_out);
        detail::track_max_abs(hooks, x_txt, x_img);

        const Tensor& ff1_t = block.multi_stream ? block.ff1_txt : block.ff1_img;
        const Tensor& ff2_t = block.multi_stream ? block.ff2_txt : block.ff2_img;
        Tensor ff_txt = detail::feed_forward(detail::layer_norm(x_txt), ff1_t, ff2_t);
        Tensor ff_img = detail::feed_forward(detail::layer_norm(x_img), block.ff1_img, block.ff2_img);
        detail::add_inplace(x_txt, ff_txt);
        detail::add_inplace(x_img, ff_img);
        detail::track_max_abs(hooks, x_txt, x_img);
    }
    {
        float* v = x_img.data();
        const float* z0 = z.values.data();
        for (std::size_t i = 0; i < x_img.size(); ++i) v[i] -= z0[i];
    }
    return LatentGrid{z.h, z.w, std::move(x_img)};
}

// ----------------------------------------------------------------- sampling

inline LatentGrid initial_noise(const ModelConfig& cfg, std::uint64_t seed, int h, int w) {
    SeededRng rng(seed, kNoiseStream);
    return LatentGrid{h, w, sample_gaussian({h * w, cfg.channels()}, rng)};
}

inline void euler_step_inplace(LatentGrid& z, const LatentGrid& v, double dsigma) {
    float* zp = z.values.data();
    const float* vp = v.values.data();
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        zp[i] = static_cast<float>(zp[i] + dsigma * vp[i]);
    }
}

// Explicit Euler under the linear sigma schedule. Returns all steps_T + 1
// states: trajectory[0] = z_T (the seeded noise), trajectory[steps_T] = z_0.
inline std::vector<LatentGrid> euler_sample(const Model& model, const PromptEmbedding& prompt,
                                            std::uint64_t seed, int steps_T,
                                            const ForwardHooks* hooks = nullptr,
                                            const std::vector<rope::Manipulation>& k_manips = {},
                                            int grid_h = 0, int grid_w = 0) {
    if (steps_T < 1) throw ConfigError("euler_sample: steps_T must be >= 1");
    const int h = grid_h > 0 ? grid_h : model.cfg.grid_h;
    const int w = grid_w > 0 ? grid_w : model.cfg.grid_w;
    Model scoped = {};  // only used when steps_T differs from cfg; see below
    const Model* m = &model;
    if (steps_T != model.cfg.steps_T) {
        scoped = model;
        scoped.cfg.steps_T = steps_T;
        m = &scoped;
    }
    std::vector<LatentGrid> traj;
    traj.reserve(static_cast<std::size_t>(steps_T) + 1);
    traj.push_back(initial_noise(m->cfg, seed, h, w));
    for (int t = steps_T; t >= 1; --t) {
        const LatentGrid v = velocity(*m, traj.back(), t, prompt, hooks, k_manips);
        LatentGrid next = traj.back();
        euler_step_inplace(next, v, sigma_at(t - 1, steps_T) - sigma_at(t, steps_T));
        traj.push_back(std::move(next));
    }
    return traj;
}

// Inverse Euler: run the recursion backward from z_0 to approximate the
// initial noise. The velocity is evaluated at z_{t-1} instead of z_t, so the
// round trip carries an O(1/steps_T) mismatch by construction.
inline LatentGrid euler_invert(const Model& model, const LatentGrid& z0,
                               const PromptEmbedding& prompt, int steps_T) {
    if (steps_T < 1) throw ConfigError("euler_invert: steps_T must be >= 1");
    Model scoped = {};
    const Model* m = &model;
    if (steps_T != model.cfg.steps_T) {
        scoped = model;
        scoped.cfg.steps_T = steps_T;
        m = &scoped;
    }
    LatentGrid z = z0;
    for (int t = 1; t <= steps_T; ++t) {
        const LatentGrid v = velocity(*m, z, t, prompt);
        euler_step_inplace(z, v, sigma_at(t, steps_T) - sigma_at(t - 1, steps_T));
    }
    return z;
}

// ------------------------------------------------------------- weight files

// Flat binary model file: magic "MMDP", version, config fields, then weight
// tensors in declaration order as little-endian f32.
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void write_tensor(std::ostream& os, const Tensor& t) {
    io::write_f32_array(os, t.data(), t.size());
}

inline void read_tensor(std::istream& is, Tensor& t, const std::string& what) {
    io::read_f32_array(is, t.data(), t.size(), what);
}

template <typename Fn>
void for_each_block_tensor(BlockWeights& b, Fn&& fn) {
    if (b.multi_stream) {
        fn(b.wq_txt, "wq_txt");
        fn(b.wk_txt, "wk_txt");
        fn(b.wv_txt, "wv_txt");
        fn(b.wo_txt, "wo_txt");
        fn(b.ff1_txt, "ff1_txt");
        fn(b.ff2_txt, "ff2_txt");
    }
    fn(b.wq_img, "wq_img");
    fn(b.wk_img, "wk_img");
    fn(b.wv_img, "wv_img");
    fn(b.wo_img, "wo_img");
    fn(b.ff1_img, "ff1_img");
    fn(b.ff2_img, "ff2_img");
    fn(b.mod_scale, "mod_scale");
    fn(b.mod_shift, "mod_shift");
}

}  // namespace detail

inline void save_model(const Model& model, std::ostream& os) {
    os.write("MMDP", 4);
    io::write_u32(os, kWeightsVersion);
    const ModelConfig& c = model.cfg;
    io::write_i32(os, c.n_multi);
    io::write_i32(os, c.n_single);
    io::write_i32(os, c.heads);
    io::write_i32(os, c.head_dim);
    io::write_i32(os, c.text_len);
    io::write_i32(os, c.grid_h);
    io::write_i32(os, c.grid_w);
    io::write_i32(os, c.vocab_buckets);
    io::write_f64(os, c.rope_base);
    io::write_f64(os, c.guidance_scale);
    io::write_i32(os, c.steps_T);
    for (const BlockWeights& b : model.blocks) {
        detail::for_each_block_tensor(const_cast<BlockWeights&>(b),
                                      [&](Tensor& t, const char*) { detail::write_tensor(os, t); });
    }
}

inline Model load_model(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MMDP") throw InputError("not a MMDP weights file");
    const auto version = io::read_scalar<std::uint32_t>(is, "version");
    if (version != kWeightsVersion) {
        throw InputError("unsupported weights version " + std::to_string(version));
    }
    ModelConfig c;
    c.n_multi = io::read_scalar<std::int32_t>(is, "n_multi");
    c.n_single = io::read_scalar<std::int32_t>(is, "n_single");
    c.heads = io::read_scalar<std::int32_t>(is, "heads");
    c.head_dim = io::read_scalar<std::int32_t>(is, "head_dim");
    c.text_len = io::read_scalar<std::int32_t>(is, "text_len");
    c.grid_h = io::read_scalar<std::int32_t>(is, "grid_h");
    c.grid_w = io::read_scalar<std::int32_t>(is, "grid_w");
    c.vocab_buckets = io::read_scalar<std::int32_t>(is, "vocab_buckets");
    c.rope_base = io::read_scalar<double>(is, "rope_base");
    c.guidance_scale = io::read_scalar<double>(is, "guidance_scale");
    c.steps_T = io::read_scalar<std::int32_t>(is, "steps_T");
    c.validate();

    Model m;
    m.cfg = c;
    m.table = rope::build_table(c.head_dim, c.rope_base);
    const int ch = c.channels();
    const int ff = kFfMult * ch;
    m.blocks.resize(static_cast<std::size_t>(c.layers()));
    for (int l = 0; l < c.layers(); ++l) {
        BlockWeights& b = m.blocks[static_cast<std::size_t>(l)];
        b.multi_stream = l < c.n_multi;
        if (b.multi_stream) {
            b.wq_txt = Tensor({ch, ch});
            b.wk_txt = Tensor({ch, ch});
            b.wv_txt = Tensor({ch, ch});
            b.wo_txt = Tensor({ch, ch});
            b.ff1_txt = Tensor({ch, ff});
            b.ff2_txt = Tensor({ff, ch});
        }
        b.wq_img = Tensor({ch, ch});
        b.wk_img = Tensor({ch, ch});
        b.wv_img = Tensor({ch, ch});
        b.wo_img = Tensor({ch, ch});
        b.ff1_img = Tensor({ch, ff});
        b.ff2_img = Tensor({ff, ch});
        b.mod_scale = Tensor({1, ch});
        b.mod_shift = Tensor({1, ch});
        detail::for_each_block_tensor(
            b, [&](Tensor& t, const char* name) { detail::read_tensor(is, t, name); });
    }
    return m;
}

inline std::uint64_t model_checksum(const Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const BlockWeights& b : model.blocks) {
        detail::for_each_block_tensor(const_cast<BlockWeights&>(b), [&](Tensor& t, const char*) {
            h = io::fnv1a(t.data(), t.size() * sizeof(float), h);
        });
    }
    return h;
}

// --------------------------------------------------------------- image files

// PPM P6 export writes the first three channels as RGB.
inline void write_ppm(const ImageGrid& img, std::ostream& os) {
    if (img.channels < 3) throw DimensionError("write_ppm needs >= 3 channels");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const float v = img.at(r, c, ch);
                const int byte = static_cast<int>(std::lround(v * 255.0f));
                os.put(static_cast<char>(byte < 0 ? 0 : (byte > 255 ? 255 : byte)));
            }
        }
    }
}

struct PpmImage {
    int w = 0;
    int h = 0;
    std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel
};

inline PpmImage read_ppm(std::istream& is) {
    std::string magic;
    is >> magic;
    if (magic != "P6") throw InputError("not a P6 PPM file");
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w < 1 || h < 1 || maxval != 255) throw InputError("unsupported PPM header");
    is.get();  // single whitespace after maxval
    PpmImage img;
    img.w = w;
    img.h = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!is) throw InputError("truncated PPM pixel data");
    return img;
}

// Flat little-endian f32 latent file, row-major [h*w x channels].
inline void write_latent(const LatentGrid& z, std::ostream& os) {
    io::write_f32_array(os, z.values.data(), z.values.size());
}

inline LatentGrid read_latent(std::istream& is, int h, int w, int channels) {
    LatentGrid z{h, w, Tensor({h * w, channels})};
    io::read_f32_array(is, z.values.data(), z.values.size(), "latent values");
    is.peek();
    if (!is.eof()) throw InputError("latent file larger than h*w*channels f32 values");
    return z;
}

}  // namespace ropedit::mmdit

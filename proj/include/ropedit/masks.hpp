#pragma once

// Cross-attention mask extraction and the small binary-mask toolbox behind
// the editing tasks: binarization, largest connected component, foreground
// point sampling, and the pluggable refiner interface. Masks live at token
// grid resolution throughout.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ropedit/errors.hpp"
#include "ropedit/rope.hpp"
#include "ropedit/tensor.hpp"

namespace ropedit::masks {

// Normalized attention mass from one text token onto the image-token grid.
struct AttentionHeatmap {
    int h = 0;
    int w = 0;
    std::vector<float> values;  // row-major, min-max normalized to [0,1]

    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * w + c]; }
};

enum class MaskProvenance { object, foreground_coarse, foreground_refined };

struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> bits;  // row-major 0/1
    MaskProvenance provenance = MaskProvenance::object;

    static BinaryMask filled(int h, int w, bool value) {
        BinaryMask m;
        m.h = h;
        m.w = w;
        m.bits.assign(static_cast<std::size_t>(h) * w, value ? 1 : 0);
        return m;
    }

    bool at(int r, int c) const { return bits[static_cast<std::size_t>(r) * w + c] != 0; }
    void set(int r, int c, bool v) { bits[static_cast<std::size_t>(r) * w + c] = v ? 1 : 0; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }
    bool same_shape(const BinaryMask& o) const { return h == o.h && w == o.w; }
};

// Refines a coarse foreground mask given sampled foreground points. Stand-in
// seam for an external segmenter; the default just echoes the coarse mask.
class MaskRefiner {
public:
    virtual ~MaskRefiner() = default;
    virtual BinaryMask refine(const BinaryMask& coarse,
                              const std::vector<rope::Coord>& points) const = 0;
};

class IdentityRefiner final : public MaskRefiner {
public:
    BinaryMask refine(const BinaryMask& coarse, const std::vector<rope::Coord>&) const override {
        return coarse;
    }
};

// ----------------------------------------------------------------- heatmaps

// Slice the image-query -> text-key attention column for one text token out of
// captured per-layer weights (shape {heads, total, total}), reduce over heads
// (mean when head_average, max otherwise) and over the given layers, reshape
// to the grid, min-max normalize. A perfectly flat map normalizes to all
// zeros by convention.
inline AttentionHeatmap extract_token_heatmap(const std::map<int, Tensor>& attn_per_layer,
                                              int token_index, const std::vector<int>& layers,
                                              bool head_average, int text_len, int grid_h,
                                              int grid_w) {
    if (layers.empty()) throw ConfigError("extract_token_heatmap: empty layer set");
    if (token_index < 0 || token_index >= text_len) {
        throw ConfigError("extract_token_heatmap: token index " + std::to_string(token_index) +
                          " outside text_len " + std::to_string(text_len));
    }
    const int tokens = grid_h * grid_w;
    const int total = text_len + tokens;
    std::vector<double> acc(static_cast<std::size_t>(tokens), 0.0);
    for (int layer : layers) {
        const auto it = attn_per_layer.find(layer);
        if (it == attn_per_layer.end()) {
            throw ConfigError("extract_token_heatmap: no captured attention for layer " +
                              std::to_string(layer));
        }
        const Tensor& attn = it->second;
        if (attn.ndim() != 3 || attn.dim(1) != total || attn.dim(2) != total) {
            throw DimensionError("extract_token_heatmap: captured attention " + shape_str(attn) +
                                 " does not match " + std::to_string(total) + " tokens");
        }
        const int heads = attn.dim(0);
        const float* base = attn.data();
        for (int i = 0; i < tokens; ++i) {
            double v = head_average ? 0.0 : -1.0;
            for (int hd = 0; hd < heads; ++hd) {
                const double a = base[(static_cast<std::size_t>(hd) * total + text_len + i) * total +
                                      token_index];
                if (head_average) {
                    v += a;
                } else if (a > v) {
                    v = a;
                }
            }
            if (head_average) v /= heads;
            acc[static_cast<std::size_t>(i)] += v;
        }
    }
    double lo = acc[0], hi = acc[0];
    for (double v : acc) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    AttentionHeatmap hm;
    hm.h = grid_h;
    hm.w = grid_w;
    hm.values.resize(static_cast<std::size_t>(tokens));
    const double span = hi - lo;
    for (int i = 0; i < tokens; ++i) {
        hm.values[static_cast<std::size_t>(i)] =
            span > 0.0 ? static_cast<float>((acc[static_cast<std::size_t>(i)] - lo) / span) : 0.0f;
    }
    return hm;
}

// ---------------------------------------------------------------- mask ops

inline constexpr double kDefaultBinarizeThreshold = 0.3;

// Inclusive comparison: a cell exactly at the threshold is foreground.
inline BinaryMask binarize(const AttentionHeatmap& hm, double threshold = kDefaultBinarizeThreshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("binarize: threshold must lie in (0,1), got " + std::to_string(threshold));
    }
    BinaryMask m = BinaryMask::filled(hm.h, hm.w, false);
    for (std::size_t i = 0; i < hm.values.size(); ++i) {
        m.bits[i] = hm.values[i] >= threshold ? 1 : 0;
    }
    return m;
}

// Keep only the maximum-cardinality connected component; ties go to the
// component whose smallest row-major cell comes first.
inline BinaryMask largest_component(const BinaryMask& m, int connectivity = 4) {
    if (connectivity != 4 && connectivity != 8) {
        throw ConfigError("largest_component: connectivity must be 4 or 8");
    }
    const int n = m.h * m.w;
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    std::vector<int> stack;
    int best_label = -1;
    std::size_t best_size = 0;
    int next_label = 0;
    for (int start = 0; start < n; ++start) {
        if (!m.bits[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0)
            continue;
        std::size_t size = 0;
        stack.assign(1, start);
        label[static_cast<std::size_t>(start)] = next_label;
        while (!stack.empty()) {
            const int cell = stack.back();
            stack.pop_back();
            ++size;
            const int r = cell / m.w, c = cell % m.w;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    if (connectivity == 4 && dr != 0 && dc != 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= m.h || cc < 0 || cc >= m.w) continue;
                    const int idx = rr * m.w + cc;
                    if (m.bits[static_cast<std::size_t>(idx)] &&
                        label[static_cast<std::size_t>(idx)] < 0) {
                        label[static_cast<std::size_t>(idx)] = next_label;
                        stack.push_back(idx);
                    }
                }
            }
        }
        if (size > best_size) {  // strict: earlier (smaller top-left) component wins ties
            best_size = size;
            best_label = next_label;
        }
        ++next_label;
    }
    if (best_label < 0) throw EmptyMaskError("largest_component: mask has no true cells");
    BinaryMask out = BinaryMask::filled(m.h, m.w, false);
    out.provenance = m.provenance;
    for (int i = 0; i < n; ++i) {
        out.bits[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(i)] == best_label;
    }
    return out;
}

// k cells uniform without replacement (with replacement once k exceeds the
// number of true cells).
inline std::vector<rope::Coord> sample_foreground_points(const BinaryMask& m, int k,
                                                         SeededRng& rng) {
    if (k < 1) throw ConfigError("sample_foreground_points: k must be >= 1");
    std::vector<int> cells;
    for (int i = 0; i < m.h * m.w; ++i) {
        if (m.bits[static_cast<std::size_t>(i)]) cells.push_back(i);
    }
    if (cells.empty()) throw EmptyMaskError("sample_foreground_points: empty mask");
    std::vector<rope::Coord> out;
    out.reserve(static_cast<std::size_t>(k));
    if (static_cast<std::size_t>(k) <= cells.size()) {
        for (int i = 0; i < k; ++i) {  // partial Fisher-Yates
            const std::size_t j = i + rng.next_u64() % (cells.size() - i);
            std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
            out.push_back({cells[static_cast<std::size_t>(i)] / m.w,
                           cells[static_cast<std::size_t>(i)] % m.w});
        }
    } else {
        for (int i = 0; i < k; ++i) {
            const int cell = cells[rng.next_u64() % cells.size()];
            out.push_back({cell / m.w, cell % m.w});
        }
    }
    return out;
}

// ----------------------------------------------------------------- PBM (P1)

inline std::string write_pbm(const BinaryMask& m) {
    std::ostringstream os;
    os << "P1\n" << m.w << " " << m.h << "\n";
    for (int r = 0; r < m.h; ++r) {
        for (int c = 0; c < m.w; ++c) {
            if (c) os << ' ';
            os << (m.at(r, c) ? '1' : '0');
        }
        os << '\n';
    }
    return os.str();
}

inline BinaryMask read_pbm(const std::string& text) {
    std::istringstream is(text);
    std::string tok;
    auto next = [&]() -> std::string {
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return tok;
        }
        throw InputError("truncated PBM file");
    };
    if (next() != "P1") throw InputError("not a P1 PBM file");
    const int w = std::stoi(next());
    const int h = std::stoi(next());
    if (w < 1 || h < 1) throw InputError("bad PBM dimensions");
    BinaryMask m = BinaryMask::filled(h, w, false);
    for (int i = 0; i < h * w; ++i) {
        const std::string bit = next();
        if (bit != "0" && bit != "1") throw InputError("bad PBM bit '" + bit + "'");
        m.bits[static_cast<std::size_t>(i)] = bit == "1";
    }
    return m;
}

}  // namespace ropedit::masks

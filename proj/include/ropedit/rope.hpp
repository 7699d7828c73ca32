#pragma once

// 2D rotary position embedding: frequency tables, per-token position grids,
// rotary application to query/key rows, and the key-side probing manipulations
// (remove / shift).
//
// Axis split: the first half of head_dim encodes the row coordinate, the
// second half the column coordinate, each as standard 1D rotary over
// consecutive value pairs. Text tokens sit at (0,0) and therefore rotate by
// the identity; attention simply skips them.

#include <cstdint>
#include <string>
#include <vector>

#include "ropedit/errors.hpp"
#include "ropedit/tensor.hpp"

namespace ropedit::rope {

struct Coord {
    int row = 0;
    int col = 0;
    bool operator==(const Coord&) const = default;
};

// Per-image-token integer coordinates, row-major. Text tokens are implicitly
// (0,0) and never appear here.
struct PositionGrid {
    int rows = 0;
    int cols = 0;
    std::vector<Coord> coords;

    int tokens() const { return static_cast<int>(coords.size()); }
    bool operator==(const PositionGrid&) const = default;
};

inline PositionGrid grid_positions(int h, int w) {
    if (h < 1 || w < 1) {
        throw ConfigError("grid_positions: dimensions must be >= 1, got " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    PositionGrid g;
    g.rows = h;
    g.cols = w;
    g.coords.reserve(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.coords.push_back({r, c});
    return g;
}

// Rotation frequencies, head_dim/4 per axis: freqs[d] = base^(-4d/head_dim).
struct RotaryTable {
    int head_dim = 0;
    double base = 0.0;
    std::vector<double> freqs;  // strictly decreasing, freqs[0] == 1

    int pairs_per_axis() const { return head_dim / 4; }
};

inline RotaryTable build_table(int head_dim, double base) {
    if (head_dim < 4 || head_dim % 4 != 0) {
        throw ConfigError("rotary head_dim must be >= 4 and divisible by 4, got " +
                          std::to_string(head_dim));
    }
    if (!(base > 1.0)) {
        throw ConfigError("rotary base must be > 1, got " + std::to_string(base));
    }
    RotaryTable t;
    t.head_dim = head_dim;
    t.base = base;
    const int pairs = head_dim / 4;
    t.freqs.reserve(pairs);
    for (int d = 0; d < pairs; ++d) {
        t.freqs.push_back(std::pow(base, -4.0 * d / head_dim));
    }
    return t;
}

// Key-side probing manipulation. Queries always keep their rotary.
struct Manipulation {
    enum class Kind { Keep, Remove, Shift };
    Kind kind = Kind::Keep;
    int dr = 0;
    int dc = 0;

    static Manipulation keep() { return {}; }
    static Manipulation remove() { return {Kind::Remove, 0, 0}; }
    static Manipulation shift(int dr, int dc) { return {Kind::Shift, dr, dc}; }

    bool is_identity() const {
        return kind == Kind::Keep || (kind == Kind::Shift && dr == 0 && dc == 0);
    }
    bool operator==(const Manipulation&) const = default;
};

inline std::string to_string(const Manipulation& m) {
    switch (m.kind) {
        case Manipulation::Kind::Keep: return "keep";
        case Manipulation::Kind::Remove: return "remove";
        case Manipulation::Kind::Shift:
            return "shift(" + std::to_string(m.dr) + "," + std::to_string(m.dc) + ")";
    }
    return "keep";
}

inline Manipulation manipulation_from_string(const std::string& s) {
    if (s == "keep") return Manipulation::keep();
    if (s == "remove") return Manipulation::remove();
    if (s.rfind("shift(", 0) == 0 && s.back() == ')') {
        const auto comma = s.find(',');
        if (comma != std::string::npos) {
            const int dr = std::stoi(s.substr(6, comma - 6));
            const int dc = std::stoi(s.substr(comma + 1, s.size() - comma - 2));
            return Manipulation::shift(dr, dc);
        }
    }
    throw InputError("unknown manipulation '" + s + "' (expected keep, remove, shift(dr,dc))");
}

// The key positions an attention layer should use: either a (possibly shifted)
// grid to rotate by, or no rotation at all.
struct KeyPositions {
    bool rotate = true;
    PositionGrid grid;
};

// Shifted positions are not wrapped or clamped: out-of-range angles are the
// intended probe stimulus.
inline KeyPositions manipulate_positions(const PositionGrid& grid, const Manipulation& m) {
    switch (m.kind) {
        case Manipulation::Kind::Keep:
            return {true, grid};
        case Manipulation::Kind::Remove:
            return {false, {}};
        case Manipulation::Kind::Shift: {
            PositionGrid out = grid;
            for (Coord& c : out.coords) {
                c.row += m.dr;
                c.col += m.dc;
            }
            return {true, out};
        }
    }
    return {true, grid};
}

namespace detail {
inline void rotate_pair(float* p, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double a = p[0], b = p[1];
    p[0] = static_cast<float>(a * c - b * s);
    p[1] = static_cast<float>(a * s + b * c);
}
}  // namespace detail

// Rotate each row of x ([tokens x head_dim]) by its grid coordinate: row-axis
// pairs by angle row*freq, column-axis pairs by col*freq. Pure per-pair plane
// rotation, so every pair norm is preserved.
inline Tensor apply_rope(const Tensor& x, const PositionGrid& grid, const RotaryTable& table) {
    if (x.ndim() != 2 || x.rows() != grid.tokens() || x.cols() != table.head_dim) {
        throw DimensionError("apply_rope: " + shape_str(x) + " does not match " +
                             std::to_string(grid.tokens()) + " tokens x head_dim " +
                             std::to_string(table.head_dim));
    }
    const int pairs = table.pairs_per_axis();
    const int col_half = table.head_dim / 2;
    Tensor out = x;
    for (int i = 0; i < grid.tokens(); ++i) {
        const Coord pos = grid.coords[static_cast<std::size_t>(i)];
        float* r = out.row(i);
        for (int d = 0; d < pairs; ++d) {
            const double freq = table.freqs[static_cast<std::size_t>(d)];
            detail::rotate_pair(r + 2 * d, pos.row * freq);
            detail::rotate_pair(r + col_half + 2 * d, pos.col * freq);
        }
    }
    return out;
}

}  // namespace ropedit::rope

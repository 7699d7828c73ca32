#pragma once

// Minimal deterministic dense-tensor arithmetic and seeded Gaussian sampling.
// Storage is 32-bit; every reduction accumulates in 64-bit. No broadcasting:
// all shapes are explicit so oracle tests stay unambiguous.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ropedit/errors.hpp"

namespace ropedit {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) {
                throw DimensionError("tensor axis length must be positive, got " +
                                     std::to_string(d));
            }
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0f);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        std::size_t n = 1;
        for (int d : shape_) n *= static_cast<std::size_t>(d > 0 ? d : 0);
        if (n != data_.size() || n == 0) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape product " + std::to_string(n));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2D accessors; most of the library works on [rows x cols] matrices.
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }
    float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& flat() { return data_; }
    const std::vector<float>& flat() const { return data_; }

    float* row(int r) { return data_.data() + static_cast<std::size_t>(r) * shape_[1]; }
    const float* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * shape_[1]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (int i = 0; i < t.ndim(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.dim(i));
    }
    return s + "]";
}

// ---------------------------------------------------------------- SeededRng

// Counter-based generator: value = mix(mix(mix(seed) ^ stream) ^ counter).
// Each draw is a pure function of (seed, stream, counter), so parallel probe
// workers can own independent streams with no shared mutable state, and the
// sequence is identical on every platform (pure 64-bit integer mixing).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_key_(mix_(seed)), stream_key_(mix_(mix_(seed) ^ stream_id)) {}

    std::uint64_t seed_key() const { return seed_key_; }

    // Value at an absolute counter position; does not advance the cursor.
    std::uint64_t at(std::uint64_t counter) const { return mix_(stream_key_ ^ counter); }

    std::uint64_t next_u64() { return at(counter_++); }

    // Uniform in (0,1]; never 0 so log() stays finite.
    double next_unit() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Exactly two uniforms per draw (the sine
    // counterpart is discarded) so sample i always sits at counter 2i.
    float next_normal() {
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
    }

private:
    static std::uint64_t mix_(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_key_ = 0;
    std::uint64_t stream_key_ = 0;
    std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------- operations

namespace detail {

// Single-precision exp: Cephes-style range reduction plus a degree-5
// polynomial, ~1 ulp over [-87.3, 88.37]. Saturates to 0 below and to
// ~2.4e38 above via integer exponent clamps, which (unlike float min/max
// ternaries) the vectorizer handles, so softmax's exp loop runs SIMD.
// Callers pass finite x with |x| < ~1e9; exp(0) == 1 exactly.
inline float fast_expf(float x) {
    // round-to-nearest via the 1.5*2^23 magic constant; branchless, no floor
    const float t = x * 1.44269504f + 12582912.0f;
    const float n = t - 12582912.0f;
    float r = x - n * 0.693359375f;
    r -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int e = static_cast<int>(n) + 127;
    e = std::max(e, 0);    // 2^(e-127) underflows to exact +0
    e = std::min(e, 254);  // saturate instead of producing inf
    return p * std::bit_cast<float>(static_cast<std::uint32_t>(e) << 23);
}

inline void exp_row(float* row, int n) {
    for (int j = 0; j < n; ++j) row[j] = fast_expf(row[j]);
}

// Core m x k x n product with the right operand already widened to double.
// Register-tiled (4 rows x 8 columns of accumulators); every (i, j)
// accumulator still sums over p in the same fixed order, so the tiling does
// not change a single bit of the result.
inline void matmul_core(const Tensor& a, const std::vector<double>& b_wide, int k, int n,
                        Tensor& out) {
    constexpr int TI = 4, TJ = 8;
    const int m = a.rows();
    const double* b = b_wide.data();
    for (int i0 = 0; i0 < m; i0 += TI) {
        const int ni = std::min(TI, m - i0);
        for (int j0 = 0; j0 < n; j0 += TJ) {
            const int nj = std::min(TJ, n - j0);
            double acc[TI][TJ] = {};
            if (ni == TI && nj == TJ) {
                const float* a0 = a.row(i0);
                const float* a1 = a.row(i0 + 1);
                const float* a2 = a.row(i0 + 2);
                const float* a3 = a.row(i0 + 3);
                for (int p = 0; p < k; ++p) {
                    const double* brow = b + static_cast<std::size_t>(p) * n + j0;
                    const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                    for (int j = 0; j < TJ; ++j) {
                        const double bv = brow[j];
                        acc[0][j] += v0 * bv;
                        acc[1][j] += v1 * bv;
                        acc[2][j] += v2 * bv;
                        acc[3][j] += v3 * bv;
                    }
                }
            } else {
                for (int p = 0; p < k; ++p) {
                    const double* brow = b + static_cast<std::size_t>(p) * n + j0;
                    for (int i = 0; i < ni; ++i) {
                        const double av = a.row(i0 + i)[p];
                        for (int j = 0; j < nj; ++j) acc[i][j] += av * brow[j];
                    }
                }
            }
            for (int i = 0; i < ni; ++i) {
                float* orow = out.row(i0 + i) + j0;
                for (int j = 0; j < nj; ++j) orow[j] = static_cast<float>(acc[i][j]);
            }
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + shape_str(a) + " * " + shape_str(b));
    }
    const int k = a.cols(), n = b.cols();
    std::vector<double> b_wide(static_cast<std::size_t>(k) * n);
    for (std::size_t i = 0; i < b_wide.size(); ++i) b_wide[i] = b.flat()[i];
    Tensor out({a.rows(), n});
    detail::matmul_core(a, b_wide, k, n, out);
    return out;
}

// a [m x k] times b-transposed where b is [n x k]; the attention score kernel.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw DimensionError("matmul_nt shape mismatch: " + shape_str(a) + " * " +
                             shape_str(b) + "^T");
    }
    const int k = a.cols(), n = b.rows();
    std::vector<double> bt_wide(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j) {
        const float* brow = b.row(j);
        for (int p = 0; p < k; ++p) bt_wide[static_cast<std::size_t>(p) * n + j] = brow[p];
    }
    Tensor out({a.rows(), n});
    detail::matmul_core(a, bt_wide, k, n, out);
    return out;
}

inline Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("transpose needs a 2D tensor, got " + shape_str(x));
    Tensor out({x.cols(), x.rows()});
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
    return out;
}

// Row-wise softmax of (x * scale) with per-row max subtraction. Exponentials
// are elementwise f32; the normalizing sum accumulates in f64 (four fixed
// partial chains, deterministic order).
inline Tensor softmax_rows(const Tensor& x, double scale) {
    if (x.ndim() != 2 || x.cols() < 1) {
        throw DimensionError("softmax_rows needs a 2D tensor with nonempty rows, got " +
                             shape_str(x));
    }
    const int m = x.rows(), n = x.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const float* xr = x.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            const double s = static_cast<double>(xr[j]) * scale;
            if (s > mx) mx = s;
        }
        float* orow = out.row(i);
        for (int j = 0; j < n; ++j) {
            double a = static_cast<double>(xr[j]) * scale - mx;
            if (a < -104.0) a = -104.0;  // below f32 denormals; keeps exp in domain
            orow[j] = static_cast<float>(a);
        }
        detail::exp_row(orow, n);
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            s0 += orow[j];
            s1 += orow[j + 1];
            s2 += orow[j + 2];
            s3 += orow[j + 3];
        }
        for (; j < n; ++j) s0 += orow[j];
        const double inv = 1.0 / (((s0 + s1) + s2) + s3);
        for (j = 0; j < n; ++j) orow[j] = static_cast<float>(orow[j] * inv);
    }
    return out;
}

inline Tensor sample_gaussian(const std::vector<int>& shape, SeededRng& rng) {
    if (shape.empty()) throw DimensionError("sample_gaussian: empty shape");
    Tensor out(shape);
    for (float& v : out.flat()) v = rng.next_normal();
    return out;
}

}  // namespace ropedit

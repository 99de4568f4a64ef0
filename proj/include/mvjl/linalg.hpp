#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mvjl {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using Span = std::span<double>;

/// Compensated (Kahan) accumulator for long reductions.
struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) noexcept {
        const double y = x - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    double value() const noexcept { return sum; }
};

inline double dot(ConstSpan a, ConstSpan b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_sq(ConstSpan a) noexcept { return dot(a, a); }

inline double norm(ConstSpan a) noexcept { return std::sqrt(norm_sq(a)); }

inline bool all_finite(ConstSpan a) noexcept {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

/// y += A x with A row-major (rows x cols).
inline void matvec_add(ConstSpan A, std::size_t rows, std::size_t cols, ConstSpan x, Span y) noexcept {
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* row = A.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] += s;
    }
}

/// out = A^T v with A row-major (rows x cols), v of length rows, out of length cols.
inline void mat_transpose_vec(ConstSpan A, std::size_t rows, std::size_t cols, ConstSpan v, Span out) noexcept {
    for (std::size_t c = 0; c < cols; ++c) out[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = A.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * v[r];
    }
}

/// tr(sigma sigma^T H) with sigma (d x m) and H (d x d), both row-major.
inline double trace_sigma_sigmaT_H(ConstSpan sigma, std::size_t d, std::size_t m, ConstSpan H) noexcept {
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double sij = 0.0;  // (sigma sigma^T)_{ij}
            const double* ri = sigma.data() + i * m;
            const double* rj = sigma.data() + j * m;
            for (std::size_t l = 0; l < m; ++l) sij += ri[l] * rj[l];
            total += sij * H[j * d + i];
        }
    }
    return total;
}

/// Frobenius norm of a flat matrix.
inline double frobenius(ConstSpan A) noexcept { return norm(A); }

}  // namespace mvjl

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"

namespace mvjl {

using MeasureMap = std::function<double(const EmpiricalMeasure&)>;

struct LiftConfig {
    double h_fd = 1e-4;  // absolute floor; per-direction step is h_fd * max(1, |coordinate|)

    void validate() const {
        if (!(h_fd > 0.0) || h_fd > 0.1)
            throw std::invalid_argument("LiftConfig: h_fd must lie in (0, 0.1]");
    }
    double step_for(double coord) const noexcept { return h_fd * std::max(1.0, std::abs(coord)); }
};

/// The finite-dimensional lift: H evaluated at the uniform empirical measure
/// of the given atom list.
inline double lift_value(const MeasureMap& H, std::size_t dim, const Vec& atoms) {
    return H(EmpiricalMeasure(dim, atoms));
}

namespace detail {

inline double lift_at(const MeasureMap& H, std::size_t dim, Vec& atoms, std::size_t slot, double delta) {
    const double saved = atoms[slot];
    atoms[slot] = saved + delta;
    const double v = H(EmpiricalMeasure(dim, atoms));
    atoms[slot] = saved;
    return v;
}

}  // namespace detail

/// L-derivative of H at atom i: the lift's gradient in atom i carries a 1/K
/// factor, so the central difference is scaled back by K.
inline Vec l_derivative(const MeasureMap& H, const EmpiricalMeasure& mu, std::size_t i,
                        const LiftConfig& cfg = {}) {
    cfg.validate();
    if (i >= mu.size()) throw std::invalid_argument("l_derivative: atom index out of range");
    const std::size_t d = mu.dim();
    const double k = static_cast<double>(mu.size());
    Vec atoms(mu.atoms());
    Vec out(d);
    for (std::size_t r = 0; r < d; ++r) {
        const std::size_t slot = i * d + r;
        const double h = cfg.step_for(atoms[slot]);
        const double up = detail::lift_at(H, d, atoms, slot, +h);
        const double dn = detail::lift_at(H, d, atoms, slot, -h);
        out[r] = k * (up - dn) / (2.0 * h);
    }
    return out;
}

/// Mixed second derivative of H at a pair of distinct atoms:
/// d^2_mu H(mu)(x^i, x^j) from the off-diagonal lift identity (the cross
/// partial of the lift carries a 1/K^2 factor).
inline Vec l_derivative_hessian(const MeasureMap& H, const EmpiricalMeasure& mu, std::size_t i,
                                std::size_t j, const LiftConfig& cfg = {}) {
    cfg.validate();
    if (i >= mu.size() || j >= mu.size())
        throw std::invalid_argument("l_derivative_hessian: atom index out of range");
    if (i == j)
        throw std::invalid_argument(
            "l_derivative_hessian: atoms must differ; use l_derivative_jacobian for the diagonal");
    const std::size_t d = mu.dim();
    const double k = static_cast<double>(mu.size());
    Vec atoms(mu.atoms());
    Vec out(d * d);
    for (std::size_t r = 0; r < d; ++r) {
        const std::size_t si = i * d + r;
        const double hi = cfg.step_for(atoms[si]);
        for (std::size_t s = 0; s < d; ++s) {
            const std::size_t sj = j * d + s;
            const double hj = cfg.step_for(atoms[sj]);
            const double saved_i = atoms[si];
            const double saved_j = atoms[sj];
            double quad[4];
            int q = 0;
            for (double di : {+hi, -hi})
                for (double dj : {+hj, -hj}) {
                    atoms[si] = saved_i + di;
                    atoms[sj] = saved_j + dj;
                    quad[q++] = H(EmpiricalMeasure(d, atoms));
                }
            atoms[si] = saved_i;
            atoms[sj] = saved_j;
            out[r * d + s] = k * k * (quad[0] - quad[1] - quad[2] + quad[3]) / (4.0 * hi * hj);
        }
    }
    return out;
}

namespace detail {

/// d^2_mu H(mu)(y, y) at y = atom i, via a duplicated-atom lift: listing every
/// atom twice leaves the measure unchanged while providing two distinct lift
/// slots at the same point, so the off-diagonal identity applies at (y, y).
inline Vec dmu2_diagonal(const MeasureMap& H, const EmpiricalMeasure& mu, std::size_t i,
                         const LiftConfig& cfg) {
    const std::size_t d = mu.dim();
    const std::size_t k = mu.size();
    Vec doubled;
    doubled.reserve(2 * k * d);
    doubled.insert(doubled.end(), mu.atoms().begin(), mu.atoms().end());
    doubled.insert(doubled.end(), mu.atoms().begin(), mu.atoms().end());
    const EmpiricalMeasure mu2(d, doubled);
    return l_derivative_hessian(H, mu2, i, k + i, cfg);
}

}  // namespace detail

/// d_y d_mu H(mu)(x^i). The diagonal second lift derivative mixes the wanted
/// matrix with a d^2_mu/K contamination; the latter is estimated separately
/// and subtracted rather than assumed negligible.
inline Vec l_derivative_jacobian(const MeasureMap& H, const EmpiricalMeasure& mu, std::size_t i,
                                 const LiftConfig& cfg = {}) {
    cfg.validate();
    if (i >= mu.size()) throw std::invalid_argument("l_derivative_jacobian: atom index out of range");
    const std::size_t d = mu.dim();
    const double k = static_cast<double>(mu.size());
    Vec atoms(mu.atoms());
    Vec diag(d * d);
    const double center = H(EmpiricalMeasure(d, atoms));
    for (std::size_t r = 0; r < d; ++r) {
        const std::size_t sr = i * d + r;
        const double hr = cfg.step_for(atoms[sr]);
        for (std::size_t s = r; s < d; ++s) {
            double val;
            if (r == s) {
                const double up = detail::lift_at(H, d, atoms, sr, +hr);
                const double dn = detail::lift_at(H, d, atoms, sr, -hr);
                val = (up - 2.0 * center + dn) / (hr * hr);
            } else {
                const std::size_t ss = i * d + s;
                const double hs = cfg.step_for(atoms[ss]);
                const double saved_r = atoms[sr];
                const double saved_s = atoms[ss];
                double quad[4];
                int q = 0;
                for (double dr : {+hr, -hr})
                    for (double dsv : {+hs, -hs}) {
                        atoms[sr] = saved_r + dr;
                        atoms[ss] = saved_s + dsv;
                        quad[q++] = H(EmpiricalMeasure(d, atoms));
                    }
                atoms[sr] = saved_r;
                atoms[ss] = saved_s;
                val = (quad[0] - quad[1] - quad[2] + quad[3]) / (4.0 * hr * hs);
            }
            diag[r * d + s] = val;
            diag[s * d + r] = val;
        }
    }
    const Vec dmu2 = detail::dmu2_diagonal(H, mu, i, cfg);
    Vec out(d * d);
    for (std::size_t rs = 0; rs < d * d; ++rs) out[rs] = k * diag[rs] - dmu2[rs] / k;
    return out;
}

}  // namespace mvjl

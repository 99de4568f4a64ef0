#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/rng.hpp"

namespace mvjl {

/// Uniform atomic probability measure (1/K) sum of Dirac masses on R^d.
/// Immutable after construction; the mean and second moment are cached up
/// front so coefficient evaluations inside hot loops stay O(d).
class EmpiricalMeasure {
public:
    EmpiricalMeasure(std::size_t dim, Vec atoms) : dim_(dim), atoms_(std::move(atoms)) {
        if (dim_ == 0) throw std::invalid_argument("EmpiricalMeasure: dimension must be positive");
        if (atoms_.empty() || atoms_.size() % dim_ != 0)
            throw std::invalid_argument("EmpiricalMeasure: atom storage must hold K >= 1 points of dimension d");
        for (std::size_t i = 0; i < atoms_.size(); ++i)
            if (!std::isfinite(atoms_[i]))
                throw std::invalid_argument("EmpiricalMeasure: non-finite coordinate in atom " +
                                            std::to_string(i / dim_));
        mean_.assign(dim_, 0.0);
        std::vector<KahanSum> m(dim_);
        KahanSum s2;
        const std::size_t k = size();
        for (std::size_t i = 0; i < k; ++i) {
            const double* a = atoms_.data() + i * dim_;
            for (std::size_t r = 0; r < dim_; ++r) {
                m[r].add(a[r]);
                s2.add(a[r] * a[r]);
            }
        }
        for (std::size_t r = 0; r < dim_; ++r) mean_[r] = m[r].value() / static_cast<double>(k);
        second_moment_ = s2.value() / static_cast<double>(k);
        // finite atoms do not guarantee a finite square in floating point
        if (!std::isfinite(second_moment_))
            throw std::invalid_argument("EmpiricalMeasure: second moment overflows");
    }

    static EmpiricalMeasure dirac(ConstSpan x, std::size_t copies = 1) {
        if (copies == 0) throw std::invalid_argument("EmpiricalMeasure::dirac: copies must be >= 1");
        Vec atoms;
        atoms.reserve(x.size() * copies);
        for (std::size_t i = 0; i < copies; ++i) atoms.insert(atoms.end(), x.begin(), x.end());
        return EmpiricalMeasure(x.size(), std::move(atoms));
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return atoms_.size() / dim_; }
    ConstSpan atom(std::size_t i) const noexcept { return {atoms_.data() + i * dim_, dim_}; }
    const Vec& atoms() const noexcept { return atoms_; }
    ConstSpan mean() const noexcept { return mean_; }
    double second_moment() const noexcept { return second_moment_; }

private:
    std::size_t dim_;
    Vec atoms_;
    Vec mean_;
    double second_moment_ = 0.0;
};

inline double second_moment(const EmpiricalMeasure& mu) noexcept { return mu.second_moment(); }

/// (1/K) sum of phi over the atoms, scalar integrand.
inline double integrate(const EmpiricalMeasure& mu, const std::function<double(ConstSpan)>& phi) {
    KahanSum s;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double v = phi(mu.atom(i));
        if (!std::isfinite(v))
            throw std::runtime_error("integrate: integrand non-finite at atom " + std::to_string(i));
        s.add(v);
    }
    return s.value() / static_cast<double>(mu.size());
}

/// Vector integrand writing into an out-span of length out_dim.
inline Vec integrate(const EmpiricalMeasure& mu, std::size_t out_dim,
                     const std::function<void(ConstSpan, Span)>& phi) {
    std::vector<KahanSum> acc(out_dim);
    Vec buf(out_dim);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        phi(mu.atom(i), buf);
        for (std::size_t r = 0; r < out_dim; ++r) {
            if (!std::isfinite(buf[r]))
                throw std::runtime_error("integrate: integrand non-finite at atom " + std::to_string(i));
            acc[r].add(buf[r]);
        }
    }
    Vec out(out_dim);
    for (std::size_t r = 0; r < out_dim; ++r) out[r] = acc[r].value() / static_cast<double>(mu.size());
    return out;
}

namespace detail {

/// Exact minimum-cost assignment on a dense n x n cost matrix (row-major),
/// shortest augmenting paths with potentials, O(n^3). Returns the optimal
/// total cost; match[i] is the column assigned to row i.
inline double min_cost_assignment(const std::vector<double>& cost, std::size_t n, std::vector<int>& match) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    match.assign(n, -1);
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        match[p[j] - 1] = static_cast<int>(j - 1);
        total += cost[(p[j] - 1) * n + (j - 1)];
    }
    return total;
}

}  // namespace detail

/// Wasserstein-2 distance between equal-count uniform empirical measures.
/// d=1 uses the sorted coupling; otherwise an exact assignment solve.
inline double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim() != b.dim())
        throw std::invalid_argument("wasserstein2: dimension mismatch (" + std::to_string(a.dim()) +
                                    " vs " + std::to_string(b.dim()) + ")");
    if (a.size() != b.size())
        throw std::invalid_argument("wasserstein2: atom count mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    const std::size_t k = a.size();
    if (a.dim() == 1) {
        Vec xs(a.atoms()), ys(b.atoms());
        std::sort(xs.begin(), xs.end());
        std::sort(ys.begin(), ys.end());
        KahanSum s;
        for (std::size_t i = 0; i < k; ++i) {
            const double d = xs[i] - ys[i];
            s.add(d * d);
        }
        return std::sqrt(s.value() / static_cast<double>(k));
    }
    std::vector<double> cost(k * k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double c = 0.0;
            for (std::size_t r = 0; r < a.dim(); ++r) {
                const double d = a.atom(i)[r] - b.atom(j)[r];
                c += d * d;
            }
            cost[i * k + j] = c;
        }
    std::vector<int> match;
    const double total = detail::min_cost_assignment(cost, k, match);
    return std::sqrt(total / static_cast<double>(k));
}

/// Image of mu under x -> x + displacement(x); this is the shift map of the
/// L-derivative definition, so `displacement` is the perturbation direction.
inline EmpiricalMeasure pushforward(const EmpiricalMeasure& mu,
                                    const std::function<void(ConstSpan, Span)>& displacement) {
    const std::size_t d = mu.dim();
    Vec atoms(mu.atoms());
    Vec shift(d);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        displacement(mu.atom(i), shift);
        for (std::size_t r = 0; r < d; ++r) {
            atoms[i * d + r] += shift[r];
            if (!std::isfinite(atoms[i * d + r]))
                throw std::runtime_error("pushforward: non-finite image at atom " + std::to_string(i));
        }
    }
    return EmpiricalMeasure(d, std::move(atoms));
}

/// Convolution with N_d(0, variance * I), realized by one Gaussian draw per atom.
inline EmpiricalMeasure gaussian_mollify(const EmpiricalMeasure& mu, double variance, RandomStream& rng) {
    if (!(variance >= 0.0)) throw std::invalid_argument("gaussian_mollify: variance must be >= 0");
    if (variance == 0.0) return mu;
    const double sd = std::sqrt(variance);
    Vec atoms(mu.atoms());
    for (double& v : atoms) v += sd * rng.gaussian();
    return EmpiricalMeasure(mu.dim(), std::move(atoms));
}

}  // namespace mvjl

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvjl/lderiv.hpp"
#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/rng.hpp"
#include "mvjl/simulate.hpp"

namespace mvjl {

/// Gauss-Legendre nodes and weights on [0, 1]; exact for polynomials up to
/// degree 2n - 1.
inline std::pair<Vec, Vec> gauss_legendre_01(std::size_t n) {
    if (n < 2) throw std::invalid_argument("gauss_legendre_01: need at least 2 nodes");
    Vec nodes(n), weights(n);
    for (std::size_t i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = z;
            for (std::size_t k = 2; k <= n; ++k) {
                const double pk = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
                p0 = p1;
                p1 = pk;
            }
            dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        nodes[i] = 0.5 * (1.0 - z);  // descending z -> ascending node
        weights[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return {nodes, weights};
}

struct GeneratorConfig {
    std::size_t eta_nodes = 8;   // Gauss-Legendre nodes for the eta integral on [0,1]
    LiftConfig lift;             // finite-difference setup for numeric derivative fallbacks
    bool allow_numeric_derivatives = true;

    void validate() const {
        if (eta_nodes < 2) throw std::invalid_argument("GeneratorConfig: need at least 2 eta nodes");
        lift.validate();
    }
};

namespace detail {

[[noreturn]] inline void missing_derivative(const std::string& term) {
    throw std::runtime_error("apply_generator: test function lacks the derivative needed for the " +
                             term + " term and numeric fallbacks are disabled");
}

/// d_mu h(t, x, mu)(y) by the lift, for y not necessarily on the support:
/// the atom closest to y is relocated there, which perturbs the measure by
/// O(|y - atom| / K) and is exact when y is an atom.
inline Vec numeric_dmu_at(const TestFunction& h, double t, ConstSpan x, const EmpiricalMeasure& mu,
                          ConstSpan y, const LiftConfig& lift) {
    const std::size_t d = mu.dim();
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < mu.size(); ++l) {
        double dist = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double e = mu.atom(l)[r] - y[r];
            dist += e * e;
        }
        if (dist < best) {
            best = dist;
            nearest = l;
        }
    }
    Vec atoms(mu.atoms());
    for (std::size_t r = 0; r < d; ++r) atoms[nearest * d + r] = y[r];
    const EmpiricalMeasure moved(d, std::move(atoms));
    Vec tx(x.begin(), x.end());
    MeasureMap H = [&h, t, tx](const EmpiricalMeasure& nu) { return h.value(t, tx, nu); };
    return l_derivative(H, moved, nearest, lift);
}

inline Vec numeric_dydmu_at_atom(const TestFunction& h, double t, ConstSpan x,
                                 const EmpiricalMeasure& mu, std::size_t atom,
                                 const LiftConfig& lift) {
    Vec tx(x.begin(), x.end());
    MeasureMap H = [&h, t, tx](const EmpiricalMeasure& nu) { return h.value(t, tx, nu); };
    return l_derivative_jacobian(H, mu, atom, lift);
}

}  // namespace detail

/// The mean-field integro-differential generator applied to h at (t, x, mu):
/// time derivative, drift and diffusion terms in x, the two measure-derivative
/// integrals, the compensated jump term in x, and the eta-integrated jump term
/// acting on d_mu h. Measure integrals are exact atom averages; nu integrals
/// use the jump domain's shared quadrature.
inline double apply_generator(const CoefficientModel& model, const TestFunction& h, double t,
                              ConstSpan x, const EmpiricalMeasure& mu,
                              const GeneratorConfig& cfg = {}) {
    cfg.validate();
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    if (x.size() != d || mu.dim() != d)
        throw std::invalid_argument("apply_generator: dimension mismatch");
    if (!h.value) throw std::invalid_argument("apply_generator: test function has no value map");
    const std::size_t k = mu.size();
    const bool numeric_ok = cfg.allow_numeric_derivatives;

    double val = 0.0;

    if (h.dt) {
        val += h.dt(t, x, mu);
    } else if (numeric_ok) {
        const double ht = cfg.lift.step_for(t);
        val += (h.value(t + ht, x, mu) - h.value(t - ht, x, mu)) / (2.0 * ht);
    } else {
        detail::missing_derivative("time");
    }

    Vec dxh(d, 0.0);
    Vec fj(d);
    if (!h.x_free) {
        if (h.dx) {
            h.dx(t, x, mu, dxh);
        } else if (numeric_ok) {
            Vec xp(x.begin(), x.end());
            for (std::size_t r = 0; r < d; ++r) {
                const double hr = cfg.lift.step_for(xp[r]);
                const double saved = xp[r];
                xp[r] = saved + hr;
                const double up = h.value(t, xp, mu);
                xp[r] = saved - hr;
                const double dn = h.value(t, xp, mu);
                xp[r] = saved;
                dxh[r] = (up - dn) / (2.0 * hr);
            }
        } else {
            detail::missing_derivative("drift");
        }

        Vec b(d), sigma(d * m);
        model.drift(t, x, mu, b);
        val += dot(b, dxh);

        Vec dxxh(d * d, 0.0);
        if (h.dxx) {
            h.dxx(t, x, mu, dxxh);
        } else if (numeric_ok) {
            Vec xp(x.begin(), x.end());
            const double center = h.value(t, xp, mu);
            for (std::size_t r = 0; r < d; ++r) {
                const double hr = cfg.lift.step_for(xp[r]);
                for (std::size_t s = r; s < d; ++s) {
                    double v;
                    if (r == s) {
                        const double saved = xp[r];
                        xp[r] = saved + hr;
                        const double up = h.value(t, xp, mu);
                        xp[r] = saved - hr;
                        const double dn = h.value(t, xp, mu);
                        xp[r] = saved;
                        v = (up - 2.0 * center + dn) / (hr * hr);
                    } else {
                        const double hs = cfg.lift.step_for(xp[s]);
                        const double sr = xp[r], ss = xp[s];
                        double quad[4];
                        int q = 0;
                        for (double a : {+hr, -hr})
                            for (double bb : {+hs, -hs}) {
                                xp[r] = sr + a;
                                xp[s] = ss + bb;
                                quad[q++] = h.value(t, xp, mu);
                            }
                        xp[r] = sr;
                        xp[s] = ss;
                        v = (quad[0] - quad[1] - quad[2] + quad[3]) / (4.0 * hr * hs);
                    }
                    dxxh[r * d + s] = v;
                    dxxh[s * d + r] = v;
                }
            }
        } else {
            detail::missing_derivative("diffusion");
        }
        model.diffusion(t, x, mu, sigma);
        val += 0.5 * trace_sigma_sigmaT_H(sigma, d, m, dxxh);

        if (!model.zero_jump) {
            const JumpDomain& dom = model.jump_domain;
            const double h0 = h.value(t, x, mu);
            Vec shifted(d);
            KahanSum jump1;
            for (std::size_t j = 0; j < dom.node_count(); ++j) {
                model.jump(t, x, mu, dom.node(j), fj);
                for (std::size_t r = 0; r < d; ++r) shifted[r] = x[r] + fj[r];
                jump1.add(dom.weights[j] * (h.value(t, shifted, mu) - h0 - dot(fj, dxh)));
            }
            val += jump1.value();
        }
    }

    if (!h.zero_mu_derivatives) {
        auto dmu_at = [&](ConstSpan y, Span out) {
            if (h.dmu) {
                h.dmu(t, x, mu, y, out);
            } else if (numeric_ok) {
                const Vec g = detail::numeric_dmu_at(h, t, x, mu, y, cfg.lift);
                std::copy(g.begin(), g.end(), out.begin());
            } else {
                detail::missing_derivative("measure drift");
            }
        };

        // Atom-level d_mu h cache shared by the drift term and the eta term.
        Vec dmu_cache(k * d);
        for (std::size_t l = 0; l < k; ++l)
            dmu_at(mu.atom(l), Span{dmu_cache.data() + l * d, d});

        Vec b(d), sigma(d * m), dydmu(d * d);
        KahanSum drift_term, diff_term;
        for (std::size_t l = 0; l < k; ++l) {
            model.drift(t, mu.atom(l), mu, b);
            drift_term.add(dot(b, ConstSpan{dmu_cache.data() + l * d, d}));
            model.diffusion(t, mu.atom(l), mu, sigma);
            if (h.dydmu) {
                h.dydmu(t, x, mu, mu.atom(l), dydmu);
            } else if (numeric_ok) {
                const Vec g = detail::numeric_dydmu_at_atom(h, t, x, mu, l, cfg.lift);
                std::copy(g.begin(), g.end(), dydmu.begin());
            } else {
                detail::missing_derivative("measure diffusion");
            }
            diff_term.add(trace_sigma_sigmaT_H(sigma, d, m, dydmu));
        }
        val += drift_term.value() / static_cast<double>(k);
        val += 0.5 * diff_term.value() / static_cast<double>(k);

        if (!model.zero_jump) {
            const JumpDomain& dom = model.jump_domain;
            const auto [eta, eta_w] = gauss_legendre_01(cfg.eta_nodes);
            Vec fl(d), ys(d), g(d);
            KahanSum eta_term;
            for (std::size_t j = 0; j < dom.node_count(); ++j) {
                KahanSum atom_avg;
                for (std::size_t l = 0; l < k; ++l) {
                    model.jump(t, mu.atom(l), mu, dom.node(j), fl);
                    ConstSpan base{dmu_cache.data() + l * d, d};
                    for (std::size_t q = 0; q < eta.size(); ++q) {
                        for (std::size_t r = 0; r < d; ++r) ys[r] = mu.atom(l)[r] + eta[q] * fl[r];
                        dmu_at(ys, g);
                        double inner = 0.0;
                        for (std::size_t r = 0; r < d; ++r) inner += (g[r] - base[r]) * fl[r];
                        atom_avg.add(eta_w[q] * inner);
                    }
                }
                eta_term.add(dom.weights[j] * atom_avg.value() / static_cast<double>(k));
            }
            val += eta_term.value();
        }
    }
    return val;
}

struct OracleConfig {
    std::size_t replicates = 64;     // independent ensembles + tagged batches
    std::size_t substeps = 4;        // Euler steps inside the window
    std::size_t min_ensemble = 4096; // the initial measure is tiled up to this size
    std::size_t threads = 0;
};

struct OracleEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t replicates = 0;
    std::size_t paths = 0;
};

/// Independent Monte Carlo estimate of (d/ds) E h(s, X_s, mu_s) at s = t for a
/// tagged particle started at x: advances replicate ensembles initialized at mu
/// over one window delta and averages h over decoupled tagged paths. The
/// standard error is the replicate-level CLT estimate, which captures both the
/// tagged-path noise and the law-flow noise.
inline OracleEstimate generator_fd_oracle(const CoefficientModel& model, const TestFunction& h,
                                          double t, ConstSpan x, const EmpiricalMeasure& mu,
                                          double delta, std::size_t paths, RandomStream& rng,
                                          const OracleConfig& ocfg = {}) {
    if (!(delta > 0.0) || delta > 1e-2)
        throw std::invalid_argument("generator_fd_oracle: delta must lie in (0, 1e-2]");
    if (paths < 1000) throw std::invalid_argument("generator_fd_oracle: need at least 1e3 paths");
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const std::size_t reps = std::max<std::size_t>(2, ocfg.replicates);
    const std::size_t per_rep = std::max<std::size_t>(1, paths / reps);

    const std::size_t tiles = (ocfg.min_ensemble + mu.size() - 1) / mu.size();
    Vec ens_atoms;
    ens_atoms.reserve(tiles * mu.atoms().size());
    for (std::size_t c = 0; c < tiles; ++c)
        ens_atoms.insert(ens_atoms.end(), mu.atoms().begin(), mu.atoms().end());
    const std::size_t n_ens = tiles * mu.size();

    const double dt = delta / static_cast<double>(ocfg.substeps);
    const double h0 = h.value(t, x, mu);
    const double lam = model.zero_jump ? 0.0 : model.jump_domain.total_rate;

    Vec rep_values(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        RandomStream ens_rng = rng.child(2 * r);
        RandomStream tag_rng = rng.child(2 * r + 1);
        const PathBundle ens =
            detail::run_euler(model, t, dt, ocfg.substeps, n_ens, ens_rng.next_u64(), nullptr,
                              &ens_atoms, 0, nullptr, false, ocfg.threads);

        KahanSum sum;
        detail::StepScratch ws(model);
        Vec state(d), next(d), dB(m), mark(model.jump_domain.mark_dim);
        std::vector<Vec> marks;
        for (std::size_t path = 0; path < per_rep; ++path) {
            RandomStream ps = tag_rng.child(path);
            std::copy(x.begin(), x.end(), state.begin());
            for (std::size_t k = 0; k < ocfg.substeps; ++k) {
                const double tk = t + static_cast<double>(k) * dt;
                RandomStream bs = ps.child(k + 1, 0, static_cast<std::uint64_t>(Draw::brownian));
                bs.gaussian_fill(dB);
                const double sq = std::sqrt(dt);
                for (std::size_t rr = 0; rr < m; ++rr) dB[rr] *= sq;
                marks.clear();
                if (lam > 0.0) {
                    RandomStream cs = ps.child(k + 1, 0, static_cast<std::uint64_t>(Draw::jump_count));
                    const std::uint64_t n = cs.poisson(lam * dt);
                    if (n > 0) {
                        RandomStream msr = ps.child(k + 1, 0, static_cast<std::uint64_t>(Draw::mark));
                        for (std::uint64_t e = 0; e < n; ++e) {
                            model.jump_domain.sample_mark(msr, mark);
                            marks.push_back(mark);
                        }
                    }
                }
                detail::euler_step(model, tk, dt, state, ens.measure(k), dB, marks, nullptr, next, ws);
                std::swap(state, next);
            }
            sum.add(h.value(t + delta, state, ens.measure(ocfg.substeps)));
        }
        rep_values[r] = (sum.value() / static_cast<double>(per_rep) - h0) / delta;
    }

    OracleEstimate out;
    out.replicates = reps;
    out.paths = reps * per_rep;
    KahanSum mean;
    for (double v : rep_values) mean.add(v);
    out.value = mean.value() / static_cast<double>(reps);
    KahanSum var;
    for (double v : rep_values) var.add((v - out.value) * (v - out.value));
    out.std_error = std::sqrt(var.value() / (static_cast<double>(reps) * (reps - 1.0)));
    return out;
}

}  // namespace mvjl

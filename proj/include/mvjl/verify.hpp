#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvjl/functional.hpp"
#include "mvjl/generator.hpp"
#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/rng.hpp"
#include "mvjl/simulate.hpp"

namespace mvjl {

struct CheckResult {
    std::string name;
    double observed = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

/// Structured outcome of a verification operation. Every number is a pure
/// function of (seed, configuration), so reruns reproduce reports byte for
/// byte once serialized.
struct VerificationReport {
    std::string kind;
    std::uint64_t seed = 0;
    std::map<std::string, double> scalars;
    std::map<std::string, std::string> notes;
    std::vector<CheckResult> checks;
    std::vector<Table> tables;

    void check(const std::string& name, double observed, double bound) {
        checks.push_back({name, observed, bound, std::abs(observed) <= bound});
    }
    void check_signed(const std::string& name, double observed, double bound, bool pass) {
        checks.push_back({name, observed, bound, pass});
    }
    bool pass() const noexcept {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

namespace detail {

struct Summary {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    double rms = 0.0;
    std::size_t count = 0;
};

inline Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    KahanSum abs_sum, sq_sum;
    for (double v : values) {
        s.max_abs = std::max(s.max_abs, std::abs(v));
        abs_sum.add(std::abs(v));
        sq_sum.add(v * v);
    }
    s.mean_abs = abs_sum.value() / static_cast<double>(values.size());
    s.rms = std::sqrt(sq_sum.value() / static_cast<double>(values.size()));
    return s;
}

inline std::pair<double, double> mean_and_se(const std::vector<double>& values) {
    KahanSum m;
    for (double v : values) m.add(v);
    const double mean = m.value() / static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    KahanSum var;
    for (double v : values) var.add((v - mean) * (v - mean));
    const double se =
        std::sqrt(var.value() / (static_cast<double>(values.size()) * (values.size() - 1.0)));
    return {mean, se};
}

}  // namespace detail

/// Sufficiency-direction constructor: reads the three equations of the PIDE
/// system off a value function V. Defaults to g4 = 0; a caller-supplied g4 has
/// its nu-integral folded out of g1 so the sum constraint is preserved.
inline FunctionalSpec functional_from_value(
    const CoefficientModel& model, const TestFunction& V, const GeneratorConfig& gen_cfg = {},
    std::function<double(double, ConstSpan, const EmpiricalMeasure&, ConstSpan)> g4 = nullptr) {
    if (!V.value) throw std::invalid_argument("functional_from_value: V has no value map");
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;

    FunctionalSpec spec;
    spec.g4 = g4;
    spec.g1 = [model, V, gen_cfg, g4](double t, ConstSpan x, const EmpiricalMeasure& mu) {
        double v = apply_generator(model, V, t, x, mu, gen_cfg);
        if (g4) {
            const JumpDomain& dom = model.jump_domain;
            KahanSum s;
            for (std::size_t j = 0; j < dom.node_count(); ++j)
                s.add(dom.weights[j] * g4(t, x, mu, dom.node(j)));
            v -= s.value();
        }
        return v;
    };
    if (V.x_free) {
        spec.g2 = [](double, ConstSpan, const EmpiricalMeasure&, Span out) {
            std::fill(out.begin(), out.end(), 0.0);
        };
        spec.g3 = [](double, ConstSpan, const EmpiricalMeasure&, ConstSpan) { return 0.0; };
    } else {
        if (!V.dx) throw std::invalid_argument("functional_from_value: V lacks a spatial gradient");
        spec.g2 = [model, V, d, m](double t, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
            Vec sigma(d * m), grad(d);
            model.diffusion(t, x, mu, sigma);
            V.dx(t, x, mu, grad);
            mat_transpose_vec(sigma, d, m, grad, out);
        };
        spec.g3 = [model, V, d](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan u) {
            Vec f(d), shifted(d);
            model.jump(t, x, mu, u, f);
            for (std::size_t r = 0; r < d; ++r) shifted[r] = x[r] + f[r];
            return V.value(t, shifted, mu) - V.value(t, x, mu);
        };
    }
    return spec;
}

enum class SpecComponent { g1, g2, g3, g4 };

/// Same functional with one integrand shifted by a constant; used to probe the
/// necessity direction by falsification.
inline FunctionalSpec perturb_spec(FunctionalSpec spec, SpecComponent which, double amount) {
    switch (which) {
        case SpecComponent::g1: {
            auto base = spec.g1;
            spec.g1 = [base, amount](double t, ConstSpan x, const EmpiricalMeasure& mu) {
                return (base ? base(t, x, mu) : 0.0) + amount;
            };
            break;
        }
        case SpecComponent::g2: {
            auto base = spec.g2;
            spec.g2 = [base, amount](double t, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
                if (base)
                    base(t, x, mu, out);
                else
                    std::fill(out.begin(), out.end(), 0.0);
                for (double& v : out) v += amount;
            };
            break;
        }
        case SpecComponent::g3: {
            auto base = spec.g3;
            spec.g3 = [base, amount](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan u) {
                return (base ? base(t, x, mu, u) : 0.0) + amount;
            };
            break;
        }
        case SpecComponent::g4: {
            auto base = spec.g4;
            spec.g4 = [base, amount](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan u) {
                return (base ? base(t, x, mu, u) : 0.0) + amount;
            };
            break;
        }
    }
    return spec;
}

namespace detail {

/// RMS over particles of the endpoint gap between a dt run and a coupled dt/2
/// run (coarse Brownian increments are sums of fine pairs, fine jump events
/// replay onto the coarse grid, the law is frozen from the fine run). Used for
/// the scheme-aware default pathwise tolerance.
inline double euler_local_error_rms(const CoefficientModel& model, const SimulationConfig& cfg) {
    SimulationConfig fine_cfg = cfg;
    fine_cfg.steps = 2 * cfg.steps;
    const PathBundle fine = simulate_particle_system(model, fine_cfg);
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const double dt = cfg.dt();

    std::vector<double> gaps(cfg.particles);
    StepScratch ws(model);
    Vec state(d), next(d), dB(m);
    std::vector<Vec> marks;
    for (std::size_t i = 0; i < cfg.particles; ++i) {
        ConstSpan x0 = fine.state(0, i);
        std::copy(x0.begin(), x0.end(), state.begin());
        for (std::size_t k = 0; k < cfg.steps; ++k) {
            for (std::size_t r = 0; r < m; ++r)
                dB[r] = fine.increments(2 * k, i)[r] + fine.increments(2 * k + 1, i)[r];
            marks.clear();
            for (const JumpEvent& e : fine.events_for(2 * k, i)) marks.push_back(e.mark);
            for (const JumpEvent& e : fine.events_for(2 * k + 1, i)) marks.push_back(e.mark);
            euler_step(model, static_cast<double>(k) * dt, dt, state, fine.measure(2 * k), dB, marks,
                       nullptr, next, ws);
            std::swap(state, next);
        }
        double g = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double e = state[r] - fine.state(fine.steps, i)[r];
            g += e * e;
        }
        gaps[i] = std::sqrt(g);
    }
    return summarize(gaps).rms;
}

}  // namespace detail

/// Pathwise path-independence test on an existing bundle: for every particle
/// and for the four quarter sub-intervals plus the full span, both sides of
/// the defining identity are computed from the same stored randomness.
inline VerificationReport pathwise_test_on(const PathBundle& bundle, const TestFunction& V,
                                           const FunctionalSpec& spec, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("pathwise_test: tolerance must be positive");
    VerificationReport rep;
    rep.kind = "pathwise";
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t a = bundle.steps * q / 4;
        const std::size_t b = bundle.steps * (q + 1) / 4;
        if (a < b) spans.emplace_back(a, b);
    }
    spans.emplace_back(0, bundle.steps);

    Table tab;
    tab.name = "discrepancies";
    tab.columns = {"particle", "s_index", "t_index", "functional", "value_difference", "discrepancy"};
    std::vector<double> diffs;
    diffs.reserve(bundle.particles * spans.size());
    for (std::size_t i = 0; i < bundle.particles; ++i) {
        for (const auto& [a, b] : spans) {
            const double f = accumulate(spec, bundle, i, a, b);
            const double va = V.value(bundle.time(a), bundle.state(a, i), bundle.measure(a));
            const double vb = V.value(bundle.time(b), bundle.state(b, i), bundle.measure(b));
            const double diff = f - (vb - va);
            diffs.push_back(diff);
            tab.rows.push_back({static_cast<double>(i), static_cast<double>(a),
                                static_cast<double>(b), f, vb - va, diff});
        }
    }
    const detail::Summary s = detail::summarize(diffs);
    rep.scalars["max_abs"] = s.max_abs;
    rep.scalars["mean_abs"] = s.mean_abs;
    rep.scalars["rms"] = s.rms;
    rep.scalars["tolerance"] = tol;
    rep.check("max_discrepancy", s.max_abs, tol);
    rep.tables.push_back(std::move(tab));
    return rep;
}

/// Simulates once, then runs the pathwise test. tol <= 0 selects the
/// scheme-aware default 5 * RMS of the Euler local error.
inline VerificationReport pathwise_test(const CoefficientModel& model, const TestFunction& V,
                                        const FunctionalSpec& spec, const SimulationConfig& cfg,
                                        double tol) {
    cfg.validate();
    if (tol <= 0.0) tol = 5.0 * detail::euler_local_error_rms(model, cfg);
    const PathBundle bundle = simulate_particle_system(model, cfg);
    VerificationReport rep = pathwise_test_on(bundle, V, spec, tol);
    rep.seed = cfg.seed;
    return rep;
}

struct PointSample {
    double t = 0.0;
    Vec x;
    EmpiricalMeasure mu;
    std::string label;
};

/// Default residual grid: 3 times x 5 states x 3 measures (one raw empirical
/// measure, the same measure mollified with variance 1/100 and 1/10).
inline std::vector<PointSample> residual_sample_points(const CoefficientModel& model,
                                                       std::uint64_t seed, double horizon = 1.0,
                                                       std::size_t atoms = 32) {
    const std::size_t d = model.state_dim;
    RandomStream rng(seed);
    RandomStream draw = rng.child(1);
    Vec base_atoms(atoms * d);
    for (double& v : base_atoms) v = draw.gaussian();
    const EmpiricalMeasure raw(d, base_atoms);
    RandomStream m100 = rng.child(2);
    RandomStream m10 = rng.child(3);
    const std::vector<std::pair<std::string, EmpiricalMeasure>> measures = {
        {"raw", raw},
        {"mollified_n100", gaussian_mollify(raw, 1.0 / 100.0, m100)},
        {"mollified_n10", gaussian_mollify(raw, 1.0 / 10.0, m10)},
    };
    const std::vector<double> times = {0.0, horizon / 2.0, horizon};
    const std::vector<double> levels = {-2.0, -1.0, 0.0, 1.0, 2.0};
    std::vector<PointSample> points;
    points.reserve(times.size() * levels.size() * measures.size());
    for (double t : times)
        for (double lv : levels)
            for (const auto& [label, mu] : measures)
                points.push_back({t, Vec(d, lv), mu, label});
    return points;
}

/// Residuals of the three PIDE equations at the sample points; pass iff every
/// residual magnitude stays within tol.
inline VerificationReport pide_residuals(const CoefficientModel& model, const TestFunction& V,
                                         const FunctionalSpec& spec,
                                         std::span<const PointSample> points,
                                         const GeneratorConfig& gen_cfg, double tol) {
    VerificationReport rep;
    rep.kind = "residuals";
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const JumpDomain& dom = model.jump_domain;

    Table tab;
    tab.name = "residuals";
    tab.columns = {"point", "time", "r1", "r2", "r3_max"};
    double max_abs = 0.0;
    Vec g2(m), sig(d * m), grad(d), g2v(m), f(d), shifted(d);
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        const PointSample& pt = points[pi];
        const double lhs1 = apply_generator(model, V, pt.t, pt.x, pt.mu, gen_cfg);
        double rhs1 = spec.g1 ? spec.g1(pt.t, pt.x, pt.mu) : 0.0;
        if (spec.g4) {
            KahanSum s;
            for (std::size_t j = 0; j < dom.node_count(); ++j)
                s.add(dom.weights[j] * spec.g4(pt.t, pt.x, pt.mu, dom.node(j)));
            rhs1 += s.value();
        }
        const double r1 = lhs1 - rhs1;

        double r2 = 0.0;
        if (V.x_free) {
            std::fill(grad.begin(), grad.end(), 0.0);
            std::fill(g2.begin(), g2.end(), 0.0);
        } else {
            if (!V.dx) throw std::runtime_error("pide_residuals: V lacks a spatial gradient");
            model.diffusion(pt.t, pt.x, pt.mu, sig);
            V.dx(pt.t, pt.x, pt.mu, grad);
            mat_transpose_vec(sig, d, m, grad, g2);
        }
        if (spec.g2)
            spec.g2(pt.t, pt.x, pt.mu, g2v);
        else
            std::fill(g2v.begin(), g2v.end(), 0.0);
        for (std::size_t r = 0; r < m; ++r) r2 = std::max(r2, std::abs(g2[r] - g2v[r]));

        double r3 = 0.0;
        if (!model.zero_jump) {
            const double v0 = V.value(pt.t, pt.x, pt.mu);
            for (std::size_t j = 0; j < dom.node_count(); ++j) {
                model.jump(pt.t, pt.x, pt.mu, dom.node(j), f);
                for (std::size_t r = 0; r < d; ++r) shifted[r] = pt.x[r] + f[r];
                const double lhs3 = V.value(pt.t, shifted, pt.mu) - v0;
                const double rhs3 = spec.g3 ? spec.g3(pt.t, pt.x, pt.mu, dom.node(j)) : 0.0;
                r3 = std::max(r3, std::abs(lhs3 - rhs3));
            }
        }
        max_abs = std::max({max_abs, std::abs(r1), r2, r3});
        tab.rows.push_back({static_cast<double>(pi), pt.t, r1, r2, r3});
    }
    rep.scalars["max_abs"] = max_abs;
    rep.scalars["tolerance"] = tol;
    rep.check("max_residual", max_abs, tol);
    rep.tables.push_back(std::move(tab));
    return rep;
}

/// Expectation form of the Ito formula: the ensemble average of h along the
/// flow against the time integral of the generator. With replicates > 1 the
/// standard error comes from independent runs (needed when h varies only
/// through the measure); otherwise from the per-particle CLT.
inline VerificationReport ito_expectation_check(const CoefficientModel& model, const TestFunction& h,
                                                const SimulationConfig& cfg, std::vector<double> times,
                                                const GeneratorConfig& gen_cfg = {},
                                                std::size_t quad_nodes = 17,
                                                std::size_t replicates = 1,
                                                double richardson_c = 0.0) {
    cfg.validate();
    if (times.empty()) throw std::invalid_argument("ito_expectation_check: need at least one time");
    if (quad_nodes < 2) throw std::invalid_argument("ito_expectation_check: need >= 2 quadrature nodes");
    VerificationReport rep;
    rep.kind = "ito-check";
    rep.seed = cfg.seed;
    const double dt = cfg.dt();

    std::vector<std::size_t> t_idx;
    for (double t : times) {
        const auto k = static_cast<std::size_t>(std::llround(t / dt));
        if (k == 0 || k > cfg.steps || std::abs(static_cast<double>(k) * dt - t) > 1e-9 * cfg.horizon)
            throw std::invalid_argument("ito_expectation_check: time not on the grid");
        t_idx.push_back(k);
    }

    // right-side integrand at a grid index: particle average of (d_t + L)h
    auto integrand = [&](const PathBundle& bundle, std::size_t k) {
        const double t = bundle.time(k);
        const EmpiricalMeasure& mu = bundle.measure(k);
        if (h.x_free) return apply_generator(model, h, t, bundle.state(k, 0), mu, gen_cfg);
        KahanSum s;
        for (std::size_t i = 0; i < bundle.particles; ++i)
            s.add(apply_generator(model, h, t, bundle.state(k, i), mu, gen_cfg));
        return s.value() / static_cast<double>(bundle.particles);
    };

    const std::size_t reps = std::max<std::size_t>(replicates, 1);
    std::vector<std::vector<double>> left_reps(t_idx.size()), right_reps(t_idx.size());
    std::vector<std::vector<double>> particle_diffs(t_idx.size());
    for (std::size_t r = 0; r < reps; ++r) {
        SimulationConfig rc = cfg;
        if (reps > 1) rc.seed = RandomStream(cfg.seed).child(r).next_u64();
        const PathBundle bundle = simulate_particle_system(model, rc);
        // right-side integrand values are shared between requested times
        std::map<std::size_t, double> integrand_cache;
        auto integrand_at = [&](std::size_t k) {
            auto it = integrand_cache.find(k);
            if (it != integrand_cache.end()) return it->second;
            const double v = integrand(bundle, k);
            integrand_cache.emplace(k, v);
            return v;
        };
        for (std::size_t c = 0; c < t_idx.size(); ++c) {
            const std::size_t kt = t_idx[c];
            KahanSum left_sum;
            for (std::size_t i = 0; i < bundle.particles; ++i) {
                const double d0 = h.value(bundle.time(0), bundle.state(0, i), bundle.measure(0));
                const double d1 = h.value(bundle.time(kt), bundle.state(kt, i), bundle.measure(kt));
                left_sum.add(d1 - d0);
                if (reps == 1) particle_diffs[c].push_back(d1 - d0);
            }
            left_reps[c].push_back(left_sum.value() / static_cast<double>(bundle.particles));

            // composite trapezoid on an evenly spaced subset of grid nodes
            std::vector<std::size_t> nodes;
            const std::size_t q = std::min(quad_nodes, kt + 1);
            for (std::size_t j = 0; j < q; ++j) nodes.push_back((kt * j) / (q - 1));
            nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
            KahanSum right_sum;
            double prev_t = bundle.time(nodes[0]);
            double prev_v = integrand_at(nodes[0]);
            for (std::size_t j = 1; j < nodes.size(); ++j) {
                const double tj = bundle.time(nodes[j]);
                const double vj = integrand_at(nodes[j]);
                right_sum.add(0.5 * (vj + prev_v) * (tj - prev_t));
                prev_t = tj;
                prev_v = vj;
            }
            right_reps[c].push_back(right_sum.value());
        }
    }

    Table tab;
    tab.name = "ito_check";
    tab.columns = {"time", "left", "right", "gap", "std_error", "band"};
    for (std::size_t c = 0; c < t_idx.size(); ++c) {
        double left, se;
        if (reps == 1) {
            auto [l, s] = detail::mean_and_se(particle_diffs[c]);
            left = l;
            se = s;
        } else {
            auto [l, s] = detail::mean_and_se(left_reps[c]);
            left = l;
            se = s;
        }
        auto [right, right_se] = detail::mean_and_se(right_reps[c]);
        const double gap = left - right;
        const double band = 3.0 * std::sqrt(se * se + right_se * right_se) + richardson_c * dt;
        tab.rows.push_back({static_cast<double>(t_idx[c]) * dt, left, right, gap, se, band});
        rep.check("gap_at_t" + std::to_string(c), gap, band);
        rep.scalars["left_t" + std::to_string(c)] = left;
        rep.scalars["right_t" + std::to_string(c)] = right;
        rep.scalars["se_t" + std::to_string(c)] = se;
    }
    rep.tables.push_back(std::move(tab));
    return rep;
}

/// Time derivative of a measure functional along the flow versus the
/// drift/diffusion/jump representation evaluated on the same empirical flow;
/// paired over independent replicate runs.
inline VerificationReport measure_flow_derivative_check(const CoefficientModel& model,
                                                        const TestFunction& H,
                                                        const SimulationConfig& cfg,
                                                        std::vector<double> times,
                                                        std::size_t replicates, double half_window,
                                                        const GeneratorConfig& gen_cfg = {},
                                                        double band_c = 1.0) {
    cfg.validate();
    if (!H.x_free)
        throw std::invalid_argument("measure_flow_derivative_check: H must be a pure measure functional");
    if (replicates < 2) throw std::invalid_argument("measure_flow_derivative_check: need >= 2 replicates");
    const double dt = cfg.dt();
    const auto dk = static_cast<std::size_t>(std::llround(half_window / dt));
    if (dk == 0) throw std::invalid_argument("measure_flow_derivative_check: half_window below dt");

    VerificationReport rep;
    rep.kind = "flow-derivative";
    rep.seed = cfg.seed;
    Vec dummy_x(model.state_dim, 0.0);

    std::vector<std::size_t> t_idx;
    for (double t : times) {
        const auto k = static_cast<std::size_t>(std::llround(t / dt));
        if (k < dk || k + dk > cfg.steps)
            throw std::invalid_argument("measure_flow_derivative_check: window leaves the grid");
        t_idx.push_back(k);
    }

    std::vector<std::vector<double>> gaps(t_idx.size());
    std::vector<std::vector<double>> lefts(t_idx.size()), rights(t_idx.size());
    for (std::size_t r = 0; r < replicates; ++r) {
        SimulationConfig rc = cfg;
        rc.seed = RandomStream(cfg.seed).child(r).next_u64();
        const PathBundle bundle = simulate_particle_system(model, rc);
        for (std::size_t c = 0; c < t_idx.size(); ++c) {
            const std::size_t k = t_idx[c];
            const double up = H.value(bundle.time(k + dk), dummy_x, bundle.measure(k + dk));
            const double dn = H.value(bundle.time(k - dk), dummy_x, bundle.measure(k - dk));
            const double left = (up - dn) / (2.0 * static_cast<double>(dk) * dt);
            // H is time-free and x-free, so the generator reduces to the
            // three measure terms of the flow-derivative identity.
            const double right = apply_generator(model, H, bundle.time(k), dummy_x,
                                                 bundle.measure(k), gen_cfg);
            gaps[c].push_back(left - right);
            lefts[c].push_back(left);
            rights[c].push_back(right);
        }
    }

    Table tab;
    tab.name = "flow_derivative";
    tab.columns = {"time", "left", "right", "gap", "std_error", "band"};
    for (std::size_t c = 0; c < t_idx.size(); ++c) {
        auto [gap, se] = detail::mean_and_se(gaps[c]);
        const double left = detail::mean_and_se(lefts[c]).first;
        const double right = detail::mean_and_se(rights[c]).first;
        const double band = 3.0 * se + band_c * dt;
        tab.rows.push_back({static_cast<double>(t_idx[c]) * dt, left, right, gap, se, band});
        rep.check("gap_at_t" + std::to_string(c), gap, band);
        rep.scalars["left_t" + std::to_string(c)] = left;
        rep.scalars["right_t" + std::to_string(c)] = right;
        rep.scalars["se_t" + std::to_string(c)] = se;
    }
    rep.tables.push_back(std::move(tab));
    return rep;
}

struct FkValue {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t paths = 0;
};

/// Monte Carlo value of the nonlocal terminal-value representation: ensemble
/// law flow from mu, decoupled paths from x, payoff Phi at the horizon minus
/// the running g1 and nu-integrated g4 costs.
inline FkValue feynman_kac_value(
    const CoefficientModel& model, const std::function<double(ConstSpan, const EmpiricalMeasure&)>& Phi,
    const std::function<double(double, ConstSpan, const EmpiricalMeasure&)>& g1,
    const std::function<double(double, ConstSpan, const EmpiricalMeasure&, ConstSpan)>& g4, double t,
    ConstSpan x, const EmpiricalMeasure& mu, const SimulationConfig& cfg, std::size_t paths,
    RandomStream& rng) {
    cfg.validate();
    if (paths < 2) throw std::invalid_argument("feynman_kac_value: need at least two paths");
    const double dt = cfg.dt();
    const auto s_idx = static_cast<std::size_t>(std::llround(t / dt));
    if (std::abs(static_cast<double>(s_idx) * dt - t) > 1e-9 * cfg.horizon || s_idx >= cfg.steps)
        throw std::invalid_argument("feynman_kac_value: t must be a grid time before the horizon");
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    if (x.size() != d || mu.dim() != d)
        throw std::invalid_argument("feynman_kac_value: dimension mismatch");

    // law flow: tile mu's atoms up to the configured ensemble size
    const std::size_t tiles = std::max<std::size_t>(1, (cfg.particles + mu.size() - 1) / mu.size());
    Vec ens_atoms;
    ens_atoms.reserve(tiles * mu.atoms().size());
    for (std::size_t c = 0; c < tiles; ++c)
        ens_atoms.insert(ens_atoms.end(), mu.atoms().begin(), mu.atoms().end());
    RandomStream ens_seed = rng.child(0xE);
    const PathBundle ens = detail::run_euler(model, static_cast<double>(s_idx) * dt, dt,
                                             cfg.steps - s_idx, tiles * mu.size(), ens_seed.next_u64(),
                                             nullptr, &ens_atoms, 0, nullptr, false, cfg.threads);

    const JumpDomain& dom = model.jump_domain;
    const double lam = model.zero_jump ? 0.0 : dom.total_rate;
    detail::StepScratch ws(model);
    Vec state(d), next(d), dB(m), mark(dom.mark_dim);
    std::vector<Vec> marks;
    std::vector<double> payoffs(paths);
    RandomStream tag_root = rng.child(0xF);
    for (std::size_t p = 0; p < paths; ++p) {
        RandomStream ps = tag_root.child(p);
        std::copy(x.begin(), x.end(), state.begin());
        KahanSum running;
        for (std::size_t k = 0; k < ens.steps; ++k) {
            const double tk = ens.time(k);
            const EmpiricalMeasure& muk = ens.measure(k);
            if (g1) running.add(g1(tk, state, muk) * dt);
            if (g4) {
                KahanSum s;
                for (std::size_t j = 0; j < dom.node_count(); ++j)
                    s.add(dom.weights[j] * g4(tk, state, muk, dom.node(j)));
                running.add(s.value() * dt);
            }
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
                        dom.sample_mark(msr, mark);
                        marks.push_back(mark);
                    }
                }
            }
            detail::euler_step(model, tk, dt, state, muk, dB, marks, nullptr, next, ws);
            std::swap(state, next);
        }
        payoffs[p] = Phi(state, ens.measure(ens.steps)) - running.value();
    }
    auto [mean, se] = detail::mean_and_se(payoffs);
    return {mean, se, paths};
}

/// Girsanov system check: builds the functional of the log-weight, runs the
/// pathwise comparison of -d log Gamma against V differences on a tilted
/// bundle, and evaluates the residuals of the tilted PIDE system including
/// the intensity constraint lambda = exp(V(x + f) - V).
inline VerificationReport girsanov_system_check(const CoefficientModel& model,
                                                const GirsanovTilt& tilt, const TestFunction& V,
                                                const SimulationConfig& cfg,
                                                std::span<const PointSample> points,
                                                const GeneratorConfig& gen_cfg, double pathwise_tol,
                                                double residual_tol) {
    cfg.validate();
    VerificationReport rep;
    rep.kind = "girsanov";
    rep.seed = cfg.seed;
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;

    FunctionalSpec spec;
    spec.g1 = [&tilt, m](double t, ConstSpan x, const EmpiricalMeasure& mu) {
        Vec bt(m);
        tilt.drift_factor(t, x, mu, bt);
        return 0.5 * norm_sq(bt);
    };
    spec.g2 = [&tilt](double t, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
        tilt.drift_factor(t, x, mu, out);
    };
    spec.g3 = [&tilt](double t, ConstSpan, const EmpiricalMeasure&, ConstSpan u) {
        return std::log(tilt.intensity(t, u));
    };
    spec.g4 = [&tilt](double t, ConstSpan, const EmpiricalMeasure&, ConstSpan u) {
        const double lam = tilt.intensity(t, u);
        return std::log(lam) + (1.0 / lam - 1.0);
    };

    const PathBundle bundle = simulate_tilted(model, tilt, cfg);
    const auto comp = detail::girsanov_compensators(model, tilt, bundle);

    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t a = bundle.steps * q / 4;
        const std::size_t b = bundle.steps * (q + 1) / 4;
        if (a < b) spans.emplace_back(a, b);
    }
    spans.emplace_back(0, bundle.steps);

    Table tab;
    tab.name = "girsanov_pathwise";
    tab.columns = {"particle", "s_index", "t_index", "functional", "neg_dlog_gamma",
                   "value_difference", "discrepancy"};
    std::vector<double> diffs;
    double max_form_gap = 0.0;
    for (std::size_t i = 0; i < bundle.particles; ++i) {
        for (const auto& [a, b] : spans) {
            const double f = accumulate(spec, bundle, i, a, b);
            const auto wa = detail::girsanov_weight_with(tilt, bundle, i, a, comp);
            const auto wb = detail::girsanov_weight_with(tilt, bundle, i, b, comp);
            const double neg_dlog = -(wb.log_product - wa.log_product);
            max_form_gap = std::max(max_form_gap, std::abs(f - neg_dlog));
            const double va = V.value(bundle.time(a), bundle.state(a, i), bundle.measure(a));
            const double vb = V.value(bundle.time(b), bundle.state(b, i), bundle.measure(b));
            const double diff = f - (vb - va);
            diffs.push_back(diff);
            tab.rows.push_back({static_cast<double>(i), static_cast<double>(a),
                                static_cast<double>(b), f, neg_dlog, vb - va, diff});
        }
    }
    const detail::Summary s = detail::summarize(diffs);
    rep.scalars["pathwise_max_abs"] = s.max_abs;
    rep.scalars["pathwise_rms"] = s.rms;
    rep.scalars["log_gamma_form_gap"] = max_form_gap;
    rep.check("functional_matches_log_gamma", max_form_gap, 1e-9);
    rep.check("pathwise_max", s.max_abs, pathwise_tol);
    rep.tables.push_back(std::move(tab));

    // residuals of the tilted system
    Table rtab;
    rtab.name = "girsanov_residuals";
    rtab.columns = {"point", "time", "r1", "r2", "r3_max", "lambda_constraint_max"};
    const JumpDomain& dom = model.jump_domain;
    double max_r2 = 0.0, max_res = 0.0;
    Vec sig(d * m), grad(d), sg(m), bt(m), f(d), shifted(d);
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        const PointSample& pt = points[pi];
        const double gen = apply_generator(model, V, pt.t, pt.x, pt.mu, gen_cfg);
        if (V.x_free) {
            std::fill(sg.begin(), sg.end(), 0.0);
        } else {
            model.diffusion(pt.t, pt.x, pt.mu, sig);
            V.dx(pt.t, pt.x, pt.mu, grad);
            mat_transpose_vec(sig, d, m, grad, sg);
        }
        KahanSum nu_term;
        for (std::size_t j = 0; j < dom.node_count(); ++j) {
            const double lam = tilt.intensity(pt.t, dom.node(j));
            nu_term.add(dom.weights[j] * (std::log(lam) * lam + (1.0 - lam)));
        }
        const double r1 = gen - 0.5 * norm_sq(sg) - nu_term.value();

        tilt.drift_factor(pt.t, pt.x, pt.mu, bt);
        double r2 = 0.0;
        for (std::size_t r = 0; r < m; ++r) r2 = std::max(r2, std::abs(sg[r] - bt[r]));

        double r3 = 0.0, rc = 0.0;
        if (!model.zero_jump) {
            const double v0 = V.value(pt.t, pt.x, pt.mu);
            for (std::size_t j = 0; j < dom.node_count(); ++j) {
                model.jump(pt.t, pt.x, pt.mu, dom.node(j), f);
                for (std::size_t r = 0; r < d; ++r) shifted[r] = pt.x[r] + f[r];
                const double dv = V.value(pt.t, shifted, pt.mu) - v0;
                const double lam = tilt.intensity(pt.t, dom.node(j));
                r3 = std::max(r3, std::abs(dv - std::log(lam)));
                rc = std::max(rc, std::abs(lam - std::exp(dv)));
            }
        }
        max_r2 = std::max(max_r2, r2);
        max_res = std::max({max_res, std::abs(r1), r2, r3, rc});
        rtab.rows.push_back({static_cast<double>(pi), pt.t, r1, r2, r3, rc});
    }
    rep.scalars["residual_max_abs"] = max_res;
    rep.scalars["r2_max_abs"] = max_r2;
    rep.check("max_residual", max_res, residual_tol);
    rep.tables.push_back(std::move(rtab));
    return rep;
}

}  // namespace mvjl

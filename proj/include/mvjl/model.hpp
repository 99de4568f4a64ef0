#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/rng.hpp"

namespace mvjl {

/// Mark space data for the jump part: U = R^p with the Euclidean norm,
/// U_0 = { |u| <= radius }, nu a finite measure on U_0 with total mass
/// `total_rate`. The fixed quadrature {(u_j, w_j)} approximates integrals
/// against nu and is shared verbatim by the simulator's compensator, the
/// functional accumulator and the generator, so the three cancel term by term.
struct JumpDomain {
    std::size_t mark_dim = 1;
    double radius = 1.0;       // alpha
    double total_rate = 0.0;   // nu(U_0)
    std::function<void(RandomStream&, Span)> sample_mark;  // draws u ~ nu / total_rate
    Vec nodes;                 // J x mark_dim, row-major
    Vec weights;               // J, all positive, sum = total_rate

    std::size_t node_count() const noexcept { return weights.size(); }
    ConstSpan node(std::size_t j) const noexcept { return {nodes.data() + j * mark_dim, mark_dim}; }

    double integrate(const std::function<double(ConstSpan)>& g) const {
        KahanSum s;
        for (std::size_t j = 0; j < node_count(); ++j) s.add(weights[j] * g(node(j)));
        return s.value();
    }

    void validate() const {
        if (mark_dim == 0) throw std::invalid_argument("JumpDomain: mark dimension must be positive");
        if (!(radius > 0.0)) throw std::invalid_argument("JumpDomain: radius must be positive");
        if (total_rate > 0.0) {
            if (weights.empty() || nodes.size() != weights.size() * mark_dim)
                throw std::invalid_argument("JumpDomain: quadrature nodes/weights missing or inconsistent");
            KahanSum wsum;
            for (std::size_t j = 0; j < node_count(); ++j) {
                if (!(weights[j] > 0.0)) throw std::invalid_argument("JumpDomain: weights must be positive");
                if (norm(node(j)) > radius * (1.0 + 1e-12))
                    throw std::invalid_argument("JumpDomain: quadrature node outside U_0");
                wsum.add(weights[j]);
            }
            if (std::abs(wsum.value() - total_rate) > 1e-10)
                throw std::invalid_argument("JumpDomain: weights must sum to the total rate");
        }
    }
};

/// One-dimensional marks, nu = rate x Uniform([-alpha, alpha]). Quadrature
/// nodes sit at the quantile midpoints of `node_count` equal strata with
/// equal weights rate / node_count; deterministic, no seed involved.
inline JumpDomain uniform_jump_domain(double rate, double alpha, std::size_t node_count = 64) {
    if (!(rate >= 0.0)) throw std::invalid_argument("uniform_jump_domain: rate must be >= 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("uniform_jump_domain: alpha must be positive");
    if (node_count == 0) throw std::invalid_argument("uniform_jump_domain: need at least one node");
    JumpDomain dom;
    dom.mark_dim = 1;
    dom.radius = alpha;
    dom.total_rate = rate;
    dom.sample_mark = [alpha](RandomStream& rng, Span out) {
        out[0] = -alpha + 2.0 * alpha * rng.uniform01();
    };
    if (rate > 0.0) {
        dom.nodes.resize(node_count);
        dom.weights.assign(node_count, rate / static_cast<double>(node_count));
        for (std::size_t j = 0; j < node_count; ++j) {
            const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(node_count);
            dom.nodes[j] = -alpha + 2.0 * alpha * q;
        }
    }
    dom.validate();
    return dom;
}

using DriftFn = std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)>;
using DiffusionFn = std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)>;  // d x m row-major
using JumpCoefFn = std::function<void(double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span)>;

/// Evaluable coefficient data (b, sigma, f) plus the jump domain.
/// Evaluation maps must be reentrant: particle stepping calls them from
/// several threads at once.
struct CoefficientModel {
    std::string name = "custom";
    std::size_t state_dim = 1;     // d
    std::size_t brownian_dim = 1;  // m
    DriftFn drift;
    DiffusionFn diffusion;
    JumpCoefFn jump;
    JumpDomain jump_domain;
    bool zero_jump = false;  // f identically 0: jump machinery is skipped
    std::optional<double> lipschitz_bs;    // declared L1
    std::optional<double> lipschitz_jump;  // declared L2
};

struct TestBox {
    double horizon = 1.0;
    double radius = 5.0;
    std::size_t measure_atoms = 32;
};

/// Empirical certificate for the Lipschitz / linear-growth hypotheses on a
/// declared compact box; the conditions themselves are global, so this is
/// evidence, not proof.
struct HypothesisReport {
    double b_ratio = 0.0;            // max(Lipschitz ratio of b, |b(t,0,delta_0)|)
    double sigma_ratio = 0.0;        // sigma analogue
    double joint_bs_ratio = 0.0;     // (|db| + |dsigma|) / (|dx| + rho)
    double f_ratio = 0.0;            // per-unit-mark: max(Lipschitz, base point)
    double growth_bs = 0.0;          // (|b|^2 + |sigma|^2) / (1 + |x|^2 + mu(|.|^2))
    double growth_f = 0.0;           // |f|^2 / (|u|^2 (1 + |x|^2 + mu(|.|^2)))
    std::size_t samples = 0;
    std::optional<double> declared_l1;
    std::optional<double> declared_l2;
    std::vector<std::string> violations;
    TestBox box;
    std::uint64_t seed = 0;

    bool pass() const noexcept { return violations.empty(); }
};

inline HypothesisReport check_hypotheses(const CoefficientModel& model, std::size_t sample_count,
                                         RandomStream& rng, TestBox box = {}) {
    if (sample_count < 2) throw std::invalid_argument("check_hypotheses: sample_count must be >= 2");
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const std::size_t p = model.jump_domain.mark_dim;
    HypothesisReport rep;
    rep.samples = sample_count;
    rep.box = box;
    rep.declared_l1 = model.lipschitz_bs;
    rep.declared_l2 = model.lipschitz_jump;

    auto draw_point = [&](RandomStream& s, Span x) {
        for (double& v : x) v = box.radius * (2.0 * s.uniform01() - 1.0);
    };
    auto draw_measure = [&](RandomStream& s) {
        Vec atoms(box.measure_atoms * d);
        draw_point(s, atoms);
        return EmpiricalMeasure(d, std::move(atoms));
    };

    Vec x1(d), x2(d), b1(d), b2(d), s1(d * m), s2(d * m), f1(d), f2(d), u(p), zero(d, 0.0);
    const EmpiricalMeasure delta0 = EmpiricalMeasure::dirac(zero);
    for (std::size_t n = 0; n < sample_count; ++n) {
        RandomStream s = rng.child(n);
        const double t = box.horizon * s.uniform01();
        draw_point(s, x1);
        draw_point(s, x2);
        const EmpiricalMeasure mu1 = draw_measure(s);
        const EmpiricalMeasure mu2 = draw_measure(s);
        double dx2 = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double e = x1[r] - x2[r];
            dx2 += e * e;
        }
        const double denom = std::sqrt(dx2) + wasserstein2(mu1, mu2);

        model.drift(t, x1, mu1, b1);
        model.drift(t, x2, mu2, b2);
        model.diffusion(t, x1, mu1, s1);
        model.diffusion(t, x2, mu2, s2);
        if (!all_finite(b1) || !all_finite(s1))
            throw std::runtime_error("check_hypotheses: non-finite coefficient at sample " + std::to_string(n));
        double db = 0.0, ds = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double e = b1[r] - b2[r];
            db += e * e;
        }
        for (std::size_t r = 0; r < d * m; ++r) {
            const double e = s1[r] - s2[r];
            ds += e * e;
        }
        db = std::sqrt(db);
        ds = std::sqrt(ds);
        if (denom > 1e-12) {
            rep.b_ratio = std::max(rep.b_ratio, db / denom);
            rep.sigma_ratio = std::max(rep.sigma_ratio, ds / denom);
            rep.joint_bs_ratio = std::max(rep.joint_bs_ratio, (db + ds) / denom);
        }
        const double bulk1 = 1.0 + norm_sq(x1) + mu1.second_moment();
        rep.growth_bs = std::max(rep.growth_bs, (norm_sq(b1) + norm_sq(s1)) / bulk1);

        if (!model.zero_jump && model.jump_domain.total_rate > 0.0) {
            model.jump_domain.sample_mark(s, u);
            const double un = norm(u);
            if (un > 1e-12) {
                model.jump(t, x1, mu1, u, f1);
                model.jump(t, x2, mu2, u, f2);
                double df = 0.0;
                for (std::size_t r = 0; r < d; ++r) {
                    const double e = f1[r] - f2[r];
                    df += e * e;
                }
                df = std::sqrt(df);
                if (denom > 1e-12) rep.f_ratio = std::max(rep.f_ratio, df / (un * denom));
                rep.growth_f = std::max(rep.growth_f, norm_sq(f1) / (un * un * bulk1));
                model.jump(t, zero, delta0, u, f1);
                rep.f_ratio = std::max(rep.f_ratio, norm(f1) / un);
            }
        }

        model.drift(t, zero, delta0, b1);
        model.diffusion(t, zero, delta0, s1);
        const double base = norm(b1) + norm(s1);
        rep.b_ratio = std::max(rep.b_ratio, norm(b1));
        rep.sigma_ratio = std::max(rep.sigma_ratio, norm(s1));
        rep.joint_bs_ratio = std::max(rep.joint_bs_ratio, base);
    }

    constexpr double slack = 1e-9;
    if (model.lipschitz_bs && rep.joint_bs_ratio > *model.lipschitz_bs + slack)
        rep.violations.push_back("joint b/sigma ratio " + std::to_string(rep.joint_bs_ratio) +
                                 " exceeds declared L1 " + std::to_string(*model.lipschitz_bs));
    if (model.lipschitz_jump && rep.f_ratio > *model.lipschitz_jump + slack)
        rep.violations.push_back("jump ratio " + std::to_string(rep.f_ratio) +
                                 " exceeds declared L2 " + std::to_string(*model.lipschitz_jump));
    return rep;
}

enum class Provenance { analytic, numeric };

struct SuiteProvenance {
    Provenance dt = Provenance::analytic;
    Provenance dx = Provenance::analytic;
    Provenance dxx = Provenance::analytic;
    Provenance dmu = Provenance::analytic;
    Provenance dydmu = Provenance::analytic;
    Provenance dmu2 = Provenance::analytic;
};

/// Test function h(t, x, mu) with its derivative suite. Missing slots can be
/// filled numerically by the lift machinery; `provenance` records which.
///
/// `x_free` declares that the value and every derivative ignore x and that the
/// spatial derivatives vanish identically; `zero_mu_derivatives` declares that
/// the measure derivatives vanish identically. Consumers may skip the
/// corresponding terms, which are exact zeros.
struct TestFunction {
    std::string name = "custom";
    std::size_t dim = 1;
    std::function<double(double, ConstSpan, const EmpiricalMeasure&)> value;
    std::function<double(double, ConstSpan, const EmpiricalMeasure&)> dt;
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)> dx;    // d
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)> dxx;   // d x d
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span)> dmu;    // (y) -> d
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span)> dydmu;  // (y) -> d x d
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, ConstSpan, ConstSpan, Span)> dmu2;  // (y,y') -> d x d
    bool x_free = false;
    bool zero_mu_derivatives = false;
    SuiteProvenance provenance;
};

/// Additive-functional data (g1, g2, g3, g4). Empty slots read as zero.
struct FunctionalSpec {
    std::function<double(double, ConstSpan, const EmpiricalMeasure&)> g1;
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)> g2;  // m
    std::function<double(double, ConstSpan, const EmpiricalMeasure&, ConstSpan)> g3;
    std::function<double(double, ConstSpan, const EmpiricalMeasure&, ConstSpan)> g4;
};

namespace detail {

inline void require_keys(const std::string& who, const std::map<std::string, double>& params,
                         std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : params) {
        bool ok = false;
        for (const char* a : allowed)
            if (k == a) ok = true;
        if (!ok) throw std::invalid_argument(who + ": unknown parameter '" + k + "'");
    }
}

inline double param(const std::map<std::string, double>& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

}  // namespace detail

inline std::vector<std::string> builtin_model_names() {
    return {"linear_mean_field", "pure_diffusion", "zero_noise"};
}

/// Built-in analytic models, all d = m = 1:
///   linear_mean_field: b = b0 + a x + c mean(mu), sigma = sigma0, f = gamma u,
///                      nu = rate x Uniform([-alpha, alpha])
///   pure_diffusion:    same with gamma = 0
///   zero_noise:        sigma0 = 0 and gamma = 0
inline CoefficientModel builtin_model(const std::string& name, const std::map<std::string, double>& params) {
    const bool known = name == "linear_mean_field" || name == "pure_diffusion" || name == "zero_noise";
    if (!known) throw std::invalid_argument("builtin_model: unknown model '" + name + "'");
    detail::require_keys("builtin_model '" + name + "'", params,
                         {"a", "c", "b0", "sigma0", "gamma", "alpha", "rate", "nodes"});
    const double a = detail::param(params, "a", 0.0);
    const double c = detail::param(params, "c", 0.0);
    const double b0 = detail::param(params, "b0", 0.0);
    double sigma0 = detail::param(params, "sigma0", 0.0);
    double gamma = detail::param(params, "gamma", 0.0);
    const double alpha = detail::param(params, "alpha", 1.0);
    const double rate = detail::param(params, "rate", 2.0);
    const auto nodes = static_cast<std::size_t>(detail::param(params, "nodes", 64.0));
    if (name == "pure_diffusion") gamma = 0.0;
    if (name == "zero_noise") {
        sigma0 = 0.0;
        gamma = 0.0;
    }

    CoefficientModel model;
    model.name = name;
    model.state_dim = 1;
    model.brownian_dim = 1;
    model.drift = [a, c, b0](double, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
        out[0] = b0 + a * x[0] + c * mu.mean()[0];
    };
    model.diffusion = [sigma0](double, ConstSpan, const EmpiricalMeasure&, Span out) { out[0] = sigma0; };
    model.jump = [gamma](double, ConstSpan, const EmpiricalMeasure&, ConstSpan u, Span out) {
        out[0] = gamma * u[0];
    };
    model.jump_domain = uniform_jump_domain(rate, alpha, nodes);
    model.zero_jump = (gamma == 0.0);
    // |mean(mu1) - mean(mu2)| <= rho(mu1, mu2), so |a| + |c| bounds the joint
    // Lipschitz constant; the base-point display needs |b0| + sigma0.
    model.lipschitz_bs = std::max(std::abs(a) + std::abs(c), std::abs(b0) + std::abs(sigma0));
    model.lipschitz_jump = std::abs(gamma);
    return model;
}

inline std::vector<std::string> builtin_test_function_names() {
    return {"constant", "linear", "quadratic", "second_moment", "mean_squared"};
}

/// Built-in test functions with full analytic derivative suites:
///   constant:      h = c
///   linear:        h = <c 1, x>
///   quadratic:     h = q |x|^2 (Q = q I)
///   second_moment: h = mu(|.|^2)
///   mean_squared:  h = (mu(<c 1, .>))^2
inline TestFunction builtin_test_function(const std::string& name, std::size_t dim,
                                          const std::map<std::string, double>& params = {}) {
    if (dim == 0) throw std::invalid_argument("builtin_test_function: dimension must be positive");
    detail::require_keys("builtin_test_function '" + name + "'", params, {"c", "q"});
    const double c = detail::param(params, "c", 1.0);
    const double q = detail::param(params, "q", 1.0);
    const std::size_t d = dim;

    TestFunction h;
    h.name = name;
    h.dim = d;
    auto zero_vec = [](Span out) { std::fill(out.begin(), out.end(), 0.0); };
    h.dt = [](double, ConstSpan, const EmpiricalMeasure&) { return 0.0; };
    h.dx = [zero_vec](double, ConstSpan, const EmpiricalMeasure&, Span out) { zero_vec(out); };
    h.dxx = [zero_vec](double, ConstSpan, const EmpiricalMeasure&, Span out) { zero_vec(out); };
    h.dmu = [zero_vec](double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span out) { zero_vec(out); };
    h.dydmu = [zero_vec](double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span out) { zero_vec(out); };
    h.dmu2 = [zero_vec](double, ConstSpan, const EmpiricalMeasure&, ConstSpan, ConstSpan, Span out) {
        zero_vec(out);
    };

    if (name == "constant") {
        h.value = [c](double, ConstSpan, const EmpiricalMeasure&) { return c; };
        h.x_free = true;
        h.zero_mu_derivatives = true;
    } else if (name == "linear") {
        h.value = [c](double, ConstSpan x, const EmpiricalMeasure&) {
            double s = 0.0;
            for (double v : x) s += c * v;
            return s;
        };
        h.dx = [c](double, ConstSpan, const EmpiricalMeasure&, Span out) {
            std::fill(out.begin(), out.end(), c);
        };
        h.zero_mu_derivatives = true;
    } else if (name == "quadratic") {
        h.value = [q](double, ConstSpan x, const EmpiricalMeasure&) { return q * norm_sq(x); };
        h.dx = [q](double, ConstSpan x, const EmpiricalMeasure&, Span out) {
            for (std::size_t r = 0; r < x.size(); ++r) out[r] = 2.0 * q * x[r];
        };
        h.dxx = [q, d](double, ConstSpan, const EmpiricalMeasure&, Span out) {
            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t r = 0; r < d; ++r) out[r * d + r] = 2.0 * q;
        };
        h.zero_mu_derivatives = true;
    } else if (name == "second_moment") {
        h.value = [](double, ConstSpan, const EmpiricalMeasure& mu) { return mu.second_moment(); };
        h.dmu = [](double, ConstSpan, const EmpiricalMeasure&, ConstSpan y, Span out) {
            for (std::size_t r = 0; r < y.size(); ++r) out[r] = 2.0 * y[r];
        };
        h.dydmu = [d](double, ConstSpan, const EmpiricalMeasure&, ConstSpan, Span out) {
            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t r = 0; r < d; ++r) out[r * d + r] = 2.0;
        };
        h.x_free = true;
    } else if (name == "mean_squared") {
        auto lin_mean = [c](const EmpiricalMeasure& mu) {
            double s = 0.0;
            for (double v : mu.mean()) s += c * v;
            return s;
        };
        h.value = [lin_mean](double, ConstSpan, const EmpiricalMeasure& mu) {
            const double v = lin_mean(mu);
            return v * v;
        };
        h.dmu = [lin_mean, c](double, ConstSpan, const EmpiricalMeasure& mu, ConstSpan, Span out) {
            const double v = lin_mean(mu);
            std::fill(out.begin(), out.end(), 2.0 * v * c);
        };
        h.dmu2 = [c](double, ConstSpan, const EmpiricalMeasure&, ConstSpan, ConstSpan, Span out) {
            std::fill(out.begin(), out.end(), 2.0 * c * c);
        };
        h.x_free = true;
    } else {
        throw std::invalid_argument("builtin_test_function: unknown function '" + name + "'");
    }
    return h;
}

}  // namespace mvjl

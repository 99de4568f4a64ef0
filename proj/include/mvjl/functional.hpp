#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/rng.hpp"
#include "mvjl/simulate.hpp"

namespace mvjl {

/// Discrete additive functional along a stored path:
///   sum g1 dt + sum <g2, dB> + (event sum of g3 - quadrature compensator of g3)
///   + quadrature nu-integral of g4 in time,
/// all evaluated at the bundle's stored states, increments, events and law
/// flow, with the bundle's own jump-domain quadrature so the terms cancel the
/// simulator's update exactly. On tilted bundles the g3 compensator and the g4
/// integral carry the lambda(t,u) intensity weights, mirroring the simulator.
/// Empty g slots read as zero. Bundles from zero-jump models carry no Poisson
/// noise, so a nonzero g3 integrand is only meaningful on bundles with
/// jumps_simulated set.
inline double accumulate(const FunctionalSpec& spec, const PathBundle& bundle, std::size_t particle,
                         std::size_t s_index, std::size_t t_index) {
    if (particle >= bundle.particles)
        throw std::invalid_argument("accumulate: particle index out of range");
    if (!(s_index < t_index) || t_index > bundle.steps)
        throw std::invalid_argument("accumulate: need s_index < t_index within the grid");
    const double dt = bundle.dt;
    const JumpDomain& dom = bundle.jump_domain;
    const bool has_nu = dom.total_rate > 0.0 && dom.node_count() > 0;
    const bool g3_comp = has_nu && bundle.jumps_simulated && static_cast<bool>(spec.g3);
    const bool g4_term = has_nu && static_cast<bool>(spec.g4);

    KahanSum total;
    Vec g2(bundle.brownian_dim);
    for (std::size_t k = s_index; k < t_index; ++k) {
        const double t = bundle.time(k);
        ConstSpan x = bundle.state(k, particle);
        const EmpiricalMeasure& mu = bundle.measure(k);
        if (spec.g1) total.add(spec.g1(t, x, mu) * dt);
        if (spec.g2) {
            spec.g2(t, x, mu, g2);
            total.add(dot(g2, bundle.increments(k, particle)));
        }
        if (spec.g3) {
            for (const JumpEvent& e : bundle.events_for(k, particle))
                total.add(spec.g3(t, e.pre_state, mu, e.mark));
        }
        if (g3_comp || g4_term) {
            for (std::size_t j = 0; j < dom.node_count(); ++j) {
                double w = dom.weights[j];
                if (bundle.intensity) w *= bundle.intensity(t, dom.node(j));
                if (g3_comp) total.add(-dt * w * spec.g3(t, x, mu, dom.node(j)));
                if (g4_term) total.add(dt * w * spec.g4(t, x, mu, dom.node(j)));
            }
        }
    }
    return total.value();
}

/// Girsanov data: a drift factorization b = sigma b~ and a jump-intensity
/// thinning lambda(t, u) in (0, 1]. Whenever lambda(t,u) = 1 the model must
/// have f(t,x,mu,u) = 0.
struct GirsanovTilt {
    std::function<void(double, ConstSpan, const EmpiricalMeasure&, Span)> drift_factor;  // b~ (m)
    std::function<double(double, ConstSpan)> intensity;                                  // lambda(t, u)
};

/// Spot checks of the declared factorization |sigma b~ - b| <= 1e-10 and the
/// lambda range on sampled box points and quadrature nodes.
inline void validate_tilt(const CoefficientModel& model, const GirsanovTilt& tilt, RandomStream& rng,
                          std::size_t samples = 1000, TestBox box = {}) {
    if (!tilt.drift_factor || !tilt.intensity)
        throw std::invalid_argument("validate_tilt: tilt maps must be set");
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    Vec x(d), bt(m), b(d), sb(d), sigma(d * m), f(d);
    for (std::size_t n = 0; n < samples; ++n) {
        RandomStream s = rng.child(n);
        const double t = box.horizon * s.uniform01();
        for (double& v : x) v = box.radius * (2.0 * s.uniform01() - 1.0);
        Vec atoms(box.measure_atoms * d);
        for (double& v : atoms) v = box.radius * (2.0 * s.uniform01() - 1.0);
        const EmpiricalMeasure mu(d, std::move(atoms));
        tilt.drift_factor(t, x, mu, bt);
        model.drift(t, x, mu, b);
        model.diffusion(t, x, mu, sigma);
        std::fill(sb.begin(), sb.end(), 0.0);
        matvec_add(sigma, d, m, bt, sb);
        for (std::size_t r = 0; r < d; ++r)
            if (std::abs(sb[r] - b[r]) > 1e-10)
                throw std::invalid_argument("validate_tilt: sigma * b~ does not reproduce b (|diff| = " +
                                            std::to_string(std::abs(sb[r] - b[r])) + ")");
        const JumpDomain& dom = model.jump_domain;
        for (std::size_t j = 0; j < dom.node_count(); ++j) {
            const double lam = tilt.intensity(t, dom.node(j));
            if (!(lam > 0.0) || lam > 1.0)
                throw std::domain_error("validate_tilt: lambda outside (0,1]");
            if (lam == 1.0 && !model.zero_jump) {
                model.jump(t, x, mu, dom.node(j), f);
                if (norm(f) != 0.0)
                    throw std::invalid_argument(
                        "validate_tilt: lambda = 1 requires a vanishing jump coefficient");
            }
        }
    }
}

/// Thinned simulation: base-rate proposals accepted with probability
/// lambda(t, u); the compensator carries lambda-weighted quadrature weights.
/// With lambda = 1 and the same seed this is bit-identical to
/// simulate_particle_system.
inline PathBundle simulate_tilted(const CoefficientModel& model, const GirsanovTilt& tilt,
                                  const SimulationConfig& cfg) {
    cfg.validate();
    if (!tilt.intensity) throw std::invalid_argument("simulate_tilted: tilt intensity must be set");
    PathBundle bundle = detail::run_euler(model, 0.0, cfg.dt(), cfg.steps, cfg.particles, cfg.seed,
                                          &cfg.initial, nullptr, 0, &tilt.intensity, true, cfg.threads);
    bundle.intensity = tilt.intensity;
    return bundle;
}

struct GirsanovWeight {
    double gamma = 1.0;
    double log_product = 0.0;    // combined product form
    double log_four_term = 0.0;  // the four-term exponent with the explicit N~ compensator
};

namespace detail {

/// Per-step nu-quadrature pieces of the Gamma exponent; lambda depends only on
/// (t, u), so these are shared by every particle of a bundle.
struct GirsanovCompensators {
    Vec one_minus_lambda;    // dt * sum_j w_j (1 - lambda(t_k, u_j))
    Vec lambda_log_lambda;   // dt * sum_j w_j lambda log(lambda)(t_k, u_j)
};

inline GirsanovCompensators girsanov_compensators(const CoefficientModel& model,
                                                  const GirsanovTilt& tilt, const PathBundle& bundle) {
    GirsanovCompensators comp;
    comp.one_minus_lambda.assign(bundle.steps, 0.0);
    comp.lambda_log_lambda.assign(bundle.steps, 0.0);
    const JumpDomain& dom = model.jump_domain;
    if (model.zero_jump || dom.total_rate <= 0.0) return comp;
    for (std::size_t k = 0; k < bundle.steps; ++k) {
        const double t = bundle.time(k);
        KahanSum a, b;
        for (std::size_t j = 0; j < dom.node_count(); ++j) {
            const double lam = tilt.intensity(t, dom.node(j));
            if (!(lam > 0.0) || lam > 1.0)
                throw std::domain_error("girsanov_weight: lambda outside (0,1]");
            a.add(dom.weights[j] * (1.0 - lam));
            b.add(dom.weights[j] * lam * std::log(lam));
        }
        comp.one_minus_lambda[k] = bundle.dt * a.value();
        comp.lambda_log_lambda[k] = bundle.dt * b.value();
    }
    return comp;
}

inline GirsanovWeight girsanov_weight_with(const GirsanovTilt& tilt, const PathBundle& bundle,
                                           std::size_t particle, std::size_t t_index,
                                           const GirsanovCompensators& comp) {
    if (particle >= bundle.particles)
        throw std::invalid_argument("girsanov_weight: particle index out of range");
    if (t_index > bundle.steps) throw std::invalid_argument("girsanov_weight: time index out of range");
    const std::size_t m = bundle.brownian_dim;
    Vec bt(m);
    KahanSum brown, quad_var, ev_log, comp_1ml, comp_lll;
    for (std::size_t k = 0; k < t_index; ++k) {
        const double t = bundle.time(k);
        tilt.drift_factor(t, bundle.state(k, particle), bundle.measure(k), bt);
        brown.add(dot(bt, bundle.increments(k, particle)));
        quad_var.add(norm_sq(bt) * bundle.dt);
        for (const JumpEvent& e : bundle.events_for(k, particle)) {
            const double lam = tilt.intensity(t, e.mark);
            if (!(lam > 0.0) || lam > 1.0)
                throw std::domain_error("girsanov_weight: lambda outside (0,1] at an event");
            ev_log.add(std::log(lam));
        }
        comp_1ml.add(comp.one_minus_lambda[k]);
        comp_lll.add(comp.lambda_log_lambda[k]);
    }
    GirsanovWeight w;
    // Product form: exp{-sum<b~,dB> - 1/2 sum |b~|^2 dt} * prod_events 1/lambda
    //               * exp{-sum_k dt sum_j w_j (1 - lambda)}.
    w.log_product = -brown.value() - 0.5 * quad_var.value() - ev_log.value() - comp_1ml.value();
    // Four-term exponent: the N~_lambda integral of log(lambda) is the event
    // sum minus its lambda-weighted compensator, and the final nu-term adds
    // (log lambda) lambda + (1 - lambda).
    w.log_four_term = -brown.value() - 0.5 * quad_var.value() -
                      (ev_log.value() - comp_lll.value()) - (comp_lll.value() + comp_1ml.value());
    w.gamma = std::exp(w.log_product);
    const double scale = std::max(1.0, std::abs(w.log_product));
    if (std::abs(w.log_product - w.log_four_term) > 1e-9 * scale)
        throw std::logic_error("girsanov_weight: exponent forms disagree beyond roundoff");
    return w;
}

}  // namespace detail

inline GirsanovWeight girsanov_weight_forms(const CoefficientModel& model, const GirsanovTilt& tilt,
                                            const PathBundle& bundle, std::size_t particle,
                                            std::size_t t_index) {
    const auto comp = detail::girsanov_compensators(model, tilt, bundle);
    return detail::girsanov_weight_with(tilt, bundle, particle, t_index, comp);
}

/// Exponential martingale weight Gamma_{t_index} for one particle of a tilted
/// bundle. Always positive; the two algebraic forms of the exponent are
/// checked against each other on every call.
inline double girsanov_weight(const CoefficientModel& model, const GirsanovTilt& tilt,
                              const PathBundle& bundle, std::size_t particle, std::size_t t_index) {
    return girsanov_weight_forms(model, tilt, bundle, particle, t_index).gamma;
}

/// Gamma for every particle at several time indices, sharing the per-step
/// quadrature work; rows are particles, columns follow t_indices.
inline std::vector<Vec> girsanov_weights_all(const CoefficientModel& model, const GirsanovTilt& tilt,
                                             const PathBundle& bundle,
                                             std::span<const std::size_t> t_indices) {
    const auto comp = detail::girsanov_compensators(model, tilt, bundle);
    std::vector<Vec> out(bundle.particles, Vec(t_indices.size()));
    for (std::size_t i = 0; i < bundle.particles; ++i)
        for (std::size_t c = 0; c < t_indices.size(); ++c)
            out[i][c] = detail::girsanov_weight_with(tilt, bundle, i, t_indices[c], comp).gamma;
    return out;
}

/// Like girsanov_weights_all but keeping both exponent forms per entry.
inline std::vector<std::vector<GirsanovWeight>> girsanov_weight_table(
    const CoefficientModel& model, const GirsanovTilt& tilt, const PathBundle& bundle,
    std::span<const std::size_t> t_indices) {
    const auto comp = detail::girsanov_compensators(model, tilt, bundle);
    std::vector<std::vector<GirsanovWeight>> out(bundle.particles,
                                                 std::vector<GirsanovWeight>(t_indices.size()));
    for (std::size_t i = 0; i < bundle.particles; ++i)
        for (std::size_t c = 0; c < t_indices.size(); ++c)
            out[i][c] = detail::girsanov_weight_with(tilt, bundle, i, t_indices[c], comp);
    return out;
}

}  // namespace mvjl

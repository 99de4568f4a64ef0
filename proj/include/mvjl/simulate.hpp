#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/parallel.hpp"
#include "mvjl/rng.hpp"

namespace mvjl {

/// Stream purposes; together with (particle, step) they address every draw,
/// so acceptance draws in tilted runs never shift the mark draws.
enum class Draw : std::uint64_t { init = 1, brownian = 2, jump_count = 3, mark = 4, accept = 5 };

struct SimulationConfig {
    double horizon = 1.0;
    std::size_t steps = 100;
    std::size_t particles = 1;
    std::uint64_t seed = 0;
    std::function<void(RandomStream&, Span)> initial;  // draws X_0 into a d-span
    std::size_t threads = 0;                           // 0 = hardware concurrency

    double dt() const noexcept { return horizon / static_cast<double>(steps); }

    void validate() const {
        if (!(horizon > 0.0)) throw std::invalid_argument("SimulationConfig: horizon must be positive");
        if (steps == 0) throw std::invalid_argument("SimulationConfig: steps must be positive");
        if (particles == 0) throw std::invalid_argument("SimulationConfig: particles must be positive");
    }
};

inline std::function<void(RandomStream&, Span)> point_initial(Vec x) {
    return [x = std::move(x)](RandomStream&, Span out) {
        std::copy(x.begin(), x.end(), out.begin());
    };
}

inline std::function<void(RandomStream&, Span)> gaussian_initial(Vec mean, double sd) {
    return [mean = std::move(mean), sd](RandomStream& rng, Span out) {
        for (std::size_t r = 0; r < out.size(); ++r) out[r] = mean[r] + sd * rng.gaussian();
    };
}

struct JumpEvent {
    std::size_t step = 0;
    std::size_t particle = 0;
    Vec mark;       // u in U_0
    Vec pre_state;  // X at the start of the step (the left limit the scheme uses)
};

struct RejectedJump {
    std::size_t step = 0;
    std::size_t particle = 0;
    Vec mark;
    double accept_prob = 1.0;
    double uniform = 0.0;
};

/// Trajectories plus the exact noise that produced them. Replaying the Euler
/// recursion from column 0 with the stored increments and events reproduces
/// every state bit for bit.
struct PathBundle {
    std::size_t particles = 0;
    std::size_t state_dim = 0;
    std::size_t brownian_dim = 0;
    std::size_t steps = 0;
    double start_time = 0.0;
    double dt = 0.0;
    std::vector<double> states;    // (steps+1) x particles x d
    std::vector<double> brownian;  // steps x particles x m, already scaled by sqrt(dt)
    std::vector<JumpEvent> events;           // sorted by (step, particle, draw order)
    std::vector<EmpiricalMeasure> law;       // steps+1 entries, law[k] = empirical measure of column k
    JumpDomain jump_domain;                  // the quadrature the run's compensator used
    bool jumps_simulated = false;            // false for zero-jump models: no Poisson draws at all
    std::function<double(double, ConstSpan)> intensity;  // lambda(t,u) of a tilted run; empty = 1
    std::vector<RejectedJump> rejected;      // audit trail of thinning rejections

    double time(std::size_t k) const noexcept { return start_time + static_cast<double>(k) * dt; }

    ConstSpan state(std::size_t k, std::size_t i) const noexcept {
        return {states.data() + (k * particles + i) * state_dim, state_dim};
    }
    ConstSpan increments(std::size_t k, std::size_t i) const noexcept {
        return {brownian.data() + (k * particles + i) * brownian_dim, brownian_dim};
    }
    const EmpiricalMeasure& measure(std::size_t k) const { return law[k]; }

    /// Events of one (step, particle) cell, in generation order.
    std::span<const JumpEvent> events_for(std::size_t step, std::size_t particle) const noexcept {
        auto lo = std::lower_bound(events.begin(), events.end(), std::pair{step, particle},
                                   [](const JumpEvent& e, const std::pair<std::size_t, std::size_t>& key) {
                                       return std::pair{e.step, e.particle} < key;
                                   });
        std::size_t n = 0;
        for (auto it = lo; it != events.end() && it->step == step && it->particle == particle; ++it) ++n;
        if (n == 0) return {};
        return {&*lo, n};
    }
};

namespace detail {

struct StepScratch {
    Vec b, sigma, f;
    explicit StepScratch(const CoefficientModel& model)
        : b(model.state_dim), sigma(model.state_dim * model.brownian_dim), f(model.state_dim) {}
};

/// One explicit Euler step for one particle. All coefficients, the jump
/// coefficient and the compensator are evaluated at the pre-step state x and
/// the pre-step law mu; jumps apply after the drift/diffusion update. The
/// accumulator relies on reproducing these sums term by term, so the order of
/// operations here is part of the contract.
inline void euler_step(const CoefficientModel& model, double t, double dt, ConstSpan x,
                       const EmpiricalMeasure& mu, ConstSpan dB, std::span<const Vec> marks,
                       const std::function<double(double, ConstSpan)>* tilt, Span out,
                       StepScratch& ws) {
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    model.drift(t, x, mu, ws.b);
    model.diffusion(t, x, mu, ws.sigma);
    for (std::size_t r = 0; r < d; ++r) out[r] = x[r] + ws.b[r] * dt;
    matvec_add(ws.sigma, d, m, dB, out);
    if (!model.zero_jump) {
        for (const Vec& u : marks) {
            model.jump(t, x, mu, u, ws.f);
            for (std::size_t r = 0; r < d; ++r) out[r] += ws.f[r];
        }
        const JumpDomain& dom = model.jump_domain;
        for (std::size_t j = 0; j < dom.node_count(); ++j) {
            model.jump(t, x, mu, dom.node(j), ws.f);
            double w = dom.weights[j];
            if (tilt) w *= (*tilt)(t, dom.node(j));
            for (std::size_t r = 0; r < d; ++r) out[r] -= dt * w * ws.f[r];
        }
    }
}

/// Shared Euler engine. Initial states come either from `initial_atoms`
/// (particles x d) or from the sampler. `particle_offset` shifts the RNG
/// particle tag so independent copies get disjoint sub-streams.
inline PathBundle run_euler(const CoefficientModel& model, double start_time, double dt,
                            std::size_t steps, std::size_t particles, std::uint64_t seed,
                            const std::function<void(RandomStream&, Span)>* sampler,
                            const Vec* initial_atoms, std::size_t particle_offset,
                            const std::function<double(double, ConstSpan)>* tilt,
                            bool record_rejected, std::size_t threads) {
    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const std::size_t p = model.jump_domain.mark_dim;
    if (!(dt > 0.0) || steps == 0 || particles == 0)
        throw std::invalid_argument("run_euler: invalid grid");

    PathBundle bundle;
    bundle.particles = particles;
    bundle.state_dim = d;
    bundle.brownian_dim = m;
    bundle.steps = steps;
    bundle.start_time = start_time;
    bundle.dt = dt;
    bundle.states.resize((steps + 1) * particles * d);
    bundle.brownian.resize(steps * particles * m);
    bundle.law.reserve(steps + 1);
    bundle.jump_domain = model.jump_domain;
    bundle.jumps_simulated = !model.zero_jump && model.jump_domain.total_rate > 0.0;

    RandomStream root(seed);
    if (initial_atoms) {
        if (initial_atoms->size() != particles * d)
            throw std::invalid_argument("run_euler: initial atom count mismatch");
        std::copy(initial_atoms->begin(), initial_atoms->end(), bundle.states.begin());
    } else {
        if (!sampler || !*sampler) throw std::invalid_argument("run_euler: missing initial sampler");
        for (std::size_t i = 0; i < particles; ++i) {
            RandomStream s = root.child(particle_offset + i, 0, static_cast<std::uint64_t>(Draw::init));
            (*sampler)(s, Span{bundle.states.data() + i * d, d});
        }
    }
    if (!all_finite(ConstSpan{bundle.states.data(), particles * d}))
        throw std::runtime_error("run_euler: non-finite initial state");
    bundle.law.emplace_back(d, Vec(bundle.states.begin(), bundle.states.begin() + particles * d));

    const double lam = model.zero_jump ? 0.0 : model.jump_domain.total_rate;
    const std::size_t nthreads = resolve_threads(threads);

    std::vector<std::vector<JumpEvent>> chunk_events(nthreads);
    std::vector<std::vector<RejectedJump>> chunk_rejected(nthreads);

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = bundle.time(k);
        const EmpiricalMeasure& mu = bundle.law[k];
        for (auto& v : chunk_events) v.clear();
        for (auto& v : chunk_rejected) v.clear();

        parallel_chunks(particles, nthreads, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
            StepScratch ws(model);
            std::vector<Vec> marks;
            Vec mark(p);
            for (std::size_t i = begin; i < end; ++i) {
                const std::uint64_t tag = particle_offset + i;
                Span dB{bundle.brownian.data() + (k * particles + i) * m, m};
                RandomStream bs = root.child(tag, k + 1, static_cast<std::uint64_t>(Draw::brownian));
                bs.gaussian_fill(dB);
                const double sqdt = std::sqrt(dt);
                for (std::size_t r = 0; r < m; ++r) dB[r] *= sqdt;

                marks.clear();
                if (lam > 0.0) {
                    RandomStream cs = root.child(tag, k + 1, static_cast<std::uint64_t>(Draw::jump_count));
                    const std::uint64_t n = cs.poisson(lam * dt);
                    if (n > 0) {
                        RandomStream ms = root.child(tag, k + 1, static_cast<std::uint64_t>(Draw::mark));
                        RandomStream as = root.child(tag, k + 1, static_cast<std::uint64_t>(Draw::accept));
                        for (std::uint64_t e = 0; e < n; ++e) {
                            model.jump_domain.sample_mark(ms, mark);
                            if (norm(mark) > model.jump_domain.radius * (1.0 + 1e-12))
                                throw std::domain_error("simulate: sampled mark outside U_0 at step " +
                                                        std::to_string(k));
                            bool accepted = true;
                            if (tilt) {
                                const double prob = (*tilt)(t, mark);
                                if (!(prob > 0.0) || prob > 1.0)
                                    throw std::domain_error("simulate: intensity tilt outside (0,1]");
                                const double uni = as.uniform01();
                                accepted = uni < prob;
                                if (!accepted && record_rejected)
                                    chunk_rejected[chunk].push_back(
                                        {k, i, mark, prob, uni});
                            }
                            if (accepted) marks.push_back(mark);
                        }
                    }
                }

                ConstSpan x = bundle.state(k, i);
                Span out{bundle.states.data() + ((k + 1) * particles + i) * d, d};
                euler_step(model, t, dt, x, mu, dB, marks, tilt, out, ws);
                if (!all_finite(out))
                    throw std::runtime_error("simulate: non-finite state (particle " + std::to_string(i) +
                                             ", step " + std::to_string(k) + ")");
                for (const Vec& u : marks)
                    chunk_events[chunk].push_back({k, i, u, Vec(x.begin(), x.end())});
            }
        });

        for (auto& v : chunk_events)
            for (auto& e : v) bundle.events.push_back(std::move(e));
        for (auto& v : chunk_rejected)
            for (auto& e : v) bundle.rejected.push_back(std::move(e));

        const std::size_t off = (k + 1) * particles * d;
        bundle.law.emplace_back(d, Vec(bundle.states.begin() + off,
                                       bundle.states.begin() + off + particles * d));
    }
    return bundle;
}

}  // namespace detail

/// Self-consistent interacting particle system: the law feeding the
/// coefficients at step k is the ensemble's own empirical measure.
/// Deterministic in (model, cfg, seed), independent of thread count.
inline PathBundle simulate_particle_system(const CoefficientModel& model, const SimulationConfig& cfg) {
    cfg.validate();
    return detail::run_euler(model, 0.0, cfg.dt(), cfg.steps, cfg.particles, cfg.seed, &cfg.initial,
                             nullptr, 0, nullptr, false, cfg.threads);
}

/// Single-particle path along a frozen law flow (decoupled equation). The
/// flow must cover grid indices s_index..steps of cfg's grid.
struct SinglePath {
    std::size_t start_index = 0;
    std::size_t state_dim = 0;
    std::size_t brownian_dim = 0;
    double dt = 0.0;
    std::vector<double> states;    // (steps - start_index + 1) x d
    std::vector<double> brownian;  // (steps - start_index) x m
    std::vector<JumpEvent> events; // step indices are absolute grid indices

    ConstSpan state(std::size_t k) const noexcept {  // absolute grid index
        return {states.data() + (k - start_index) * state_dim, state_dim};
    }
};

inline SinglePath simulate_decoupled(const CoefficientModel& model,
                                     std::span<const EmpiricalMeasure> law_flow, ConstSpan x,
                                     std::size_t s_index, const SimulationConfig& cfg,
                                     RandomStream& rng) {
    cfg.validate();
    if (x.size() != model.state_dim)
        throw std::invalid_argument("simulate_decoupled: state dimension mismatch");
    if (law_flow.size() != cfg.steps + 1)
        throw std::invalid_argument("simulate_decoupled: law flow must cover the full grid");
    if (s_index >= cfg.steps)
        throw std::invalid_argument("simulate_decoupled: start index past the grid end");

    const std::size_t d = model.state_dim;
    const std::size_t m = model.brownian_dim;
    const std::size_t p = model.jump_domain.mark_dim;
    const double dt = cfg.dt();
    SinglePath path;
    path.start_index = s_index;
    path.state_dim = d;
    path.brownian_dim = m;
    path.dt = dt;
    path.states.assign((cfg.steps - s_index + 1) * d, 0.0);
    path.brownian.assign((cfg.steps - s_index) * m, 0.0);
    std::copy(x.begin(), x.end(), path.states.begin());

    detail::StepScratch ws(model);
    std::vector<Vec> marks;
    Vec mark(p);
    const double lam = model.zero_jump ? 0.0 : model.jump_domain.total_rate;
    for (std::size_t k = s_index; k < cfg.steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        Span dB{path.brownian.data() + (k - s_index) * m, m};
        RandomStream bs = rng.child(k + 1, 0, static_cast<std::uint64_t>(Draw::brownian));
        bs.gaussian_fill(dB);
        const double sqdt = std::sqrt(dt);
        for (std::size_t r = 0; r < m; ++r) dB[r] *= sqdt;
        marks.clear();
        if (lam > 0.0) {
            RandomStream cs = rng.child(k + 1, 0, static_cast<std::uint64_t>(Draw::jump_count));
            const std::uint64_t n = cs.poisson(lam * dt);
            if (n > 0) {
                RandomStream ms = rng.child(k + 1, 0, static_cast<std::uint64_t>(Draw::mark));
                for (std::uint64_t e = 0; e < n; ++e) {
                    model.jump_domain.sample_mark(ms, mark);
                    marks.push_back(mark);
                }
            }
        }
        ConstSpan xin = path.state(k);
        Span out{path.states.data() + (k + 1 - s_index) * d, d};
        detail::euler_step(model, t, dt, xin, law_flow[k], dB, marks, nullptr, out, ws);
        if (!all_finite(out))
            throw std::runtime_error("simulate_decoupled: non-finite state at step " + std::to_string(k));
        for (const Vec& u : marks) path.events.push_back({k, 0, u, Vec(xin.begin(), xin.end())});
    }
    return path;
}

/// K independent single-particle systems with disjoint sub-streams; copy 0
/// coincides bit for bit with simulate_particle_system at particles = 1.
inline std::vector<PathBundle> independent_copies(const CoefficientModel& model, std::size_t copies,
                                                  const SimulationConfig& cfg) {
    if (copies == 0) throw std::invalid_argument("independent_copies: need at least one copy");
    cfg.validate();
    std::vector<PathBundle> out;
    out.reserve(copies);
    for (std::size_t l = 0; l < copies; ++l)
        out.push_back(detail::run_euler(model, 0.0, cfg.dt(), cfg.steps, 1, cfg.seed, &cfg.initial,
                                        nullptr, l, nullptr, false, 1));
    return out;
}

}  // namespace mvjl

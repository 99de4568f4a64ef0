#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvjl/generator.hpp"
#include "mvjl/lderiv.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/report.hpp"
#include "mvjl/simulate.hpp"
#include "mvjl/verify.hpp"

namespace mvjl {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    if (!obj.is_object()) throw std::invalid_argument(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.contains(it.key()))
            throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
}

inline double require_number(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw std::invalid_argument(where + ": missing key '" + key + "'");
    if (!obj[key].is_number()) throw std::invalid_argument(where + "." + key + ": expected a number");
    return obj[key].get<double>();
}

inline double number_or(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    return obj[key].get<double>();
}

inline std::map<std::string, double> params_map(const json& obj, const std::string& where) {
    std::map<std::string, double> out;
    if (!obj.is_object()) throw std::invalid_argument(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!it.value().is_number()) throw std::invalid_argument(where + "." + it.key() + ": expected a number");
        out[it.key()] = it.value().get<double>();
    }
    return out;
}

inline Vec vec_field(const json& v, std::size_t dim, const std::string& where) {
    if (v.is_number()) return Vec(dim, v.get<double>());
    if (v.is_array()) {
        Vec out;
        for (const auto& e : v) out.push_back(e.get<double>());
        if (out.size() != dim) throw std::invalid_argument(where + ": expected " + std::to_string(dim) + " entries");
        return out;
    }
    throw std::invalid_argument(where + ": expected a number or array");
}

inline CoefficientModel parse_model(const json& cfg) {
    if (!cfg.contains("model")) throw std::invalid_argument("config: missing 'model'");
    const json& mj = cfg["model"];
    reject_unknown_keys(mj, {"name", "params"}, "model");
    if (!mj.contains("name") || !mj["name"].is_string())
        throw std::invalid_argument("model.name: expected a string");
    return builtin_model(mj["name"].get<std::string>(),
                         mj.contains("params") ? params_map(mj["params"], "model.params")
                                               : std::map<std::string, double>{});
}

inline TestFunction parse_test_function(const json& cfg, const char* key, std::size_t dim) {
    if (!cfg.contains(key)) throw std::invalid_argument(std::string("config: missing '") + key + "'");
    const json& fj = cfg[key];
    reject_unknown_keys(fj, {"name", "params"}, key);
    if (!fj.contains("name") || !fj["name"].is_string())
        throw std::invalid_argument(std::string(key) + ".name: expected a string");
    return builtin_test_function(fj["name"].get<std::string>(), dim,
                                 fj.contains("params")
                                     ? params_map(fj["params"], std::string(key) + ".params")
                                     : std::map<std::string, double>{});
}

inline std::string provenance_note(const TestFunction& h) {
    auto tag = [](Provenance p) { return p == Provenance::analytic ? "analytic" : "numeric"; };
    return std::string("dt=") + tag(h.provenance.dt) + ",dx=" + tag(h.provenance.dx) +
           ",dxx=" + tag(h.provenance.dxx) + ",dmu=" + tag(h.provenance.dmu) +
           ",dydmu=" + tag(h.provenance.dydmu) + ",dmu2=" + tag(h.provenance.dmu2);
}

inline SimulationConfig parse_simulation(const json& cfg, std::size_t dim, std::uint64_t seed,
                                         std::size_t threads) {
    if (!cfg.contains("simulation")) throw std::invalid_argument("config: missing 'simulation'");
    const json& sj = cfg["simulation"];
    reject_unknown_keys(sj, {"horizon", "steps", "particles", "initial"}, "simulation");
    SimulationConfig sim;
    sim.horizon = require_number(sj, "horizon", "simulation");
    sim.steps = static_cast<std::size_t>(require_number(sj, "steps", "simulation"));
    sim.particles = static_cast<std::size_t>(require_number(sj, "particles", "simulation"));
    sim.seed = seed;
    sim.threads = threads;
    if (!sj.contains("initial")) throw std::invalid_argument("simulation: missing 'initial'");
    const json& ij = sj["initial"];
    reject_unknown_keys(ij, {"kind", "value", "mean", "sd", "low", "high"}, "simulation.initial");
    const std::string kind = ij.contains("kind") ? ij["kind"].get<std::string>() : "";
    if (kind == "point") {
        sim.initial = point_initial(vec_field(ij.at("value"), dim, "simulation.initial.value"));
    } else if (kind == "gaussian") {
        sim.initial = gaussian_initial(vec_field(ij.at("mean"), dim, "simulation.initial.mean"),
                                       require_number(ij, "sd", "simulation.initial"));
    } else if (kind == "uniform") {
        const double lo = require_number(ij, "low", "simulation.initial");
        const double hi = require_number(ij, "high", "simulation.initial");
        if (!(hi >= lo)) throw std::invalid_argument("simulation.initial: need high >= low");
        sim.initial = [lo, hi](RandomStream& rng, Span out) {
            for (double& v : out) v = lo + (hi - lo) * rng.uniform01();
        };
    } else {
        throw std::invalid_argument("simulation.initial.kind: expected point|gaussian|uniform");
    }
    sim.validate();
    return sim;
}

inline std::optional<std::pair<SpecComponent, double>> parse_perturbation(const json& cfg) {
    if (!cfg.contains("perturbation")) return std::nullopt;
    const json& pj = cfg["perturbation"];
    reject_unknown_keys(pj, {"component", "amount"}, "perturbation");
    const std::string comp = pj.at("component").get<std::string>();
    const double amount = require_number(pj, "amount", "perturbation");
    if (comp == "g1") return {{SpecComponent::g1, amount}};
    if (comp == "g2") return {{SpecComponent::g2, amount}};
    if (comp == "g3") return {{SpecComponent::g3, amount}};
    if (comp == "g4") return {{SpecComponent::g4, amount}};
    throw std::invalid_argument("perturbation.component: expected g1|g2|g3|g4");
}

inline std::vector<double> parse_times(const json& cfg, const char* key) {
    if (!cfg.contains(key)) throw std::invalid_argument(std::string("config: missing '") + key + "'");
    std::vector<double> out;
    for (const auto& e : cfg[key]) out.push_back(e.get<double>());
    if (out.empty()) throw std::invalid_argument(std::string(key) + ": must not be empty");
    return out;
}

}  // namespace detail

struct RunOutcome {
    nlohmann::json report;
    std::map<std::string, std::string> tables;  // filename -> csv body
    bool pass = false;
};

namespace detail {

inline void finish(RunOutcome& out, VerificationReport rep, const json& config) {
    rep.notes["config_digest"] = "fnv1a:" + hex64(fnv1a(config.dump()));
    rep.notes["version"] = kVersion;
    out.pass = rep.pass();
    for (const Table& t : rep.tables) out.tables[t.name + ".csv"] = to_csv(t);
    out.report = report_to_json(rep);
}

inline const std::set<std::string> kCommonKeys = {"experiment", "seed", "threads", "output",
                                                  "model", "simulation"};

inline std::set<std::string> with_common(std::initializer_list<const char*> extra) {
    std::set<std::string> keys = kCommonKeys;
    for (const char* k : extra) keys.insert(k);
    return keys;
}

inline RunOutcome run_simulate(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"outputs"}), "config");
    const CoefficientModel model = parse_model(cfg);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    bool write_states = false, write_events = true;
    if (cfg.contains("outputs")) {
        reject_unknown_keys(cfg["outputs"], {"states", "events"}, "outputs");
        write_states = cfg["outputs"].value("states", false);
        write_events = cfg["outputs"].value("events", true);
    }
    const PathBundle bundle = simulate_particle_system(model, sim);

    VerificationReport rep;
    rep.kind = "simulate";
    rep.seed = seed;
    const std::size_t d = model.state_dim;
    Table summary;
    summary.name = "summary";
    summary.columns = {"step", "time"};
    for (std::size_t r = 0; r < d; ++r) summary.columns.push_back("mean_" + std::to_string(r));
    summary.columns.push_back("second_moment");
    std::vector<std::size_t> events_per_step(bundle.steps + 1, 0);
    for (const JumpEvent& e : bundle.events) ++events_per_step[e.step];
    summary.columns.push_back("events");
    for (std::size_t k = 0; k <= bundle.steps; ++k) {
        std::vector<double> row = {static_cast<double>(k), bundle.time(k)};
        for (std::size_t r = 0; r < d; ++r) row.push_back(bundle.measure(k).mean()[r]);
        row.push_back(bundle.measure(k).second_moment());
        row.push_back(static_cast<double>(events_per_step[k]));
        summary.rows.push_back(std::move(row));
    }
    rep.tables.push_back(std::move(summary));

    if (write_events) {
        Table ev;
        ev.name = "events";
        ev.columns = {"step", "particle", "time"};
        for (std::size_t r = 0; r < model.jump_domain.mark_dim; ++r)
            ev.columns.push_back("u_" + std::to_string(r));
        for (const JumpEvent& e : bundle.events) {
            std::vector<double> row = {static_cast<double>(e.step), static_cast<double>(e.particle),
                                       bundle.time(e.step)};
            for (double u : e.mark) row.push_back(u);
            ev.rows.push_back(std::move(row));
        }
        rep.tables.push_back(std::move(ev));
    }
    if (write_states) {
        Table st;
        st.name = "states";
        st.columns = {"step", "particle"};
        for (std::size_t r = 0; r < d; ++r) st.columns.push_back("x_" + std::to_string(r));
        for (std::size_t k = 0; k <= bundle.steps; ++k)
            for (std::size_t i = 0; i < bundle.particles; ++i) {
                std::vector<double> row = {static_cast<double>(k), static_cast<double>(i)};
                for (double v : bundle.state(k, i)) row.push_back(v);
                st.rows.push_back(std::move(row));
            }
        rep.tables.push_back(std::move(st));
    }
    rep.scalars["final_second_moment"] = bundle.measure(bundle.steps).second_moment();
    for (std::size_t r = 0; r < d; ++r)
        rep.scalars["final_mean_" + std::to_string(r)] = bundle.measure(bundle.steps).mean()[r];
    rep.scalars["total_events"] = static_cast<double>(bundle.events.size());

    RunOutcome out;
    finish(out, std::move(rep), cfg);
    out.tables["final_measure.txt"] = measure_to_text(bundle.measure(bundle.steps));
    return out;
}

inline RunOutcome run_verify_path(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"value_function", "tolerances", "perturbation"}), "config");
    const CoefficientModel model = parse_model(cfg);
    const TestFunction V = parse_test_function(cfg, "value_function", model.state_dim);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    double tol = 0.0;
    if (cfg.contains("tolerances")) {
        reject_unknown_keys(cfg["tolerances"], {"pathwise"}, "tolerances");
        tol = number_or(cfg["tolerances"], "pathwise", 0.0);
    }
    FunctionalSpec spec = functional_from_value(model, V);
    if (auto pert = parse_perturbation(cfg)) spec = perturb_spec(spec, pert->first, pert->second);
    VerificationReport rep = pathwise_test(model, V, spec, sim, tol);
    rep.seed = seed;
    rep.notes["value_function_suite"] = provenance_note(V);
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_residuals(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"value_function", "tolerances", "perturbation",
                                          "measure_atoms"}),
                        "config");
    (void)threads;
    const CoefficientModel model = parse_model(cfg);
    const TestFunction V = parse_test_function(cfg, "value_function", model.state_dim);
    double tol = 1e-10;
    if (cfg.contains("tolerances")) {
        reject_unknown_keys(cfg["tolerances"], {"residual"}, "tolerances");
        tol = number_or(cfg["tolerances"], "residual", 1e-10);
    }
    const auto atoms = static_cast<std::size_t>(number_or(cfg, "measure_atoms", 32));
    FunctionalSpec spec = functional_from_value(model, V);
    if (auto pert = parse_perturbation(cfg)) spec = perturb_spec(spec, pert->first, pert->second);
    const auto points = residual_sample_points(model, seed, 1.0, atoms);
    VerificationReport rep = pide_residuals(model, V, spec, points, {}, tol);
    rep.seed = seed;
    rep.notes["value_function_suite"] = provenance_note(V);
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_ito_check(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"test_function", "times", "quad_nodes", "replicates",
                                          "richardson_c"}),
                        "config");
    const CoefficientModel model = parse_model(cfg);
    const TestFunction h = parse_test_function(cfg, "test_function", model.state_dim);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    const auto times = parse_times(cfg, "times");
    const auto quad = static_cast<std::size_t>(number_or(cfg, "quad_nodes", 17));
    const auto reps = static_cast<std::size_t>(number_or(cfg, "replicates", 1));
    const double rc = number_or(cfg, "richardson_c", 0.0);
    VerificationReport rep = ito_expectation_check(model, h, sim, times, {}, quad, reps, rc);
    rep.notes["test_function_suite"] = provenance_note(h);
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_flow_derivative(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"test_function", "times", "replicates", "half_window",
                                          "band_c"}),
                        "config");
    const CoefficientModel model = parse_model(cfg);
    const TestFunction H = parse_test_function(cfg, "test_function", model.state_dim);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    const auto times = parse_times(cfg, "times");
    const auto reps = static_cast<std::size_t>(number_or(cfg, "replicates", 16));
    const double half = number_or(cfg, "half_window", 0.05 * sim.horizon);
    const double band_c = number_or(cfg, "band_c", 1.0);
    VerificationReport rep =
        measure_flow_derivative_check(model, H, sim, times, reps, half, {}, band_c);
    rep.notes["test_function_suite"] = provenance_note(H);
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_girsanov(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"tilt", "value_function", "checkpoints", "batches",
                                          "tolerances", "measure_atoms"}),
                        "config");
    const CoefficientModel model = parse_model(cfg);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    if (!cfg.contains("tilt")) throw std::invalid_argument("config: missing 'tilt'");
    reject_unknown_keys(cfg["tilt"], {"btilde", "lambda"}, "tilt");
    const double btilde = require_number(cfg["tilt"], "btilde", "tilt");
    const double lambda = require_number(cfg["tilt"], "lambda", "tilt");
    GirsanovTilt tilt;
    tilt.drift_factor = [btilde](double, ConstSpan, const EmpiricalMeasure&, Span out) {
        std::fill(out.begin(), out.end(), btilde);
    };
    tilt.intensity = [lambda](double, ConstSpan) { return lambda; };
    RandomStream vrng(seed ^ 0x7177);
    validate_tilt(model, tilt, vrng, 200);

    if (cfg.contains("value_function")) {
        const TestFunction V = parse_test_function(cfg, "value_function", model.state_dim);
        double pathwise_tol = 1e-6, residual_tol = 1e-10;
        if (cfg.contains("tolerances")) {
            reject_unknown_keys(cfg["tolerances"], {"pathwise", "residual"}, "tolerances");
            pathwise_tol = number_or(cfg["tolerances"], "pathwise", pathwise_tol);
            residual_tol = number_or(cfg["tolerances"], "residual", residual_tol);
        }
        const auto atoms = static_cast<std::size_t>(number_or(cfg, "measure_atoms", 32));
        const auto points = residual_sample_points(model, seed, sim.horizon, atoms);
        VerificationReport rep =
            girsanov_system_check(model, tilt, V, sim, points, {}, pathwise_tol, residual_tol);
        RunOutcome out;
        finish(out, std::move(rep), cfg);
        return out;
    }

    // martingale mode: mean Gamma at evenly spaced checkpoints over batches
    const auto checkpoints = static_cast<std::size_t>(number_or(cfg, "checkpoints", 5));
    const auto batches = static_cast<std::size_t>(number_or(cfg, "batches", 1));
    if (checkpoints == 0 || batches == 0)
        throw std::invalid_argument("girsanov: checkpoints and batches must be positive");
    std::vector<std::size_t> t_indices;
    for (std::size_t c = 1; c <= checkpoints; ++c) t_indices.push_back(sim.steps * c / checkpoints);

    std::vector<KahanSum> sums(checkpoints), sq_sums(checkpoints);
    std::size_t total = 0;
    Table per_particle;
    per_particle.name = "weights";
    per_particle.columns = {"batch", "particle", "time", "gamma"};
    for (std::size_t b = 0; b < batches; ++b) {
        SimulationConfig bc = sim;
        bc.seed = RandomStream(seed).child(b).next_u64();
        const PathBundle bundle = simulate_tilted(model, tilt, bc);
        const auto weights = girsanov_weights_all(model, tilt, bundle, t_indices);
        for (std::size_t i = 0; i < weights.size(); ++i)
            for (std::size_t c = 0; c < checkpoints; ++c) {
                sums[c].add(weights[i][c]);
                sq_sums[c].add(weights[i][c] * weights[i][c]);
                per_particle.rows.push_back({static_cast<double>(b), static_cast<double>(i),
                                             static_cast<double>(t_indices[c]) * sim.dt(),
                                             weights[i][c]});
            }
        total += bundle.particles;
    }
    VerificationReport rep;
    rep.kind = "girsanov";
    rep.seed = seed;
    rep.tables.push_back(std::move(per_particle));
    Table tab;
    tab.name = "martingale";
    tab.columns = {"time", "mean_gamma", "std_error", "abs_deviation", "band"};
    for (std::size_t c = 0; c < checkpoints; ++c) {
        const double n = static_cast<double>(total);
        const double mean = sums[c].value() / n;
        const double var = std::max(0.0, sq_sums[c].value() / n - mean * mean);
        const double se = std::sqrt(var / n);
        const double dev = std::abs(mean - 1.0);
        tab.rows.push_back({static_cast<double>(t_indices[c]) * sim.dt(), mean, se, dev, 3.0 * se});
        rep.check("martingale_mean_t" + std::to_string(c), dev, 3.0 * se);
    }
    rep.scalars["paths"] = static_cast<double>(total);
    rep.tables.push_back(std::move(tab));
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_lderiv_check(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"test_function", "lift", "tolerances"}), "config");
    (void)threads;
    std::size_t k_atoms = 50;
    LiftConfig lift;
    if (cfg.contains("lift")) {
        reject_unknown_keys(cfg["lift"], {"k", "h_fd"}, "lift");
        k_atoms = static_cast<std::size_t>(number_or(cfg["lift"], "k", 50));
        lift.h_fd = number_or(cfg["lift"], "h_fd", 1e-4);
        lift.validate();
    }
    double tol_dmu = 1e-6, tol_dydmu = 1e-4, tol_dmu2 = 5e-3;
    if (cfg.contains("tolerances")) {
        reject_unknown_keys(cfg["tolerances"], {"dmu", "dydmu", "dmu2"}, "tolerances");
        tol_dmu = number_or(cfg["tolerances"], "dmu", tol_dmu);
        tol_dydmu = number_or(cfg["tolerances"], "dydmu", tol_dydmu);
        tol_dmu2 = number_or(cfg["tolerances"], "dmu2", tol_dmu2);
    }
    const TestFunction h = parse_test_function(cfg, "test_function", 1);
    const std::size_t d = h.dim;
    RandomStream rng(seed);
    Vec atoms(k_atoms * d);
    for (double& v : atoms) v = rng.gaussian();
    const EmpiricalMeasure mu(d, std::move(atoms));
    const Vec x0(d, 0.0);
    MeasureMap H = [&h, &x0](const EmpiricalMeasure& nu) { return h.value(0.0, x0, nu); };

    VerificationReport rep;
    rep.kind = "lderiv-check";
    rep.seed = seed;
    Table tab;
    tab.name = "lift_errors";
    tab.columns = {"atom", "dmu_error", "dydmu_error", "dmu2_error"};
    double e1 = 0.0, e2 = 0.0, e3 = 0.0;
    Vec ana(d), anam(d * d);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const Vec num = l_derivative(H, mu, i, lift);
        h.dmu(0.0, x0, mu, mu.atom(i), ana);
        double err1 = 0.0;
        for (std::size_t r = 0; r < d; ++r) err1 = std::max(err1, std::abs(num[r] - ana[r]));

        const Vec numj = l_derivative_jacobian(H, mu, i, lift);
        h.dydmu(0.0, x0, mu, mu.atom(i), anam);
        double err2 = 0.0;
        for (std::size_t r = 0; r < d * d; ++r) err2 = std::max(err2, std::abs(numj[r] - anam[r]));

        const std::size_t j = (i + 1) % mu.size();
        const Vec numh = l_derivative_hessian(H, mu, i, j, lift);
        h.dmu2(0.0, x0, mu, mu.atom(i), mu.atom(j), anam);
        double err3 = 0.0;
        for (std::size_t r = 0; r < d * d; ++r) err3 = std::max(err3, std::abs(numh[r] - anam[r]));

        e1 = std::max(e1, err1);
        e2 = std::max(e2, err2);
        e3 = std::max(e3, err3);
        tab.rows.push_back({static_cast<double>(i), err1, err2, err3});
    }
    rep.check("dmu_error", e1, tol_dmu);
    rep.check("dydmu_error", e2, tol_dydmu);
    rep.check("dmu2_error", e3, tol_dmu2);
    rep.scalars["atoms"] = static_cast<double>(k_atoms);
    rep.scalars["h_fd"] = lift.h_fd;
    rep.tables.push_back(std::move(tab));
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

inline RunOutcome run_feynman_kac(const json& cfg, std::uint64_t seed, std::size_t threads) {
    reject_unknown_keys(cfg, with_common({"value_function", "points", "paths", "measure_atoms",
                                          "band_c"}),
                        "config");
    const CoefficientModel model = parse_model(cfg);
    const TestFunction V = parse_test_function(cfg, "value_function", model.state_dim);
    const SimulationConfig sim = parse_simulation(cfg, model.state_dim, seed, threads);
    const auto paths = static_cast<std::size_t>(number_or(cfg, "paths", 10000));
    const auto atoms = static_cast<std::size_t>(number_or(cfg, "measure_atoms", 64));
    const double band_c = number_or(cfg, "band_c", 1.0);
    if (!cfg.contains("points")) throw std::invalid_argument("config: missing 'points'");

    // mu realizing the initial law: atoms drawn from the configured sampler
    RandomStream mu_rng(seed ^ 0xFEED);
    Vec mu_atoms(atoms * model.state_dim);
    for (std::size_t i = 0; i < atoms; ++i) {
        RandomStream s = mu_rng.child(i);
        sim.initial(s, Span{mu_atoms.data() + i * model.state_dim, model.state_dim});
    }
    const EmpiricalMeasure mu(model.state_dim, std::move(mu_atoms));

    const FunctionalSpec spec = functional_from_value(model, V);
    auto Phi = [&V, &sim](ConstSpan x, const EmpiricalMeasure& m) {
        return V.value(sim.horizon, x, m);
    };

    VerificationReport rep;
    rep.kind = "feynman-kac";
    rep.seed = seed;
    Table tab;
    tab.name = "feynman_kac";
    tab.columns = {"t", "x", "estimate", "std_error", "reference", "gap", "band"};
    std::size_t idx = 0;
    for (const auto& pj : cfg["points"]) {
        reject_unknown_keys(pj, {"t", "x"}, "points[]");
        const double t = require_number(pj, "t", "points[]");
        const Vec x = vec_field(pj.at("x"), model.state_dim, "points[].x");
        RandomStream rng(RandomStream(seed).child(idx).next_u64());
        const FkValue fk = feynman_kac_value(model, Phi, spec.g1, spec.g4, t, x, mu, sim, paths, rng);
        const double ref = V.value(t, x, mu);
        const double gap = fk.value - ref;
        const double band = 3.0 * fk.std_error + band_c * sim.dt();
        tab.rows.push_back({t, x[0], fk.value, fk.std_error, ref, gap, band});
        rep.check("fk_gap_" + std::to_string(idx), gap, band);
        ++idx;
    }
    rep.tables.push_back(std::move(tab));
    RunOutcome out;
    finish(out, std::move(rep), cfg);
    return out;
}

}  // namespace detail

/// Executes a parsed run configuration; optional seed/thread overrides mirror
/// the CLI flags. The outcome is a pure function of (config, seed, threads)
/// with thread count never changing any reported number.
inline RunOutcome execute_run(nlohmann::json config, std::optional<std::uint64_t> seed_override = {},
                              std::optional<std::size_t> threads_override = {}) {
    using detail::json;
    if (!config.is_object()) throw std::invalid_argument("config: expected a JSON object");
    if (!config.contains("experiment") || !config["experiment"].is_string())
        throw std::invalid_argument("config: missing 'experiment'");
    if (seed_override) config["seed"] = *seed_override;
    if (threads_override) config["threads"] = *threads_override;
    const std::string kind = config["experiment"].get<std::string>();
    const auto seed = static_cast<std::uint64_t>(detail::number_or(config, "seed", 0));
    const auto threads = static_cast<std::size_t>(detail::number_or(config, "threads", 0));

    // The thread cap is execution detail, not experiment identity: keep it out
    // of the digest so --threads reruns compare byte-identical.
    nlohmann::json digest_cfg = config;
    digest_cfg.erase("threads");
    digest_cfg.erase("output");

    if (kind == "simulate") return detail::run_simulate(digest_cfg, seed, threads);
    if (kind == "verify-path") return detail::run_verify_path(digest_cfg, seed, threads);
    if (kind == "residuals") return detail::run_residuals(digest_cfg, seed, threads);
    if (kind == "ito-check") return detail::run_ito_check(digest_cfg, seed, threads);
    if (kind == "flow-derivative") return detail::run_flow_derivative(digest_cfg, seed, threads);
    if (kind == "girsanov") return detail::run_girsanov(digest_cfg, seed, threads);
    if (kind == "lderiv-check") return detail::run_lderiv_check(digest_cfg, seed, threads);
    if (kind == "feynman-kac") return detail::run_feynman_kac(digest_cfg, seed, threads);
    throw std::invalid_argument("config.experiment: unknown kind '" + kind + "'");
}

/// Writes report.json and the CSV tables (deterministic bodies) plus a
/// meta.json sidecar holding the timestamp, so report bodies stay
/// byte-comparable across reruns.
inline void write_outcome(const RunOutcome& outcome, const std::filesystem::path& dir,
                          const std::string& timestamp) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "report.json", std::ios::binary);
        if (!f) throw std::runtime_error("write_outcome: cannot write " + (dir / "report.json").string());
        f << outcome.report.dump(2) << '\n';
    }
    for (const auto& [name, body] : outcome.tables) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw std::runtime_error("write_outcome: cannot write " + (dir / name).string());
        f << body;
    }
    nlohmann::json meta;
    meta["timestamp"] = timestamp;
    meta["pass"] = outcome.pass;
    std::ofstream f(dir / "meta.json", std::ios::binary);
    f << meta.dump(2) << '\n';
}

}  // namespace mvjl

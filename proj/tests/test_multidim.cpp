// Whole-pipeline checks in more than one dimension: user-defined coefficient
// models with matrix diffusion, vector jump coefficients and mixed state /
// Brownian dimensions.

#include <doctest.h>

#include <array>
#include <cmath>

#include "mvjl/verify.hpp"

using namespace mvjl;

namespace {

// d = 2, m = 2: b = A x + c mean(mu), sigma constant full matrix, f = gamma [u, -u]
CoefficientModel planar_model() {
    CoefficientModel model;
    model.name = "planar";
    model.state_dim = 2;
    model.brownian_dim = 2;
    constexpr std::array<double, 4> A = {-0.5, 0.1, -0.2, -0.4};
    constexpr double c = 0.1;
    model.drift = [A, c](double, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
        out[0] = A[0] * x[0] + A[1] * x[1] + c * mu.mean()[0];
        out[1] = A[2] * x[0] + A[3] * x[1] + c * mu.mean()[1];
    };
    model.diffusion = [](double, ConstSpan, const EmpiricalMeasure&, Span out) {
        out[0] = 0.3;
        out[1] = 0.05;
        out[2] = 0.0;
        out[3] = 0.25;
    };
    model.jump = [](double, ConstSpan, const EmpiricalMeasure&, ConstSpan u, Span out) {
        out[0] = 0.1 * u[0];
        out[1] = -0.1 * u[0];
    };
    model.jump_domain = uniform_jump_domain(2.0, 1.0, 16);
    return model;
}

// d = 2, m = 1: single Brownian column
CoefficientModel column_model() {
    CoefficientModel model = planar_model();
    model.name = "planar_column";
    model.brownian_dim = 1;
    model.diffusion = [](double, ConstSpan, const EmpiricalMeasure&, Span out) {
        out[0] = 0.3;
        out[1] = -0.2;
    };
    return model;
}

SimulationConfig planar_cfg(std::uint64_t seed) {
    SimulationConfig cfg;
    cfg.horizon = 0.5;
    cfg.steps = 100;
    cfg.particles = 64;
    cfg.seed = seed;
    cfg.initial = gaussian_initial({1.0, -0.5}, 0.3);
    return cfg;
}

}  // namespace

TEST_CASE("planar pathwise exactness for a linear value function") {
    for (const bool column : {false, true}) {
        const CoefficientModel model = column ? column_model() : planar_model();
        const TestFunction V = builtin_test_function("linear", 2, {{"c", 1.0}});
        const FunctionalSpec spec = functional_from_value(model, V);
        const VerificationReport rep = pathwise_test(model, V, spec, planar_cfg(97), 1e-9);
        CHECK_MESSAGE(rep.pass(), (column ? "column diffusion" : "full diffusion"));
        CHECK(rep.scalars.at("max_abs") <= 1e-9);
    }
}

TEST_CASE("planar falsification still trips the pathwise test") {
    const CoefficientModel model = planar_model();
    const TestFunction V = builtin_test_function("linear", 2, {{"c", 1.0}});
    const FunctionalSpec spec = functional_from_value(model, V);
    const PathBundle bundle = simulate_particle_system(model, planar_cfg(98));
    const double clean = pathwise_test_on(bundle, V, spec, 1e-9).scalars.at("rms");
    const double broken =
        pathwise_test_on(bundle, V, perturb_spec(spec, SpecComponent::g2, 0.1), 1e-9)
            .scalars.at("rms");
    CHECK(broken > 10.0 * std::max(clean, 1e-13));
}

TEST_CASE("planar generator hand value for the second moment") {
    const CoefficientModel model = planar_model();
    const TestFunction h = builtin_test_function("second_moment", 2);
    const Vec y0 = {1.0, 0.5};
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(y0, 8);

    // drift term: 2 <b(y0), y0>; diffusion term: tr(sigma sigma^T);
    // eta term: sum_j w_j |f(u_j)|^2 with |f|^2 = 0.02 u^2
    Vec b(2);
    model.drift(0.0, y0, mu, b);
    const double drift_term = 2.0 * (b[0] * y0[0] + b[1] * y0[1]);
    const double diff_term = 0.3 * 0.3 + 0.05 * 0.05 + 0.25 * 0.25;
    const double eta_term =
        0.02 * model.jump_domain.integrate([](ConstSpan u) { return u[0] * u[0]; });
    const double expected = drift_term + diff_term + eta_term;

    const double got = apply_generator(model, h, 0.0, Vec{0.0, 0.0}, mu);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("planar residual round-trip") {
    const CoefficientModel model = planar_model();
    const auto points = residual_sample_points(model, 41);
    for (const char* vname : {"linear", "quadratic", "second_moment", "mean_squared"}) {
        const TestFunction V = builtin_test_function(vname, 2);
        const FunctionalSpec spec = functional_from_value(model, V);
        const VerificationReport rep = pide_residuals(model, V, spec, points, {}, 1e-10);
        CHECK_MESSAGE(rep.pass(), vname);
    }
}

TEST_CASE("planar lift derivatives match the analytic suite") {
    RandomStream rng(3141);
    Vec atoms(2 * 20);
    for (double& v : atoms) v = rng.gaussian();
    const EmpiricalMeasure mu(2, std::move(atoms));
    const TestFunction h = builtin_test_function("second_moment", 2);
    const Vec x0 = {0.0, 0.0};
    MeasureMap H = [&](const EmpiricalMeasure& nu) { return h.value(0.0, x0, nu); };
    Vec ana(2), anam(4);
    for (std::size_t i = 0; i < mu.size(); i += 5) {
        const Vec g = l_derivative(H, mu, i, {});
        h.dmu(0.0, x0, mu, mu.atom(i), ana);
        CHECK(std::abs(g[0] - ana[0]) <= 1e-7);
        CHECK(std::abs(g[1] - ana[1]) <= 1e-7);

        const Vec jac = l_derivative_jacobian(H, mu, i, {});
        h.dydmu(0.0, x0, mu, mu.atom(i), anam);
        for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(jac[r] - anam[r]) <= 1e-3);
    }
}

TEST_CASE("planar hypothesis certification runs clean") {
    const CoefficientModel model = planar_model();
    RandomStream rng(55);
    const HypothesisReport rep = check_hypotheses(model, 500, rng);
    CHECK(rep.pass());  // no declared constants, so only evaluability is certified
    CHECK(rep.b_ratio > 0.0);
    CHECK(std::isfinite(rep.growth_bs));
    CHECK(rep.f_ratio <= 0.1 * std::sqrt(2.0) + 1e-9);  // |f| = 0.1 sqrt(2) |u|
}

TEST_CASE("finitely supported jump measure with planar marks") {
    // nu = sum of four weighted Dirac marks in R^2; the quadrature lists the
    // support verbatim, so nu-integrals are exact and the pathwise identity
    // cancels term by term
    JumpDomain dom;
    dom.mark_dim = 2;
    dom.radius = 1.0;
    dom.total_rate = 1.5;
    dom.nodes = {0.6, 0.0, -0.4, 0.3, 0.0, -0.7, 0.2, 0.2};
    dom.weights = {0.5, 0.4, 0.35, 0.25};
    dom.sample_mark = [dom](RandomStream& rng, Span out) {
        const double pick = dom.total_rate * rng.uniform01();
        double acc = 0.0;
        std::size_t j = 0;
        for (; j + 1 < dom.weights.size(); ++j) {
            acc += dom.weights[j];
            if (pick < acc) break;
        }
        out[0] = dom.nodes[2 * j];
        out[1] = dom.nodes[2 * j + 1];
    };
    dom.validate();

    CoefficientModel model = planar_model();
    model.jump_domain = dom;
    model.jump = [](double, ConstSpan x, const EmpiricalMeasure&, ConstSpan u, Span out) {
        out[0] = 0.2 * u[0] + 0.05 * x[1];
        out[1] = 0.2 * u[1];
    };

    const TestFunction V = builtin_test_function("linear", 2, {{"c", 1.0}});
    const FunctionalSpec spec = functional_from_value(model, V);
    const VerificationReport rep = pathwise_test(model, V, spec, planar_cfg(321), 1e-9);
    CHECK(rep.pass());

    const auto points = residual_sample_points(model, 77);
    CHECK(pide_residuals(model, V, spec, points, {}, 1e-10).pass());
}

TEST_CASE("planar determinism across thread counts") {
    const CoefficientModel model = planar_model();
    SimulationConfig cfg = planar_cfg(99);
    cfg.threads = 1;
    const auto b1 = simulate_particle_system(model, cfg);
    cfg.threads = 3;
    const auto b2 = simulate_particle_system(model, cfg);
    REQUIRE(b1.states.size() == b2.states.size());
    for (std::size_t i = 0; i < b1.states.size(); ++i) CHECK(b1.states[i] == b2.states[i]);
}

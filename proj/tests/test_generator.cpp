#include <doctest.h>

#include <cmath>
#include <map>

#include "mvjl/generator.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"

using namespace mvjl;

namespace {

TestFunction combine(const TestFunction& a, double wa, const TestFunction& b, double wb) {
    TestFunction h;
    h.name = "combination";
    h.dim = a.dim;
    h.value = [=](double t, ConstSpan x, const EmpiricalMeasure& mu) {
        return wa * a.value(t, x, mu) + wb * b.value(t, x, mu);
    };
    h.dt = [=](double t, ConstSpan x, const EmpiricalMeasure& mu) {
        return wa * a.dt(t, x, mu) + wb * b.dt(t, x, mu);
    };
    auto mix_vec = [=](auto fa, auto fb) {
        return [=](double t, ConstSpan x, const EmpiricalMeasure& mu, Span out) {
            Vec tmp(out.size());
            fa(t, x, mu, out);
            for (double& v : out) v *= wa;
            fb(t, x, mu, tmp);
            for (std::size_t r = 0; r < out.size(); ++r) out[r] += wb * tmp[r];
        };
    };
    h.dx = mix_vec(a.dx, b.dx);
    h.dxx = mix_vec(a.dxx, b.dxx);
    h.dmu = [=](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan y, Span out) {
        Vec tmp(out.size());
        a.dmu(t, x, mu, y, out);
        for (double& v : out) v *= wa;
        b.dmu(t, x, mu, y, tmp);
        for (std::size_t r = 0; r < out.size(); ++r) out[r] += wb * tmp[r];
    };
    h.dydmu = [=](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan y, Span out) {
        Vec tmp(out.size());
        a.dydmu(t, x, mu, y, out);
        for (double& v : out) v *= wa;
        b.dydmu(t, x, mu, y, tmp);
        for (std::size_t r = 0; r < out.size(); ++r) out[r] += wb * tmp[r];
    };
    h.dmu2 = [=](double t, ConstSpan x, const EmpiricalMeasure& mu, ConstSpan y, ConstSpan y2,
                 Span out) {
        Vec tmp(out.size());
        a.dmu2(t, x, mu, y, y2, out);
        for (double& v : out) v *= wa;
        b.dmu2(t, x, mu, y, y2, tmp);
        for (std::size_t r = 0; r < out.size(); ++r) out[r] += wb * tmp[r];
    };
    return h;
}

const std::map<std::string, double> kGeneratorModelParams = {
    {"a", -0.5}, {"c", 0.0}, {"sigma0", 0.3}, {"gamma", 0.1}, {"alpha", 1.0}, {"rate", 2.0}};

}  // namespace

TEST_CASE("Gauss-Legendre nodes integrate polynomials exactly") {
    for (const std::size_t n : {2, 4, 8}) {
        const auto [nodes, weights] = gauss_legendre_01(n);
        for (std::size_t deg = 0; deg < 2 * n; ++deg) {
            double q = 0.0;
            for (std::size_t i = 0; i < n; ++i) q += weights[i] * std::pow(nodes[i], deg);
            CHECK(q == doctest::Approx(1.0 / (deg + 1.0)).epsilon(1e-13));
        }
    }
}

TEST_CASE("generator on a constant function vanishes") {
    const CoefficientModel model = builtin_model("linear_mean_field", kGeneratorModelParams);
    const TestFunction h = builtin_test_function("constant", 1, {{"c", 5.0}});
    const EmpiricalMeasure mu(1, {1.0, -0.5, 2.0});
    CHECK(apply_generator(model, h, 0.2, Vec{0.7}, mu) == 0.0);
}

TEST_CASE("generator on a linear function returns the drift pairing") {
    const CoefficientModel model = builtin_model("linear_mean_field", kGeneratorModelParams);
    const TestFunction h = builtin_test_function("linear", 1, {{"c", 2.0}});
    const EmpiricalMeasure mu(1, {1.0, 3.0});
    const double t = 0.1, x = 0.6;
    Vec b(1);
    model.drift(t, Vec{x}, mu, b);
    const double got = apply_generator(model, h, t, Vec{x}, mu);
    // jump terms cancel exactly for linear h, measure terms vanish
    CHECK(got == doctest::Approx(2.0 * b[0]).epsilon(1e-12));
}

TEST_CASE("jump terms vanish individually for linear test functions") {
    // model with only jumps: b = 0 and sigma = 0, so the generator reduces to
    // the two jump terms; both are identically zero for h linear in x
    const CoefficientModel model = builtin_model(
        "linear_mean_field",
        {{"a", 0.0}, {"c", 0.0}, {"sigma0", 0.0}, {"gamma", 0.1}, {"alpha", 1.0}, {"rate", 2.0}});
    TestFunction h = builtin_test_function("linear", 1, {{"c", 1.0}});
    h.zero_mu_derivatives = false;  // force the eta term to be evaluated, not skipped
    const EmpiricalMeasure mu(1, {0.5, -1.0});
    CHECK(std::abs(apply_generator(model, h, 0.0, Vec{1.0}, mu)) <= 1e-13);
}

TEST_CASE("hand-derived generator value for the second moment") {
    const CoefficientModel model = builtin_model("linear_mean_field", kGeneratorModelParams);
    const TestFunction h = builtin_test_function("second_moment", 1);
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(Vec{1.0}, 64);

    // closed form: 2 a x^2 + sigma0^2 + gamma^2 * integral of u^2 nu(du),
    // the last reproduced with the domain's own quadrature
    const double nu_u2 = model.jump_domain.integrate([](ConstSpan u) { return u[0] * u[0]; });
    const double expected = 2.0 * (-0.5) * 1.0 + 0.09 + 0.01 * nu_u2;
    const double got = apply_generator(model, h, 0.0, Vec{1.0}, mu);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    // quadrature sits within 2e-4 of the exact nu-integral 2/3
    CHECK(std::abs(got - (-0.90333333333333333)) <= 2e-4);
}

TEST_CASE("generator is linear in the test function") {
    const CoefficientModel model = builtin_model("linear_mean_field", kGeneratorModelParams);
    const TestFunction h1 = builtin_test_function("linear", 1, {{"c", 1.0}});
    const TestFunction h2 = builtin_test_function("second_moment", 1);
    const TestFunction mix = combine(h1, 0.7, h2, -1.3);
    const EmpiricalMeasure mu(1, {0.2, 1.4, -0.8});
    const double t = 0.25;
    const Vec x{0.9};
    const double lhs = apply_generator(model, mix, t, x, mu);
    const double rhs =
        0.7 * apply_generator(model, h1, t, x, mu) - 1.3 * apply_generator(model, h2, t, x, mu);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("eta integral is exact for an affine measure derivative") {
    // drift and diffusion off: the generator equals the eta term alone, whose
    // closed form for the second moment is sum_j w_j integral |f|^2 dmu
    const CoefficientModel model = builtin_model(
        "linear_mean_field",
        {{"a", 0.0}, {"c", 0.0}, {"sigma0", 0.0}, {"gamma", 0.1}, {"alpha", 1.0}, {"rate", 2.0}});
    const TestFunction h = builtin_test_function("second_moment", 1);
    const EmpiricalMeasure mu(1, {1.0, -2.0, 0.5});
    const double got = apply_generator(model, h, 0.0, Vec{0.0}, mu);
    const double gamma2 = 0.01;
    const double closed =
        gamma2 * model.jump_domain.integrate([](ConstSpan u) { return u[0] * u[0]; });
    CHECK(got == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("numeric fallback reproduces the analytic suite approximately") {
    const CoefficientModel model = builtin_model("linear_mean_field", kGeneratorModelParams);
    const TestFunction full = builtin_test_function("second_moment", 1);
    TestFunction value_only;
    value_only.name = "second_moment_value_only";
    value_only.dim = 1;
    value_only.value = full.value;
    value_only.provenance.dmu = Provenance::numeric;

    const EmpiricalMeasure mu(1, {0.4, -0.9, 1.3, 2.0});
    const double t = 0.1;
    const Vec x{0.5};
    const double analytic = apply_generator(model, full, t, x, mu);
    const double numeric = apply_generator(model, value_only, t, x, mu);
    CHECK(std::abs(analytic - numeric) <= 1e-3 * std::max(1.0, std::abs(analytic)));

    GeneratorConfig strict;
    strict.allow_numeric_derivatives = false;
    CHECK_THROWS_WITH_AS(apply_generator(model, value_only, t, x, mu, strict),
                         doctest::Contains("lacks"), std::runtime_error);
}

TEST_CASE("finite-difference oracle") {
    RandomStream rng(404);
    SUBCASE("constant test function gives zero with zero error") {
        const CoefficientModel model = builtin_model("pure_diffusion", {{"sigma0", 0.2}});
        const TestFunction h = builtin_test_function("constant", 1, {{"c", 3.0}});
        const EmpiricalMeasure mu = EmpiricalMeasure::dirac(Vec{0.0}, 4);
        OracleConfig ocfg;
        ocfg.replicates = 4;
        ocfg.substeps = 2;
        ocfg.min_ensemble = 32;
        const auto est = generator_fd_oracle(model, h, 0.0, Vec{0.0}, mu, 1e-3, 1000, rng, ocfg);
        CHECK(est.value == 0.0);
        CHECK(est.std_error == 0.0);
    }
    SUBCASE("linear test function recovers a constant drift") {
        const CoefficientModel model =
            builtin_model("pure_diffusion", {{"a", 0.0}, {"b0", 0.2}, {"sigma0", 0.1}});
        const TestFunction h = builtin_test_function("linear", 1, {{"c", 1.5}});
        const EmpiricalMeasure mu = EmpiricalMeasure::dirac(Vec{0.3}, 8);
        OracleConfig ocfg;
        ocfg.replicates = 32;
        ocfg.substeps = 2;
        ocfg.min_ensemble = 64;
        const auto est = generator_fd_oracle(model, h, 0.0, Vec{0.3}, mu, 1e-3, 20000, rng, ocfg);
        CHECK(std::abs(est.value - 1.5 * 0.2) <= 3.0 * est.std_error + 1e-6);
    }
    SUBCASE("argument validation") {
        const CoefficientModel model = builtin_model("pure_diffusion", {{"sigma0", 0.2}});
        const TestFunction h = builtin_test_function("linear", 1);
        const EmpiricalMeasure mu = EmpiricalMeasure::dirac(Vec{0.0});
        CHECK_THROWS_AS(generator_fd_oracle(model, h, 0.0, Vec{0.0}, mu, 0.5, 10000, rng),
                        std::invalid_argument);
        CHECK_THROWS_AS(generator_fd_oracle(model, h, 0.0, Vec{0.0}, mu, 1e-3, 10, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("oracle agrees with the generator on every builtin pair") {
    // smoke-scale two-sided consistency: |generator - oracle| <= 3 SE + C delta
    // with C estimated by halving the window
    RandomStream atom_rng(31415);
    Vec atoms(16);
    for (double& v : atoms) v = 0.6 + 0.3 * atom_rng.gaussian();
    const EmpiricalMeasure mu(1, std::move(atoms));
    const Vec x{0.6};
    const double delta = 1e-3;

    OracleConfig ocfg;
    ocfg.replicates = 24;
    ocfg.substeps = 4;
    ocfg.min_ensemble = 512;

    const std::map<std::string, double> params = {{"a", -0.4}, {"c", 0.2},   {"sigma0", 0.25},
                                                  {"gamma", 0.1}, {"alpha", 1.0}, {"rate", 2.0},
                                                  {"nodes", 16}};
    for (const char* mname : {"linear_mean_field", "pure_diffusion", "zero_noise"}) {
        const CoefficientModel model = builtin_model(mname, params);
        for (const char* hname :
             {"constant", "linear", "quadratic", "second_moment", "mean_squared"}) {
            const TestFunction h = builtin_test_function(hname, 1);
            const double gen = apply_generator(model, h, 0.0, x, mu);
            RandomStream ra(1000), rb(2000);
            const auto est = generator_fd_oracle(model, h, 0.0, x, mu, delta, 6000, ra, ocfg);
            const auto est_half =
                generator_fd_oracle(model, h, 0.0, x, mu, delta / 2.0, 6000, rb, ocfg);
            // the Richardson slope only captures the first-order window bias,
            // so leave 25% headroom for curvature (binding when SE = 0)
            const double c_rich = 2.0 * std::abs(est.value - est_half.value) / delta;
            const double band = 3.0 * est.std_error + 1.25 * c_rich * delta + 1e-8;
            const std::string where = std::string(mname) + "/" + hname;
            CHECK_MESSAGE(std::abs(gen - est.value) <= band, where, ": gen=", gen,
                          " est=", est.value, " band=", band);
        }
    }
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mvjl/lderiv.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/rng.hpp"

using namespace mvjl;

namespace {

EmpiricalMeasure gaussian_cloud(std::uint64_t seed, std::size_t dim, std::size_t atoms) {
    RandomStream rng(seed);
    Vec a(dim * atoms);
    for (double& v : a) v = rng.gaussian();
    return EmpiricalMeasure(dim, std::move(a));
}

MeasureMap as_measure_map(const TestFunction& h) {
    const Vec x0(h.dim, 0.0);
    return [h, x0](const EmpiricalMeasure& nu) { return h.value(0.0, x0, nu); };
}

}  // namespace

TEST_CASE("lift_value") {
    MeasureMap sm = [](const EmpiricalMeasure& mu) { return mu.second_moment(); };
    CHECK(lift_value(sm, 1, {3.0, 4.0}) == doctest::Approx(12.5));

    MeasureMap c = [](const EmpiricalMeasure&) { return -2.25; };
    CHECK(lift_value(c, 1, {0.0, 5.0, 9.0}) == -2.25);

    // permutation invariance of the empirical measure
    CHECK(lift_value(sm, 1, {4.0, 3.0}) == lift_value(sm, 1, {3.0, 4.0}));
}

TEST_CASE("first lift derivative against analytic values") {
    const LiftConfig cfg{1e-4};
    SUBCASE("linear functional is exact") {
        MeasureMap lin = [](const EmpiricalMeasure& mu) { return 0.7 * mu.mean()[0]; };
        const auto mu = gaussian_cloud(1, 1, 12);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const Vec g = l_derivative(lin, mu, i, cfg);
            CHECK(std::abs(g[0] - 0.7) <= 1e-10);
        }
    }
    SUBCASE("second moment gives 2y") {
        MeasureMap sm = [](const EmpiricalMeasure& mu) { return mu.second_moment(); };
        const auto mu = gaussian_cloud(2, 1, 50);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const Vec g = l_derivative(sm, mu, i, cfg);
            CHECK(std::abs(g[0] - 2.0 * mu.atom(i)[0]) <= 1e-8);
        }
    }
    SUBCASE("mean squared at {0,2} gives 2 everywhere") {
        MeasureMap ms = [](const EmpiricalMeasure& mu) {
            const double m = mu.mean()[0];
            return m * m;
        };
        const EmpiricalMeasure mu(1, {0.0, 2.0});
        for (std::size_t i = 0; i < 2; ++i) {
            const Vec g = l_derivative(ms, mu, i, cfg);
            CHECK(std::abs(g[0] - 2.0) <= 1e-6);
        }
    }
    SUBCASE("index validation") {
        MeasureMap sm = [](const EmpiricalMeasure& mu) { return mu.second_moment(); };
        const EmpiricalMeasure mu(1, {1.0});
        CHECK_THROWS_AS(l_derivative(sm, mu, 5, cfg), std::invalid_argument);
        CHECK_THROWS_AS(l_derivative(sm, mu, 0, LiftConfig{0.5}), std::invalid_argument);
    }
}

TEST_CASE("jacobian extraction subtracts the second-derivative contamination") {
    const LiftConfig cfg{1e-4};
    const auto mu = gaussian_cloud(3, 1, 50);
    SUBCASE("second moment gives 2I") {
        MeasureMap sm = [](const EmpiricalMeasure& m) { return m.second_moment(); };
        for (std::size_t i = 0; i < 8; ++i) {
            const Vec j = l_derivative_jacobian(sm, mu, i, cfg);
            CHECK(std::abs(j[0] - 2.0) <= 1e-4);
        }
    }
    SUBCASE("linear functional gives zero") {
        MeasureMap lin = [](const EmpiricalMeasure& m) { return m.mean()[0]; };
        for (std::size_t i = 0; i < 4; ++i) {
            const Vec j = l_derivative_jacobian(lin, mu, i, cfg);
            CHECK(std::abs(j[0]) <= 1e-6);
        }
    }
    SUBCASE("mean squared is pure second-derivative and must cancel") {
        MeasureMap ms = [](const EmpiricalMeasure& m) {
            const double v = m.mean()[0];
            return v * v;
        };
        for (std::size_t i = 0; i < 8; ++i) {
            const Vec j = l_derivative_jacobian(ms, mu, i, cfg);
            CHECK(std::abs(j[0]) <= 1e-3);
        }
    }
}

TEST_CASE("mixed second derivative across distinct atoms") {
    const auto mu = gaussian_cloud(4, 1, 50);
    SUBCASE("second moment gives zero") {
        MeasureMap sm = [](const EmpiricalMeasure& m) { return m.second_moment(); };
        const Vec h = l_derivative_hessian(sm, mu, 2, 7, LiftConfig{1e-4});
        CHECK(std::abs(h[0]) <= 1e-3);
    }
    SUBCASE("mean squared gives 2 c c^T") {
        MeasureMap ms = [](const EmpiricalMeasure& m) {
            const double v = m.mean()[0];
            return v * v;
        };
        const Vec h = l_derivative_hessian(ms, mu, 1, 5, LiftConfig{1e-3});
        CHECK(std::abs(h[0] - 2.0) <= 5e-3);
    }
    SUBCASE("constant functional vanishes") {
        MeasureMap c = [](const EmpiricalMeasure&) { return 4.0; };
        const Vec h = l_derivative_hessian(c, mu, 0, 1, LiftConfig{1e-4});
        CHECK(h[0] == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("diagonal pair is rejected") {
        MeasureMap c = [](const EmpiricalMeasure&) { return 4.0; };
        CHECK_THROWS_AS(l_derivative_hessian(c, mu, 3, 3, LiftConfig{1e-4}), std::invalid_argument);
    }
    SUBCASE("symmetry in the atom pair") {
        MeasureMap mix = [](const EmpiricalMeasure& m) {
            return m.mean()[0] * m.second_moment();
        };
        const Vec hij = l_derivative_hessian(mix, mu, 1, 6, LiftConfig{1e-3});
        const Vec hji = l_derivative_hessian(mix, mu, 6, 1, LiftConfig{1e-3});
        CHECK(std::abs(hij[0] - hji[0]) <= 1e-3);
    }
}

TEST_CASE("lift consistency with the differentiability definition") {
    // H(mu shifted by eps*phi) - H(mu) - eps mu(<dH, phi>) must vanish faster
    // than eps sqrt(mu(|phi|^2))
    const auto mu = gaussian_cloud(5, 1, 24);
    struct Case {
        MeasureMap H;
        std::function<double(double)> dmu;  // analytic derivative at y
    };
    std::vector<Case> cases;
    cases.push_back({[](const EmpiricalMeasure& m) { return m.second_moment(); },
                     [](double y) { return 2.0 * y; }});
    cases.push_back({[](const EmpiricalMeasure& m) {
                         const double v = m.mean()[0];
                         return v * v;
                     },
                     [&mu](double) { return 2.0 * mu.mean()[0]; }});
    auto phi = [](double y) { return 0.5 * y + 0.2; };

    for (const auto& c : cases) {
        const double base = c.H(mu);
        double phi_l2 = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double p = phi(mu.atom(i)[0]);
            phi_l2 += p * p;
        }
        phi_l2 = std::sqrt(phi_l2 / static_cast<double>(mu.size()));

        double prev_ratio = 1e9;
        for (const double eps : {1e-2, 1e-3, 1e-4}) {
            const auto shifted = pushforward(mu, [&](ConstSpan y, Span out) {
                out[0] = eps * phi(y[0]);
            });
            double pairing = 0.0;
            for (std::size_t i = 0; i < mu.size(); ++i)
                pairing += c.dmu(mu.atom(i)[0]) * phi(mu.atom(i)[0]);
            pairing /= static_cast<double>(mu.size());
            const double remainder = c.H(shifted) - base - eps * pairing;
            const double ratio = std::abs(remainder) / (eps * phi_l2);
            CHECK(ratio <= std::max(1e-2, prev_ratio));  // nonincreasing and small
            prev_ratio = ratio;
        }
        CHECK(prev_ratio <= 1e-2);
    }
}

TEST_CASE("permutation equivariance of lift derivatives") {
    MeasureMap sm = [](const EmpiricalMeasure& m) { return m.second_moment(); };
    const EmpiricalMeasure mu(1, {0.5, -1.0, 2.0});
    const EmpiricalMeasure perm(1, {2.0, 0.5, -1.0});
    const Vec a = l_derivative(sm, mu, 2, {});
    const Vec b = l_derivative(sm, perm, 0, {});
    CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
}

TEST_CASE("representation independence for duplicated atoms") {
    MeasureMap sm = [](const EmpiricalMeasure& m) { return m.second_moment(); };
    const EmpiricalMeasure two(1, {1.5, -0.5});
    const EmpiricalMeasure four(1, {1.5, -0.5, 1.5, -0.5});
    const Vec g2 = l_derivative(sm, two, 0, {});
    const Vec g4 = l_derivative(sm, four, 0, {});
    CHECK(std::abs(g2[0] - g4[0]) <= 1e-6);
}

TEST_CASE("builtin analytic suites agree with the numeric lift at every atom") {
    const auto mu = gaussian_cloud(6, 1, 50);
    const Vec x0(1, 0.0);
    for (const auto& name : builtin_test_function_names()) {
        const TestFunction h = builtin_test_function(name, 1);
        MeasureMap H = as_measure_map(h);
        Vec ana(1);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const Vec num = l_derivative(H, mu, i, {});
            h.dmu(0.0, x0, mu, mu.atom(i), ana);
            CHECK(std::abs(num[0] - ana[0]) <= 1e-3);
        }
    }
}

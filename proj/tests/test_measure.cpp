#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mvjl/measure.hpp"
#include "mvjl/rng.hpp"

using namespace mvjl;

namespace {

EmpiricalMeasure measure1d(std::vector<double> atoms) { return EmpiricalMeasure(1, std::move(atoms)); }

EmpiricalMeasure random_measure(RandomStream& rng, std::size_t dim, std::size_t atoms, double scale) {
    Vec a(dim * atoms);
    for (double& v : a) v = scale * (2.0 * rng.uniform01() - 1.0);
    return EmpiricalMeasure(dim, std::move(a));
}

// independent oracle: exact minimum over all K! pairings
double brute_force_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    const std::size_t k = a.size();
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t r = 0; r < a.dim(); ++r) {
                const double d = a.atom(i)[r] - b.atom(perm[i])[r];
                cost += d * d;
            }
        best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(k));
}

}  // namespace

TEST_CASE("second moment of simple measures") {
    CHECK(second_moment(measure1d({0.0})) == 0.0);
    CHECK(second_moment(measure1d({1.0, -1.0})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(second_moment(measure1d({3.0, 4.0})) == doctest::Approx(12.5).epsilon(1e-15));
}

TEST_CASE("measure construction rejects bad input") {
    CHECK_THROWS_AS(EmpiricalMeasure(1, {}), std::invalid_argument);
    CHECK_THROWS_AS(EmpiricalMeasure(2, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(EmpiricalMeasure(1, {std::nan("")}), std::invalid_argument);
    // finite atoms whose squares overflow still violate the moment invariant
    CHECK_THROWS_AS(EmpiricalMeasure(1, {1e200}), std::invalid_argument);
}

TEST_CASE("integrate on atoms") {
    const auto mu = measure1d({0.0, 2.0});
    CHECK(integrate(mu, [](ConstSpan) { return 7.5; }) == doctest::Approx(7.5));
    CHECK(integrate(mu, [](ConstSpan x) { return x[0]; }) == doctest::Approx(1.0));

    const auto mu2 = measure1d({3.0, 4.0});
    const double sq = integrate(mu2, [](ConstSpan x) { return x[0] * x[0]; });
    CHECK(sq == doctest::Approx(second_moment(mu2)).epsilon(1e-14));

    CHECK_THROWS_WITH_AS(integrate(mu, [](ConstSpan x) { return x[0] > 1.0 ? std::nan("") : 0.0; }),
                         doctest::Contains("atom 1"), std::runtime_error);
}

TEST_CASE("integrate is linear in the integrand") {
    RandomStream rng(71);
    for (int rep = 0; rep < 20; ++rep) {
        RandomStream r = rng.child(rep);
        const auto mu = random_measure(r, 2, 9, 3.0);
        const double a = 2.0 * r.uniform01() - 1.0;
        const double b = 2.0 * r.uniform01() - 1.0;
        auto phi = [](ConstSpan x) { return x[0] * x[0] - x[1]; };
        auto psi = [](ConstSpan x) { return std::sin(x[0]) + x[1] * x[1]; };
        const double lhs = integrate(mu, [&](ConstSpan x) { return a * phi(x) + b * psi(x); });
        const double rhs = a * integrate(mu, phi) + b * integrate(mu, psi);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("wasserstein2 basics") {
    const auto mu = measure1d({0.3, -1.2, 4.0});
    CHECK(wasserstein2(mu, mu) == 0.0);

    const auto dx = measure1d({1.0});
    const auto dy = measure1d({-2.5});
    CHECK(wasserstein2(dx, dy) == doctest::Approx(3.5).epsilon(1e-15));

    // hand oracle: pairings cost 4+4=8 or 9+1=10; min 8, sqrt(8/2) = 2
    CHECK(wasserstein2(measure1d({0.0, 1.0}), measure1d({2.0, 3.0})) ==
          doctest::Approx(2.0).epsilon(1e-15));

    CHECK_THROWS_AS(wasserstein2(mu, dx), std::invalid_argument);
    CHECK_THROWS_AS(wasserstein2(dx, EmpiricalMeasure(2, {0.0, 0.0})), std::invalid_argument);
}

TEST_CASE("assignment solver matches the brute-force minimum") {
    RandomStream rng(1234);
    for (int rep = 0; rep < 40; ++rep) {
        RandomStream r = rng.child(rep);
        const std::size_t k = 2 + static_cast<std::size_t>(r.uniform01() * 6.0);  // 2..7
        const std::size_t dim = 1 + static_cast<std::size_t>(r.uniform01() * 3.0);
        const auto a = random_measure(r, dim, k, 4.0);
        const auto b = random_measure(r, dim, k, 4.0);
        CHECK(wasserstein2(a, b) == doctest::Approx(brute_force_w2(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("metric axioms on random triples") {
    RandomStream rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        RandomStream r = rng.child(rep);
        const std::size_t dim = rep % 2 == 0 ? 1 : 2;
        const auto mu = random_measure(r, dim, 6, 2.0);
        const auto nu = random_measure(r, dim, 6, 2.0);
        const auto ka = random_measure(r, dim, 6, 2.0);
        const double ab = wasserstein2(mu, nu);
        CHECK(ab == doctest::Approx(wasserstein2(nu, mu)).epsilon(1e-12));
        CHECK(wasserstein2(mu, ka) <= ab + wasserstein2(nu, ka) + 1e-12);
        CHECK(ab >= 0.0);
    }
}

TEST_CASE("zero distance iff matched atom lists coincide") {
    const auto a = measure1d({1.0, 2.0, 3.0});
    const auto b = measure1d({3.0, 1.0, 2.0});  // same multiset, different order
    CHECK(wasserstein2(a, b) == 0.0);
    const auto c = measure1d({1.0, 2.0, 3.0 + 1e-7});
    CHECK(wasserstein2(a, c) > 0.0);
}

TEST_CASE("pushforward") {
    const auto mu = measure1d({-1.0, 0.5, 2.0});
    const auto same = pushforward(mu, [](ConstSpan, Span out) { out[0] = 0.0; });
    CHECK(wasserstein2(mu, same) == 0.0);

    const auto collapsed = pushforward(mu, [](ConstSpan x, Span out) { out[0] = -x[0]; });
    for (std::size_t i = 0; i < collapsed.size(); ++i) CHECK(collapsed.atom(i)[0] == 0.0);

    RandomStream rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        RandomStream r = rng.child(rep);
        const auto m = random_measure(r, 3, 8, 2.0);
        Vec v = {r.gaussian(), r.gaussian(), r.gaussian()};
        const auto shifted = pushforward(m, [&](ConstSpan, Span out) {
            std::copy(v.begin(), v.end(), out.begin());
        });
        // the translation coupling is optimal
        CHECK(wasserstein2(m, shifted) == doctest::Approx(norm(v)).epsilon(1e-12));
    }
}

TEST_CASE("gaussian mollification") {
    RandomStream rng(2024);
    const auto mu = measure1d({3.0, 4.0, -1.0, 0.5});

    RandomStream zero_rng = rng.child(0);
    const auto unchanged = gaussian_mollify(mu, 0.0, zero_rng);
    for (std::size_t i = 0; i < mu.size(); ++i) CHECK(unchanged.atom(i)[0] == mu.atom(i)[0]);

    CHECK_THROWS_AS(gaussian_mollify(mu, -0.5, zero_rng), std::invalid_argument);

    // mean preserved within 3 sqrt(variance d / K); second moment gains
    // d * variance on average (checked within 3 standard errors over 1e4 reps)
    const double variance = 0.25;
    const std::size_t reps = 10000;
    KahanSum mean_acc, m2_acc, m2_sq;
    for (std::size_t r = 0; r < reps; ++r) {
        RandomStream s = rng.child(r + 1);
        const auto moll = gaussian_mollify(mu, variance, s);
        mean_acc.add(moll.mean()[0]);
        m2_acc.add(moll.second_moment());
        m2_sq.add(moll.second_moment() * moll.second_moment());
    }
    const double n = static_cast<double>(reps);
    const double avg_mean = mean_acc.value() / n;
    CHECK(std::abs(avg_mean - mu.mean()[0]) <=
          3.0 * std::sqrt(variance / static_cast<double>(mu.size())) / std::sqrt(n) + 1e-12);

    const double avg_m2 = m2_acc.value() / n;
    const double var_m2 = std::max(0.0, m2_sq.value() / n - avg_m2 * avg_m2);
    const double se = std::sqrt(var_m2 / n);
    CHECK(std::abs(avg_m2 - (mu.second_moment() + variance)) <= 3.0 * se);
}

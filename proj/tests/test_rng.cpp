#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvjl/linalg.hpp"
#include "mvjl/rng.hpp"

using namespace mvjl;

TEST_CASE("streams are deterministic and children are distinct") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RandomStream base(42);
    RandomStream c1 = base.child(1, 2, 3);
    RandomStream c2 = base.child(1, 2, 4);
    RandomStream c1_again = base.child(1, 2, 3);
    CHECK(c1.next_u64() != c2.next_u64());
    RandomStream c1_fresh = base.child(1, 2, 3);
    CHECK(c1_again.next_u64() == c1_fresh.next_u64());
}

TEST_CASE("uniform and gaussian moments") {
    RandomStream rng(7);
    const std::size_t n = 200000;
    KahanSum su, su2, sg, sg2, sg4;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        su.add(u);
        su2.add(u * u);
        const double g = rng.gaussian();
        sg.add(g);
        sg2.add(g * g);
        sg4.add(g * g * g * g);
    }
    const double nn = static_cast<double>(n);
    // uniform: mean 1/2 (se ~ 1/sqrt(12 n)), raw second moment 1/3
    CHECK(std::abs(su.value() / nn - 0.5) <= 3.0 / std::sqrt(12.0 * nn));
    CHECK(std::abs(su2.value() / nn - 1.0 / 3.0) <= 4.0 / std::sqrt(nn));
    // gaussian: mean 0 (se 1/sqrt n), variance 1 (se sqrt(2/n)), kurtosis 3
    CHECK(std::abs(sg.value() / nn) <= 3.0 / std::sqrt(nn));
    CHECK(std::abs(sg2.value() / nn - 1.0) <= 3.0 * std::sqrt(2.0 / nn));
    CHECK(std::abs(sg4.value() / nn - 3.0) <= 3.0 * std::sqrt(96.0 / nn));
}

TEST_CASE("child streams decorrelate") {
    RandomStream base(99);
    RandomStream a = base.child(1);
    RandomStream b = base.child(2);
    const std::size_t n = 100000;
    KahanSum prod;
    for (std::size_t i = 0; i < n; ++i) {
        prod.add((a.uniform01() - 0.5) * (b.uniform01() - 0.5));
    }
    // covariance of independent centered uniforms: 0 with se = 1/(12 sqrt n)
    CHECK(std::abs(prod.value() / static_cast<double>(n)) <= 3.0 / (12.0 * std::sqrt(n)));
}

TEST_CASE("poisson counts match their mean and variance") {
    RandomStream rng(123);
    for (const double mean : {0.002, 2.0, 45.0}) {  // 45 exercises the splitting path
        const std::size_t n = mean < 0.1 ? 400000 : 100000;
        KahanSum s, s2;
        for (std::size_t i = 0; i < n; ++i) {
            const double k = static_cast<double>(rng.poisson(mean));
            s.add(k);
            s2.add(k * k);
        }
        const double nn = static_cast<double>(n);
        const double m = s.value() / nn;
        const double var = s2.value() / nn - m * m;
        const double se_mean = std::sqrt(mean / nn);
        CHECK(std::abs(m - mean) <= 4.0 * se_mean);
        CHECK(std::abs(var - mean) <= 5.0 * mean / std::sqrt(nn) + 0.05 * mean + 1e-4);
    }
    CHECK(rng.poisson(0.0) == 0);
    CHECK_THROWS_AS(rng.poisson(-1.0), std::invalid_argument);
}

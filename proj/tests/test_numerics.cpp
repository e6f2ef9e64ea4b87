#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "fedlab/errors.hpp"
#include "fedlab/numerics.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;

namespace {

ParamVector pv(std::vector<double> v) {
    return ParamVector(std::move(v));
}

} // namespace

TEST_CASE("axpy basics") {
    CHECK(axpy(pv({1, 2}), 0.0, pv({5, 5})) == pv({1, 2}));
    CHECK(axpy(pv({0, 0}), 1.0, pv({3, 4})) == pv({3, 4}));
    CHECK(axpy(pv({1, 1}), -0.5, pv({2, 4})) == pv({0, -1}));
}

TEST_CASE("axpy leaves operands unmodified") {
    ParamVector y = pv({1, 2, 3});
    ParamVector x = pv({4, 5, 6});
    axpy(y, 2.0, x);
    CHECK(y == pv({1, 2, 3}));
    CHECK(x == pv({4, 5, 6}));
}

TEST_CASE("axpy errors") {
    CHECK_THROWS_AS(axpy(pv({1, 2}), 1.0, pv({1, 2, 3})), DimensionError);
    CHECK_THROWS_AS(axpy(pv({1}), std::numeric_limits<double>::quiet_NaN(), pv({1})), NumericError);
    CHECK_THROWS_AS(axpy(pv({1e308}), 1.0, pv({1e308})), NumericError);
}

TEST_CASE("norm_sq examples") {
    CHECK(norm_sq(pv({0, 0, 0})) == 0.0);
    CHECK(norm_sq(pv({3, 4})) == 25.0);
    CHECK(norm_sq(pv({1, 1, 1, 1})) == 4.0);
}

TEST_CASE("dot examples") {
    CHECK(dot(pv({1, 0}), pv({0, 1})) == 0.0);
    CHECK(dot(pv({2, 2}), pv({2, 2})) == 8.0);
    CHECK(dot(pv({1, 2, 3}), pv({4, 5, 6})) == 32.0);
    CHECK_THROWS_AS(dot(pv({1}), pv({1, 2})), DimensionError);
}

TEST_CASE("non-finite entries are rejected at construction") {
    CHECK_THROWS_AS(pv({1.0, std::numeric_limits<double>::infinity()}), NumericError);
    CHECK_THROWS_AS(pv({std::numeric_limits<double>::quiet_NaN()}), NumericError);
}

TEST_CASE("dot(x, x) is bitwise norm_sq(x)") {
    StreamRng rng(0xfeedULL);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t dim = 1 + rng.below(64);
        std::vector<double> v(dim);
        for (double& e : v) {
            e = 10.0 * rng.next_normal();
        }
        ParamVector x(std::move(v));
        CHECK(dot(x, x) == norm_sq(x));
    }
}

TEST_CASE("distance_sq agrees with the axpy route") {
    StreamRng rng(0xace5ULL);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t dim = 1 + rng.below(16);
        std::vector<double> a(dim), b(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            a[j] = rng.next_normal();
            b[j] = rng.next_normal();
        }
        ParamVector x(std::move(a)), y(std::move(b));
        CHECK(distance_sq(x, y) == norm_sq(axpy(x, -1.0, y)));
    }
}

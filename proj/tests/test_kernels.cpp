#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "scseg/errors.hpp"
#include "scseg/kernels.hpp"
#include "scseg/rng.hpp"

using namespace scseg;
using kernels::Lane;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, scale);
    return v;
}

// Plain serial references, accumulation strictly left to right.
double ref_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double ref_sum(const std::vector<double>& a) {
    double s = 0.0;
    for (double x : a) s += x;
    return s;
}

// Lengths that cover empty input, sub-vector-width tails and multi-block
// bodies for every lane width in the table.
const std::size_t kLengths[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 257};

} // namespace

TEST_CASE("lane inventory and selection") {
    auto lanes = kernels::available_lanes();
    REQUIRE(!lanes.empty());
    CHECK(lanes.front() == Lane::scalar);
    CHECK(kernels::available(Lane::scalar));

    const Lane before = kernels::active_lane();
    for (Lane lane : lanes) {
        kernels::select(lane);
        CHECK(kernels::active_lane() == lane);
        CHECK(kernels::active().name == kernels::lane_name(lane));
    }
    kernels::select(before);

    CHECK(kernels::parse_lane("scalar") == Lane::scalar);
    CHECK(kernels::parse_lane("avx2") == Lane::avx2);
    CHECK(kernels::parse_lane("neon") == Lane::neon);
    CHECK(kernels::parse_lane("auto") == kernels::preferred());
    CHECK_THROWS_AS(kernels::parse_lane("sse9"), ConfigError);
    CHECK(kernels::available(kernels::preferred()));
}

TEST_CASE("unavailable lane selection throws") {
    bool missing_found = false;
    for (Lane lane : {Lane::avx2, Lane::neon}) {
        if (!kernels::available(lane)) {
            missing_found = true;
            CHECK_THROWS_AS(kernels::select(lane), ConfigError);
            CHECK_THROWS_AS(kernels::table(lane), ConfigError);
        }
    }
    // On every single-ISA machine at least one SIMD lane is absent.
    CHECK(missing_found);
}

TEST_CASE("every available lane matches serial references") {
    Rng rng(2024);
    for (Lane lane : kernels::available_lanes()) {
        const kernels::Table& t = kernels::table(lane);
        for (std::size_t n : kLengths) {
            auto a = random_vec(rng, n, 2.0);
            auto b = random_vec(rng, n, 2.0);

            if (n > 0) {
                const double want_dot = ref_dot(a, b);
                CHECK(std::abs(t.dot(a.data(), b.data(), n) - want_dot) <=
                      1e-12 * (1.0 + std::abs(want_dot)) + 1e-12 * (double)n);
                const double want_sum = ref_sum(a);
                CHECK(std::abs(t.vsum(a.data(), n) - want_sum) <=
                      1e-12 * (1.0 + std::abs(want_sum)) + 1e-12 * (double)n);

                double mx = a[0];
                for (double x : a) mx = x > mx ? x : mx;
                CHECK(t.vmax(a.data(), n) == mx);
            } else {
                CHECK(t.dot(a.data(), b.data(), 0) == 0.0);
                CHECK(t.vsum(a.data(), 0) == 0.0);
            }

            // Elementwise ops have one rounding per element in every lane;
            // axpy may fuse, so it gets the dot-style tolerance.
            std::vector<double> out(n), want(n);
            t.vadd(out.data(), a.data(), b.data(), n);
            for (std::size_t i = 0; i < n; ++i) want[i] = a[i] + b[i];
            CHECK(out == want);
            t.vsub(out.data(), a.data(), b.data(), n);
            for (std::size_t i = 0; i < n; ++i) want[i] = a[i] - b[i];
            CHECK(out == want);
            t.vmul(out.data(), a.data(), b.data(), n);
            for (std::size_t i = 0; i < n; ++i) want[i] = a[i] * b[i];
            CHECK(out == want);

            std::vector<double> y = b;
            t.axpy(y.data(), 1.75, a.data(), n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::abs(y[i] - (b[i] + 1.75 * a[i])) <=
                      1e-12 * (1.0 + std::abs(y[i])));
            }

            std::vector<double> s = a;
            t.scale(s.data(), -0.5, n);
            for (std::size_t i = 0; i < n; ++i) want[i] = a[i] * -0.5;
            CHECK(s == want);
        }
    }
}

TEST_CASE("dot is bitwise symmetric within each lane") {
    Rng rng(77);
    for (Lane lane : kernels::available_lanes()) {
        const kernels::Table& t = kernels::table(lane);
        for (std::size_t n : kLengths) {
            auto a = random_vec(rng, n, 3.0);
            auto b = random_vec(rng, n, 3.0);
            const double ab = t.dot(a.data(), b.data(), n);
            const double ba = t.dot(b.data(), a.data(), n);
            CHECK(std::memcmp(&ab, &ba, sizeof ab) == 0);
        }
    }
}

TEST_CASE("lane results are reproducible run to run") {
    Rng rng(3111);
    auto a = random_vec(rng, 513);
    auto b = random_vec(rng, 513);
    for (Lane lane : kernels::available_lanes()) {
        const kernels::Table& t = kernels::table(lane);
        const double first = t.dot(a.data(), b.data(), a.size());
        for (int rep = 0; rep < 8; ++rep)
            CHECK(t.dot(a.data(), b.data(), a.size()) == first);
    }
}

TEST_CASE("vmax handles all-negative and single-entry input") {
    for (Lane lane : kernels::available_lanes()) {
        const kernels::Table& t = kernels::table(lane);
        std::vector<double> neg = {-5.0, -2.5, -9.0, -2.25, -11.0, -3.0};
        CHECK(t.vmax(neg.data(), neg.size()) == -2.25);
        double one = -42.0;
        CHECK(t.vmax(&one, 1) == -42.0);
    }
}

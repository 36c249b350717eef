#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"
#include "support/oracles.hpp"

using namespace contourfit;
using Catch::Approx;

TEST_CASE("signed distance: uniform masks clamp", "[grid][sdf]") {
    BinaryMask zeros(4, 4);
    const LevelSet phi = signed_distance(zeros, 8.0);
    for (double v : phi.data) CHECK(v == -8.0);

    BinaryMask ones(4, 4, 1);
    const LevelSet phi1 = signed_distance(ones, 8.0);
    for (double v : phi1.data) CHECK(v == 8.0);
}

TEST_CASE("signed distance: 1x3 strip", "[grid][sdf]") {
    BinaryMask m(3, 1);
    m.at(1, 0) = 1;
    const LevelSet phi = signed_distance(m, 8.0);
    CHECK(phi.at(0, 0) == -1.0);
    CHECK(phi.at(1, 0) == 1.0);
    CHECK(phi.at(2, 0) == -1.0);
}

TEST_CASE("signed distance: single center pixel corners", "[grid][sdf]") {
    BinaryMask m(5, 5);
    m.at(2, 2) = 1;
    const LevelSet phi = signed_distance(m, 16.0);
    const double expect = -std::sqrt(8.0);
    CHECK(phi.at(0, 0) == Approx(expect).epsilon(1e-12));
    CHECK(phi.at(4, 0) == Approx(expect).epsilon(1e-12));
    CHECK(phi.at(0, 4) == Approx(expect).epsilon(1e-12));
    CHECK(phi.at(4, 4) == Approx(expect).epsilon(1e-12));
}

TEST_CASE("signed distance: zero-size mask rejected", "[grid][sdf]") {
    BinaryMask empty;
    CHECK_THROWS_AS(signed_distance(empty, 8.0), DimensionError);
}

TEST_CASE("signed distance matches exhaustive search", "[grid][sdf]") {
    Rng rng(11);
    for (int trial = 0; trial < 12; ++trial) {
        const BinaryMask m = oracles::random_mask(rng, 15, 11);
        const LevelSet fast = signed_distance(m, 9.0);
        const LevelSet slow = oracles::signed_distance_naive(m, 9.0);
        for (std::size_t i = 0; i < fast.size(); ++i)
            REQUIRE(fast.data[i] == Approx(slow.data[i]).margin(1e-9));
    }
}

TEST_CASE("signed distance of the complement is the negation", "[grid][sdf]") {
    Rng rng(12);
    const BinaryMask m = oracles::random_mask(rng, 17, 13);
    const double clamp = 1e6; // nothing clamps at this size
    const LevelSet a = signed_distance(m, clamp);
    const LevelSet b = signed_distance(complement(m), clamp);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.data[i] == -b.data[i]);
}

TEST_CASE("smooth heaviside values and symmetry", "[grid][heaviside]") {
    CHECK(smooth_heaviside(0.0, 1.0) == 0.5);
    CHECK(smooth_heaviside(0.0, 3.7) == 0.5);
    CHECK(smooth_heaviside(1.0, 1.0) == Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(smooth_heaviside(800.0, 1.0) == 1.0);
    CHECK(smooth_heaviside(-800.0, 1.0) == 0.0);

    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-40.0, 40.0);
        const double d = rng.uniform(0.1, 5.0);
        REQUIRE(smooth_heaviside(x, d) + smooth_heaviside(-x, d) == Approx(1.0).margin(1e-15));
        const double fd =
            (smooth_heaviside(x + 1e-6, d) - smooth_heaviside(x - 1e-6, d)) / 2e-6;
        REQUIRE(smooth_heaviside_deriv(x, d) == Approx(fd).margin(1e-7));
    }
    CHECK_THROWS_AS(smooth_heaviside(0.0, 0.0), ArgumentError);
}

TEST_CASE("smooth max closed forms", "[grid][smoothmax]") {
    SmoothParams lse{1.0, 1.0, SmoothMaxVariant::LogSumExp};
    const std::vector<double> two_zeros = {0.0, 0.0};
    CHECK(smooth_max(two_zeros, lse) == Approx(std::log(2.0)).epsilon(1e-12));

    SmoothParams pn{1.0, 2.0, SmoothMaxVariant::PNorm};
    const std::vector<double> pythagoras = {3.0, 4.0};
    CHECK(smooth_max(pythagoras, pn) == Approx(5.0).epsilon(1e-12));

    SmoothParams avg{1.0, 50.0, SmoothMaxVariant::ExpWeightedAverage};
    const std::vector<double> one_zero = {1.0, 0.0};
    CHECK(smooth_max(one_zero, avg) == Approx(1.0).margin(1e-9));
}

TEST_CASE("smooth max argument checks", "[grid][smoothmax]") {
    SmoothParams p;
    CHECK_THROWS_AS(smooth_max({}, p), ArgumentError);
    SmoothParams pn{1.0, 2.0, SmoothMaxVariant::PNorm};
    const std::vector<double> neg = {0.5, -0.1};
    CHECK_THROWS_AS(smooth_max(neg, pn), ArgumentError);
}

TEST_CASE("smooth max approaches the true max monotonically", "[grid][smoothmax]") {
    Rng rng(4);
    for (const auto variant : {SmoothMaxVariant::LogSumExp, SmoothMaxVariant::ExpWeightedAverage,
                               SmoothMaxVariant::PNorm}) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> v(1 + rng.uniform_index(9));
            for (double& x : v) x = rng.uniform(0.05, 1.0); // p-norm needs positives
            const double m = *std::max_element(v.begin(), v.end());
            double prev_gap = std::numeric_limits<double>::infinity();
            for (const double gamma : {2.0, 8.0, 32.0, 128.0, 512.0}) {
                SmoothParams p{1.0, gamma, variant};
                const double gap = std::abs(smooth_max(v, p) - m);
                REQUIRE(gap <= prev_gap + 1e-12);
                prev_gap = gap;
            }
            REQUIRE(prev_gap < 1e-2);
        }
    }
}

TEST_CASE("log-sum-exp bound holds exactly", "[grid][smoothmax]") {
    Rng rng(5);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> v(1 + rng.uniform_index(16));
        for (double& x : v) x = rng.uniform(-3.0, 3.0);
        const double m = *std::max_element(v.begin(), v.end());
        for (const double gamma : {1.0, 10.0, 100.0}) {
            SmoothParams p{1.0, gamma, SmoothMaxVariant::LogSumExp};
            const double s = smooth_max(v, p);
            REQUIRE(s >= m);
            REQUIRE(s <= m + std::log(static_cast<double>(v.size())) / gamma);
        }
    }
}

TEST_CASE("smooth max derivative matches finite differences", "[grid][smoothmax]") {
    Rng rng(6);
    for (const auto variant : {SmoothMaxVariant::LogSumExp, SmoothMaxVariant::ExpWeightedAverage,
                               SmoothMaxVariant::PNorm}) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> v(2 + rng.uniform_index(6));
            for (double& x : v) x = rng.uniform(0.1, 1.0);
            SmoothParams p{1.0, rng.uniform(2.0, 20.0), variant};
            std::vector<double> grad(v.size());
            smooth_max_grad(v, p, grad);
            for (std::size_t k = 0; k < v.size(); ++k) {
                std::vector<double> vp = v, vm = v;
                vp[k] += 1e-7;
                vm[k] -= 1e-7;
                const double fd = (smooth_max(vp, p) - smooth_max(vm, p)) / 2e-7;
                REQUIRE(grad[k] == Approx(fd).margin(1e-6));
            }
        }
    }
}

TEST_CASE("affine warp: identity and integer shift", "[grid][warp]") {
    Rng rng(7);
    Grid2D src(6, 5);
    for (double& v : src.data) v = rng.uniform(-1.0, 1.0);

    const Grid2D same = affine_warp(src, AffineParams(0.0, 0.0, 0.0), 9.0);
    for (std::size_t i = 0; i < src.size(); ++i) REQUIRE(same.data[i] == src.data[i]);

    const Grid2D shifted = affine_warp(src, AffineParams(1.0, 0.0, 0.0), 9.0);
    for (int y = 0; y < src.height; ++y) {
        REQUIRE(shifted.at(0, y) == 9.0); // fill enters on the left
        for (int x = 1; x < src.width; ++x) REQUIRE(shifted.at(x, y) == src.at(x - 1, y));
    }
}

TEST_CASE("affine warp: quarter turn of a 2x2 grid", "[grid][warp]") {
    Grid2D src(2, 2);
    src.at(0, 0) = 1.0; // a
    src.at(1, 0) = 2.0; // b
    src.at(0, 1) = 3.0; // c
    src.at(1, 1) = 4.0; // d
    const Grid2D out = affine_warp(src, AffineParams(0.0, 0.0, std::numbers::pi / 2.0), 0.0);
    // out(x) = src at the quarter-turn-back position about the center
    CHECK(out.at(0, 0) == Approx(3.0).margin(1e-12));
    CHECK(out.at(1, 0) == Approx(1.0).margin(1e-12));
    CHECK(out.at(0, 1) == Approx(4.0).margin(1e-12));
    CHECK(out.at(1, 1) == Approx(2.0).margin(1e-12));
}

TEST_CASE("warp then inverse warp recovers a band-limited grid", "[grid][warp]") {
    const int n = 48;
    Grid2D src(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            src.at(x, y) = 0.6 * std::sin(2.0 * std::numbers::pi * x / n) *
                               std::cos(2.0 * std::numbers::pi * y / n) +
                           0.2 * std::sin(2.0 * std::numbers::pi * (x + y) / n);
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const AffineParams p(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                             rng.uniform(0.0, 2.0 * std::numbers::pi));
        const Grid2D once = affine_warp(src, p, 0.0);
        const Grid2D back = affine_warp(once, invert_affine(p), 0.0);
        for (int y = 8; y < n - 8; ++y)
            for (int x = 8; x < n - 8; ++x)
                REQUIRE(back.at(x, y) == Approx(src.at(x, y)).margin(1e-2));
    }
}

TEST_CASE("warp backward: identity grad_src and constant-field rotation", "[grid][warp]") {
    Grid2D src(8, 8, 3.25);
    Grid2D up(8, 8, 1.0);
    const WarpBackwardResult b = warp_backward(src, AffineParams(0.0, 0.0, 0.0), up, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) REQUIRE(b.grad_src.at(x, y) == 1.0);

    // constant field, upstream restricted to the interior: rotation changes nothing
    Grid2D up_interior(8, 8, 0.0);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) up_interior.at(x, y) = 1.0;
    const WarpBackwardResult r =
        warp_backward(src, AffineParams(0.0, 0.0, 0.4), up_interior, 0.0);
    CHECK(r.d_kappa == Approx(0.0).margin(1e-10));
}

TEST_CASE("warp backward matches finite differences", "[grid][warp]") {
    // seeds chosen so no probe crosses a bilinear cell boundary
    for (const std::uint64_t seed : {1ull, 3ull, 5ull, 6ull, 7ull, 13ull, 14ull, 15ull}) {
        Rng rng(seed);
        Grid2D src(16, 16), up(16, 16);
        for (double& v : src.data) v = rng.uniform(-1.0, 1.0);
        for (double& v : up.data) v = rng.uniform(-1.0, 1.0);
        const AffineParams p(rng.uniform(-2.3, 2.3), rng.uniform(-2.3, 2.3),
                             rng.uniform(0.05, 6.0));
        const double fill = -0.5;
        const WarpBackwardResult b = warp_backward(src, p, up, fill);

        auto objective = [&](const AffineParams& q) {
            const Grid2D out = affine_warp(src, q, fill);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
            return s;
        };
        AffineParams q = p;
        q.tx = p.tx + 1e-3;
        const double f_p = objective(q);
        q.tx = p.tx - 1e-3;
        const double f_m = objective(q);
        REQUIRE(b.d_tx == Approx((f_p - f_m) / 2e-3).epsilon(1e-4).margin(1e-4));

        q = p;
        q.kappa = p.kappa + 1e-4;
        const double fk_p = objective(q);
        q.kappa = p.kappa - 1e-4;
        const double fk_m = objective(q);
        REQUIRE(b.d_kappa == Approx((fk_p - fk_m) / 2e-4).epsilon(1e-4).margin(1e-4));
    }
}

TEST_CASE("angle normalization", "[grid]") {
    CHECK(normalize_angle(0.0) == 0.0);
    CHECK(normalize_angle(2.0 * std::numbers::pi) == 0.0);
    CHECK(normalize_angle(-0.5) == Approx(2.0 * std::numbers::pi - 0.5));
    CHECK(normalize_angle(7.0) == Approx(7.0 - 2.0 * std::numbers::pi));
}

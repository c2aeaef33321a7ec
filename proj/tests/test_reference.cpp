#include <catch2/catch_amalgamated.hpp>

#include "mpct/reference.hpp"
#include "mpct/systems.hpp"

using namespace mpct;

namespace {

Vec v1(double a) {
    Vec v(1);
    v[0] = a;
    return v;
}

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

Vec v3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

ConstraintSet scalar_boxes() {
    return ConstraintSet(1, 1, Box(v2(-2, -1), v2(2, 1)), Box(v2(-1.9, -0.9), v2(1.9, 0.9)));
}

ConstraintSet cstr_boxes() {
    return ConstraintSet(2, 1, Box(v3(0, 0, 0), v3(1, 1, 2)),
                         Box(v3(0.0529, 0.43, 0.1366), v3(0.9492, 0.86, 0.7687)));
}

}  // namespace

TEST_CASE("best reachable reference, scalar") {
    const auto model = make_scalar_integrator();
    const auto cs = scalar_boxes();
    const OffsetCost t(Mat::Identity(1, 1), Mat::Identity(1, 1), v1(0), v1(0));
    const auto best = best_reachable_reference(model, cs, t);
    CHECK(best.certified);
    CHECK(std::abs(best.r.x_r[0]) < 1e-9);
    CHECK(std::abs(best.r.u_r[0]) < 1e-9);
}

TEST_CASE("boundary minimiser is projected onto Zr") {
    const auto model = make_scalar_integrator();
    const ConstraintSet cs(1, 1, Box(v2(-2.2, -1), v2(2.2, 1)), Box(v2(-2, -0.9), v2(2, 0.9)));
    const OffsetCost t(Mat::Identity(1, 1), Mat::Identity(1, 1), v1(3.0), v1(0));
    const auto best = best_reachable_reference(model, cs, t);
    CHECK(best.r.x_r[0] == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("best reachable reference, cstr") {
    const auto model = make_cstr();
    const auto cs = cstr_boxes();
    Mat Sx(2, 2);
    Sx << 0.01, 0, 0, 1000;
    const OffsetCost t(Sx, Mat::Identity(1, 1), v2(0.2632, 0.6519), v1(0.7583));
    const auto best = best_reachable_reference(model, cs, t);
    CHECK(best.certified);
    CHECK(best.r.x_r[0] == Catch::Approx(0.2632).margin(1e-4));
    CHECK(best.r.x_r[1] == Catch::Approx(0.6519).margin(1e-4));
    CHECK(best.r.u_r[0] >= 0.1366);
    CHECK(best.r.u_r[0] <= 0.7687);
    CHECK(equilibrium_residual(model, best.r) <= 1e-9);

    SECTION("rerunning from its own output is a fixed point") {
        const auto again = best_reachable_reference(model, cs, t, &best.r);
        CHECK(ref_distance(again.r, best.r) <= 1e-10);
    }
}

TEST_CASE("candidate reference interpolation") {
    const auto model = make_scalar_integrator();
    const auto cs = scalar_boxes();
    const Reference r{v1(1), v1(0)};
    const Reference rd{v1(0), v1(0)};
    SECTION("theta endpoints") {
        const auto a = candidate_reference(model, cs, r, rd, 0.0);
        CHECK(ref_distance(a, r) < 1e-12);
        const auto b = candidate_reference(model, cs, r, rd, 1.0);
        CHECK(ref_distance(b, rd) < 1e-12);
    }
    SECTION("midpoint on an affine manifold") {
        const auto mid = candidate_reference(model, cs, r, rd, 0.5);
        CHECK(mid.x_r[0] == Catch::Approx(0.5).margin(1e-12));
        CHECK(std::abs(mid.u_r[0]) < 1e-12);
    }
}

TEST_CASE("candidate constants hold on fresh samples") {
    SECTION("scalar") {
        const auto model = make_scalar_integrator();
        const auto cs = scalar_boxes();
        const OffsetCost t(Mat::Identity(1, 1), Mat::Identity(1, 1), v1(0), v1(0));
        const Reference rd{v1(0), v1(0)};
        const auto cc = assess_candidate_constants(model, cs, t, rd, 100, 12);
        CHECK(cc.c1r > 0.0);
        CHECK(cc.c2r > 0.0);
        CHECK(cc.max_violation_step <= 1e-9);
        CHECK(cc.max_violation_decrease <= 1e-9);
    }
    SECTION("cstr") {
        const auto model = make_cstr();
        const auto cs = cstr_boxes();
        Mat Sx(2, 2);
        Sx << 0.01, 0, 0, 1000;
        const OffsetCost t(Sx, Mat::Identity(1, 1), v2(0.2632, 0.6519), v1(0.7583));
        const auto best = best_reachable_reference(model, cs, t);
        const auto cc = assess_candidate_constants(model, cs, t, best.r, 40, 12);
        CHECK(cc.c1r > 0.0);
        CHECK(cc.c2r > 0.0);
        CHECK(cc.max_violation_step <= 1e-7);
        CHECK(cc.max_violation_decrease <= 1e-7);
    }
}

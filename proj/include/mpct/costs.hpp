#pragma once

#include <array>
#include <cmath>

#include "mpct/model.hpp"
#include "mpct/qp.hpp"
#include "mpct/types.hpp"

namespace mpct {

namespace detail {

inline void check_spd(const Mat& M, const char* what, double& mu_min, double& mu_max) {
    if (M.rows() != M.cols()) throw Error(std::string(what) + ": must be square");
    if (!M.isApprox(M.transpose(), 1e-12)) throw Error(std::string(what) + ": must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(M);
    mu_min = es.eigenvalues().minCoeff();
    mu_max = es.eigenvalues().maxCoeff();
    if (!(mu_min > 0.0)) throw Error(std::string(what) + ": must be positive definite");
}

}  // namespace detail

/// Quadratic stage cost l(x,u,r) = |x - x_r|_Q^2 + |u - u_r|_R^2.
struct StageCost {
    Mat Q, R;
    double q_min = 0, q_max = 0, r_min = 0, r_max = 0;

    StageCost() = default;
    StageCost(Mat Q_, Mat R_) : Q(std::move(Q_)), R(std::move(R_)) {
        detail::check_spd(Q, "StageCost Q", q_min, q_max);
        detail::check_spd(R, "StageCost R", r_min, r_max);
    }
};

inline double stage_cost(const StageCost& sc, const Vec& x, const Vec& u, const Reference& r) {
    const Vec dx = x - r.x_r;
    const Vec du = u - r.u_r;
    return dx.dot(sc.Q * dx) + du.dot(sc.R * du);
}

/// Offset cost T(r) = |x_r - x_e|_{S_x}^2 + |u_r - u_e|_{S_u}^2. The external
/// reference r_e = (x_e, u_e) need not be an equilibrium. The normalisation
/// T(r) - T(r_d) is applied only in diagnostics, never inside the optimiser.
struct OffsetCost {
    Mat S_x, S_u;
    Vec x_e, u_e;
    double sx_min = 0, sx_max = 0, su_min = 0, su_max = 0;

    OffsetCost() = default;
    OffsetCost(Mat Sx, Mat Su, Vec xe, Vec ue)
        : S_x(std::move(Sx)), S_u(std::move(Su)), x_e(std::move(xe)), u_e(std::move(ue)) {
        detail::check_spd(S_x, "OffsetCost S_x", sx_min, sx_max);
        detail::check_spd(S_u, "OffsetCost S_u", su_min, su_max);
    }
};

inline double offset_cost(const OffsetCost& t, const Reference& r) {
    const Vec dx = r.x_r - t.x_e;
    const Vec du = r.u_r - t.u_e;
    return dx.dot(t.S_x * dx) + du.dot(t.S_u * du);
}

/// Offset cost shifted so that it vanishes at the best reachable reference.
inline double offset_cost_normalized(const OffsetCost& t, const Reference& r,
                                     const Reference& r_d) {
    return offset_cost(t, r) - offset_cost(t, r_d);
}

/// Horizon scaling of the offset cost: lambda(N) = max(N,1) (linear) or a
/// constant c >= 1.
struct ScalingFn {
    enum class Kind { constant, linear };
    Kind kind = Kind::linear;
    double c = 1.0;

    static ScalingFn linear() { return ScalingFn{Kind::linear, 1.0}; }
    static ScalingFn constant(double c) {
        if (!(c >= 1.0)) throw Error("ScalingFn: constant scaling must be >= 1");
        return ScalingFn{Kind::constant, c};
    }

    double operator()(int N) const {
        return kind == Kind::linear ? static_cast<double>(std::max(N, 1)) : c;
    }
};

/// Minimum of the stage cost over admissible inputs at fixed x. For box
/// constraints this is the coordinatewise clamp of u_r when R is diagonal;
/// otherwise an exact box-QP solve.
inline double min_input_cost(const StageCost& sc, const ConstraintSet& cs, const Vec& x,
                             const Reference& r) {
    if (!cs.state_box().contains(x, 1e-12))
        throw Error("min_input_cost: empty input slice (state outside Z)");
    const Box ubox = cs.input_box();
    Vec u_star;
    if (sc.R.isDiagonal(1e-14)) {
        u_star = ubox.clamp(r.u_r);
    } else {
        DenseKkt qp(2.0 * sc.R, -2.0 * sc.R * r.u_r, Mat(0, cs.m), Vec(0), ubox.lo, ubox.hi);
        const QpResult sol = solve_qp(qp);
        if (sol.status != QpStatus::optimal) throw Error("min_input_cost: QP solve failed");
        u_star = sol.z;
    }
    return stage_cost(sc, x, u_star, r);
}

enum class ConstantSource { formula, sampled };

/// Constants of the stage-cost comparison inequalities. c1, c5, c6 are closed
/// form for quadratic costs; c2, c3, c4 are certified on random samples and
/// inflated by 10%.
struct CostConstants {
    double c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0, c6 = 0;
    std::array<ConstantSource, 6> source{};
};

namespace detail {

// sup over v in B, w in Br of |v - w|_2, for boxes Br inside B.
inline double box_pair_diameter(const Box& b, const Box& br) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < b.dim(); ++i) {
        const double d = std::max(b.hi[i] - br.lo[i], br.hi[i] - b.lo[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace detail

inline CostConstants assumption_constants(const StageCost& sc, const ConstraintSet& cs,
                                          const SystemModel& model, int samples = 10000,
                                          std::uint64_t seed = 20230601) {
    CostConstants k;
    k.c1 = sc.q_min;
    k.c5 = std::max(sc.q_max, sc.r_max);
    const double sup_x = detail::box_pair_diameter(cs.state_box(), cs.ref_state_box());
    const double sup_u = detail::box_pair_diameter(cs.input_box(), cs.ref_input_box());
    k.c6 = 2.0 * std::sqrt(2.0) * k.c5 * std::max(sup_x, sup_u);
    k.source[0] = k.source[4] = k.source[5] = ConstantSource::formula;

    // Sampled certificates for c2 (upper sandwich), c3/c4 (reference swap).
    Rng rng(seed);
    double c2 = sc.q_max;  // attained when u_r is admissible, which Zr guarantees
    k.c3 = 2.0;
    double c4 = 1e-8;
    for (int s = 0; s < samples; ++s) {
        const Vec z = rng.vector_in(cs.Z);
        const Vec x = z.head(cs.n), u = z.tail(cs.m);
        const Reference r1 = sample_reference(model, cs, rng);
        const Reference r2 = sample_reference(model, cs, rng);
        const double d2 = (x - r1.x_r).squaredNorm();
        if (d2 > 1e-12) c2 = std::max(c2, min_input_cost(sc, cs, x, r1) / d2);
        const double rr = ref_distance(r1, r2);
        if (rr > 1e-8) {
            const double l1 = stage_cost(sc, x, u, r1);
            const double l2 = stage_cost(sc, x, u, r2);
            c4 = std::max(c4, (l1 - k.c3 * l2) / (rr * rr));
        }
    }
    k.c2 = 1.1 * c2;
    k.c4 = 1.1 * std::max(c4, 1e-8);
    k.source[1] = k.source[2] = k.source[3] = ConstantSource::sampled;
    return k;
}

/// Tracking part of the objective: sum of stage costs plus terminal cost.
/// The trajectory must be dynamically consistent (defects within 1e-8).
template <class TerminalValue>
double tracking_objective(const StageCost& sc, const SystemModel& model,
                          const std::vector<Vec>& xs, const std::vector<Vec>& us,
                          const Reference& r, TerminalValue&& vf) {
    const int N = static_cast<int>(us.size());
    if (static_cast<int>(xs.size()) != N + 1)
        throw Error("tracking_objective: need N+1 states for N inputs");
    for (int k = 0; k < N; ++k)
        if ((xs[k + 1] - discretize_step(model, xs[k], us[k])).norm() > 1e-8)
            throw Error("tracking_objective: inconsistent trajectory at step " + std::to_string(k));
    double j = 0.0;
    for (int k = 0; k < N; ++k) j += stage_cost(sc, xs[k], us[k], r);
    return j + vf(xs[N], r);
}

/// Closed-loop performance relative to r_d over the first K steps.
inline double performance(const StageCost& sc, const std::vector<Vec>& xs,
                          const std::vector<Vec>& us, const Reference& r_d, int K) {
    if (K > static_cast<int>(us.size()) || K > static_cast<int>(xs.size()))
        throw Error("performance: trace shorter than K");
    double j = 0.0;
    for (int k = 0; k < K; ++k) j += stage_cost(sc, xs[k], us[k], r_d);
    return j;
}

/// Sample-based verification of the cost inequalities. Violations are data,
/// not errors; a healthy configuration reports all maxima <= 0.
struct AssumptionCheckReport {
    CostConstants constants;
    double offset_indication = -kInf;   // quadratic envelope on T around r_d
    double sandwich = -kInf;            // c1 |x|^2 <= lbar <= c2 |x|^2
    double ref_swap_quadratic = -kInf;  // l(r1) <= c3 l(r2) + c4 |r1-r2|^2
    double ref_swap_linear = -kInf;     // l(r1) <= l(r2) + c5 |r1-r2|^2 + c6 |r1-r2|
    double alpha_lo = 0, alpha_up = 0;  // fitted quadratic envelope coefficients
    int samples = 0;
};

inline AssumptionCheckReport verify_assumptions(const StageCost& sc, const OffsetCost& t,
                                                const ConstraintSet& cs, const SystemModel& model,
                                                const Reference& r_d, int samples = 10000,
                                                std::uint64_t seed = 77) {
    if (samples < 1) throw Error("verify_assumptions: need at least one sample");
    AssumptionCheckReport rep;
    rep.samples = samples;
    rep.constants = assumption_constants(sc, cs, model, std::min(samples, 10000), seed);
    const CostConstants& k = rep.constants;

    // Fit the quadratic envelope for the offset-cost indication on an
    // independent sample set, then verify on the main set.
    {
        Rng fit_rng(seed ^ 0x9e3779b97f4a7c15ull);
        double lo = kInf, up = 0.0;
        for (int s = 0; s < std::min(samples, 2000); ++s) {
            const Reference r = sample_reference(model, cs, fit_rng);
            const double d = ref_distance(r, r_d);
            if (d < 1e-6) continue;
            const double ratio = offset_cost_normalized(t, r, r_d) / (d * d);
            lo = std::min(lo, ratio);
            up = std::max(up, ratio);
        }
        if (!std::isfinite(lo)) { lo = t.sx_min; up = t.sx_max + t.su_max; }
        rep.alpha_lo = 0.9 * std::max(lo, 0.0);
        rep.alpha_up = 1.1 * up;
    }

    Rng rng(seed + 1);
    for (int s = 0; s < samples; ++s) {
        const Vec z = rng.vector_in(cs.Z);
        const Vec x = z.head(cs.n), u = z.tail(cs.m);
        const Reference r1 = sample_reference(model, cs, rng);
        const Reference r2 = sample_reference(model, cs, rng);

        const double lb = min_input_cost(sc, cs, x, r1);
        const double d2 = (x - r1.x_r).squaredNorm();
        rep.sandwich = std::max(rep.sandwich, std::max(k.c1 * d2 - lb, lb - k.c2 * d2));

        const double l1 = stage_cost(sc, x, u, r1);
        const double l2 = stage_cost(sc, x, u, r2);
        const double rr = ref_distance(r1, r2);
        rep.ref_swap_quadratic =
            std::max(rep.ref_swap_quadratic, l1 - (k.c3 * l2 + k.c4 * rr * rr));
        rep.ref_swap_linear =
            std::max(rep.ref_swap_linear, l1 - (l2 + k.c5 * rr * rr + k.c6 * rr));

        const double dd = ref_distance(r1, r_d);
        const double tn = offset_cost_normalized(t, r1, r_d);
        rep.offset_indication = std::max(
            rep.offset_indication, std::max(rep.alpha_lo * dd * dd - tn, tn - rep.alpha_up * dd * dd));
    }
    return rep;
}

}  // namespace mpct

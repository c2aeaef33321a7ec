#pragma once

#include <optional>
#include <vector>

#include "mpct/costs.hpp"
#include "mpct/model.hpp"
#include "mpct/qp.hpp"

namespace mpct {

struct BestReference {
    Reference r;
    bool certified = false;   ///< KKT tolerance reached
    double kkt_residual = kInf;
    double offset_value = kInf;  ///< T(r), unnormalised
};

namespace detail {

// Projected stationarity of g + J'nu over the box (0 at a KKT point).
inline double projected_stationarity(const Vec& s, const Vec& z, const Box& box) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const bool at_lo = z[i] <= box.lo[i] + 1e-10;
        const bool at_hi = z[i] >= box.hi[i] - 1e-10;
        if (at_lo && s[i] >= 0) continue;
        if (at_hi && s[i] <= 0) continue;
        r = std::max(r, std::abs(s[i]));
    }
    return r;
}

}  // namespace detail

/**
 * @brief Minimises the offset cost over the equilibrium manifold intersected
 * with Zr.
 *
 * Gauss-Newton SQP with an l1 merit line search, run from a deterministic set
 * of starting points; the winner is polished back onto the manifold so the
 * Reference invariants hold with margin. Throws when no equilibrium is found;
 * a stalled solve returns the best iterate with certified = false.
 */
inline BestReference best_reachable_reference(const SystemModel& model, const ConstraintSet& cs,
                                              const OffsetCost& T,
                                              const Reference* hint = nullptr) {
    const int n = cs.n, m = cs.m;
    std::vector<Vec> starts;
    {
        if (hint) starts.push_back(hint->stacked());
        Vec c = cs.Zr.center();
        starts.push_back(c);
        Vec e(n + m);
        e << T.x_e, T.u_e;
        starts.push_back(cs.Zr.clamp(e));
        Rng rng(4242);
        for (int i = 0; i < 3; ++i) starts.push_back(rng.vector_in(cs.Zr));
    }

    BestReference best;
    bool found_any = false;
    const Mat H = 2.0 * (Mat(n + m, n + m) << Mat(T.S_x), Mat::Zero(n, m), Mat::Zero(m, n),
                         Mat(T.S_u)).finished();

    for (const Vec& s0 : starts) {
        auto proj = project_to_manifold(model, s0.head(n), s0.tail(m));
        Vec z(n + m);
        if (proj) z << proj->x_r, proj->u_r;
        else z = s0;
        z = cs.Zr.clamp(z);

        double rho = 1.0;
        double kkt = kInf;
        Mat A(n, n), B(n, m);
        for (int it = 0; it < 80; ++it) {
            const Reference r{z.head(n), z.tail(m)};
            const Vec c = discretize_step(model, r.x_r, r.u_r) - r.x_r;
            discrete_jacobian(model, r.x_r, r.u_r, A, B);
            Mat J(n, n + m);
            J << A - Mat::Identity(n, n), B;
            Vec g(n + m);
            g << 2.0 * T.S_x * (r.x_r - T.x_e), 2.0 * T.S_u * (r.u_r - T.u_e);

            DenseKkt qp(H, g, J, -c, cs.Zr.lo - z, cs.Zr.hi - z);
            const QpResult sol = solve_qp(qp);
            if (sol.status != QpStatus::optimal) break;

            kkt = std::max(detail::projected_stationarity(g + J.transpose() * sol.eq_mult, z, cs.Zr),
                           c.lpNorm<Eigen::Infinity>());
            if (kkt <= 1e-9 && sol.z.lpNorm<Eigen::Infinity>() <= 1e-9) break;

            rho = std::max(rho, 1.5 * sol.eq_mult.lpNorm<Eigen::Infinity>() + 1.0);
            const double merit0 = offset_cost(T, r) + rho * c.lpNorm<1>();
            const double slope = g.dot(sol.z) - rho * c.lpNorm<1>();
            double alpha = 1.0;
            while (alpha > 1e-12) {
                const Vec zt = z + alpha * sol.z;
                const Reference rt{zt.head(n), zt.tail(m)};
                const double ct = (discretize_step(model, rt.x_r, rt.u_r) - rt.x_r).lpNorm<1>();
                if (offset_cost(T, rt) + rho * ct <= merit0 + 1e-4 * alpha * slope) break;
                alpha *= 0.5;
            }
            if (alpha <= 1e-12) break;
            z += alpha * sol.z;
        }

        // Final polish back onto the manifold.
        auto rp = project_to_manifold(model, z.head(n), z.tail(m), 1e-13);
        if (!rp) continue;
        Vec zz = rp->stacked();
        if (!cs.Zr.contains(zz, 1e-9)) continue;
        const double val = offset_cost(T, *rp);
        found_any = true;
        if (val < best.offset_value) {
            best.r = Reference{cs.Zr.clamp(zz).head(n), cs.Zr.clamp(zz).tail(m)};
            // Clamping can only move by ~1e-9; re-project if it moved at all.
            if ((best.r.stacked() - zz).norm() > 0) {
                auto rq = project_to_manifold(model, best.r.x_r, best.r.u_r, 1e-13);
                if (rq) best.r = *rq;
            }
            best.offset_value = val;
            best.kkt_residual = kkt;
            best.certified = kkt <= 1e-8 && equilibrium_residual(model, best.r) <= kRefTol;
        }
    }
    if (!found_any) throw Error("best_reachable_reference: no equilibrium found in Zr");
    return best;
}

/**
 * @brief Interpolates from r towards r_d by theta and corrects back onto the
 * equilibrium manifold with a least-norm Newton step.
 */
inline Reference candidate_reference(const SystemModel& model, const ConstraintSet& cs,
                                     const Reference& r, const Reference& r_d, double theta) {
    if (theta < 0.0 || theta > 1.0) throw Error("candidate_reference: theta outside [0,1]");
    const Vec px = r.x_r + theta * (r_d.x_r - r.x_r);
    const Vec pu = r.u_r + theta * (r_d.u_r - r.u_r);
    auto proj = project_to_manifold(model, px, pu, 1e-12, 50);
    if (!proj) throw Error("candidate_reference: manifold projection did not converge");
    return *proj;
}

/// Empirical constants of the candidate-reference inequalities, measured on a
/// sampled (r, theta) grid and reported with a 10% margin.
struct CandidateConstants {
    double c1r = 0.0;  ///< |r_hat - r| <= c1r * theta * |r - r_d|
    double c2r = 0.0;  ///< T(r) - T(r_hat) >= c2r * theta * |r - r_d|^2
    int samples = 0;
    double max_violation_step = -kInf;      ///< against reported c1r, fresh samples
    double max_violation_decrease = -kInf;  ///< against reported c2r, fresh samples
};

inline CandidateConstants assess_candidate_constants(const SystemModel& model,
                                                     const ConstraintSet& cs, const OffsetCost& T,
                                                     const Reference& r_d, int n_refs = 100,
                                                     std::uint64_t seed = 99) {
    CandidateConstants out;
    std::vector<double> thetas;
    for (int i = 1; i <= 10; ++i) thetas.push_back(0.1 * i);

    auto scan = [&](Rng& rng, int count, bool fit) {
        for (int s = 0; s < count; ++s) {
            const Reference r = sample_reference(model, cs, rng);
            const double dist = ref_distance(r, r_d);
            if (dist < 1e-7) continue;
            for (double theta : thetas) {
                const Reference rh = candidate_reference(model, cs, r, r_d, theta);
                const double step = ref_distance(rh, r);
                const double decrease = offset_cost(T, r) - offset_cost(T, rh);
                if (fit) {
                    out.c1r = std::max(out.c1r, step / (theta * dist));
                    out.c2r = out.c2r == 0.0
                                  ? decrease / (theta * dist * dist)
                                  : std::min(out.c2r, decrease / (theta * dist * dist));
                } else {
                    out.max_violation_step =
                        std::max(out.max_violation_step, step - out.c1r * theta * dist);
                    out.max_violation_decrease = std::max(
                        out.max_violation_decrease, out.c2r * theta * dist * dist - decrease);
                }
                ++out.samples;
            }
        }
    };

    Rng fit_rng(seed);
    scan(fit_rng, n_refs / 2, true);
    out.c1r *= 1.1;
    out.c2r *= 0.9;
    Rng verify_rng(seed ^ 0xabcdef12345ull);
    scan(verify_rng, n_refs - n_refs / 2, false);
    return out;
}

}  // namespace mpct

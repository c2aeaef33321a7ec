#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "mpct/types.hpp"

namespace mpct {

enum class Integrator { euler, rk4 };

/**
 * @brief Discrete-time system x(t+1) = f(x(t), u(t)).
 *
 * The right-hand side is either the discrete map itself or a continuous-time
 * derivative g(x,u) integrated over one sampling interval with the selected
 * scheme. An analytic Jacobian of the rhs may be supplied; otherwise forward
 * finite differences (step 1e-6, scaled) are used.
 */
struct SystemModel {
    using Rhs = std::function<Vec(const Vec&, const Vec&)>;
    using Jac = std::function<void(const Vec&, const Vec&, Mat&, Mat&)>;

    int n = 0;  ///< state dimension
    int m = 0;  ///< input dimension
    Rhs rhs;    ///< discrete map f, or continuous derivative g
    Jac rhs_jac;  ///< optional analytic Jacobian of rhs w.r.t. (x, u)
    bool continuous = false;
    double h = 0.0;  ///< sampling time, required when continuous
    Integrator scheme = Integrator::euler;
    std::map<std::string, double> params;
    std::string name;

    void validate() const {
        if (n <= 0 || m <= 0) throw Error("SystemModel: dimensions must be positive");
        if (!rhs) throw Error("SystemModel: missing right-hand side");
        if (continuous && !(h > 0.0)) throw Error("SystemModel: sampling time must be positive");
    }
};

namespace detail {

inline void fd_jacobian(const SystemModel::Rhs& fn, const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) {
    const Vec f0 = fn(x, u);
    const auto n = x.size();
    const auto m = u.size();
    Jx.resize(f0.size(), n);
    Ju.resize(f0.size(), m);
    Vec xp = x, up = u;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double step = 1e-6 * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + step;
        Jx.col(j) = (fn(xp, u) - f0) / step;
        xp[j] = x[j];
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const double step = 1e-6 * std::max(1.0, std::abs(u[j]));
        up[j] = u[j] + step;
        Ju.col(j) = (fn(x, up) - f0) / step;
        up[j] = u[j];
    }
}

inline void rhs_jacobian(const SystemModel& model, const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) {
    if (model.rhs_jac) {
        model.rhs_jac(x, u, Jx, Ju);
    } else {
        fd_jacobian(model.rhs, x, u, Jx, Ju);
    }
}

}  // namespace detail

/// One step of the discrete map. Throws DynamicsBlowup on non-finite output.
inline Vec discretize_step(const SystemModel& model, const Vec& x, const Vec& u) {
    if (x.size() != model.n || u.size() != model.m)
        throw Error("discretize_step: dimension mismatch");
    Vec next;
    if (!model.continuous) {
        next = model.rhs(x, u);
    } else if (model.scheme == Integrator::euler) {
        next = x + model.h * model.rhs(x, u);
    } else {
        const double h = model.h;
        const Vec k1 = model.rhs(x, u);
        const Vec k2 = model.rhs(x + 0.5 * h * k1, u);
        const Vec k3 = model.rhs(x + 0.5 * h * k2, u);
        const Vec k4 = model.rhs(x + h * k3, u);
        next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!next.allFinite())
        throw DynamicsBlowup("discretize_step: non-finite state reached", x, u);
    return next;
}

/// Jacobian of the discrete map w.r.t. (x, u), chaining through the integrator.
inline void discrete_jacobian(const SystemModel& model, const Vec& x, const Vec& u, Mat& A, Mat& B) {
    if (!model.continuous) {
        detail::rhs_jacobian(model, x, u, A, B);
        return;
    }
    const double h = model.h;
    Mat Jx, Ju;
    if (model.scheme == Integrator::euler) {
        detail::rhs_jacobian(model, x, u, Jx, Ju);
        A = Mat::Identity(model.n, model.n) + h * Jx;
        B = h * Ju;
        return;
    }
    // RK4: propagate stage sensitivities.
    const Mat I = Mat::Identity(model.n, model.n);
    const Vec k1 = model.rhs(x, u);
    const Vec x2 = x + 0.5 * h * k1;
    const Vec k2 = model.rhs(x2, u);
    const Vec x3 = x + 0.5 * h * k2;
    const Vec k3 = model.rhs(x3, u);
    const Vec x4 = x + h * k3;

    Mat J1x, J1u, J2x, J2u, J3x, J3u, J4x, J4u;
    detail::rhs_jacobian(model, x, u, J1x, J1u);
    detail::rhs_jacobian(model, x2, u, J2x, J2u);
    detail::rhs_jacobian(model, x3, u, J3x, J3u);
    detail::rhs_jacobian(model, x4, u, J4x, J4u);

    const Mat dk1x = J1x;
    const Mat dk1u = J1u;
    const Mat dk2x = J2x * (I + 0.5 * h * dk1x);
    const Mat dk2u = J2u + J2x * (0.5 * h * dk1u);
    const Mat dk3x = J3x * (I + 0.5 * h * dk2x);
    const Mat dk3u = J3u + J3x * (0.5 * h * dk2u);
    const Mat dk4x = J4x * (I + h * dk3x);
    const Mat dk4u = J4u + J4x * (h * dk3u);

    A = I + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x);
    B = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
}

/**
 * @brief Pointwise constraints: box Z on (x,u) and box Zr on admissible references.
 *
 * Zr must lie strictly inside Z (positive componentwise margin) and Z must be
 * compact (all bounds finite).
 */
struct ConstraintSet {
    Box Z;   ///< stacked (x, u), dimension n+m
    Box Zr;  ///< stacked (x_r, u_r), dimension n+m
    int n = 0, m = 0;

    ConstraintSet() = default;
    ConstraintSet(int n_, int m_, Box Z_, Box Zr_)
        : Z(std::move(Z_)), Zr(std::move(Zr_)), n(n_), m(m_) {
        if (Z.dim() != n + m || Zr.dim() != n + m)
            throw Error("ConstraintSet: box dimension must equal n+m");
        if (!Z.finite()) throw Error("ConstraintSet: Z must be compact (finite bounds)");
        for (Eigen::Index i = 0; i < Z.dim(); ++i)
            if (!(Zr.lo[i] > Z.lo[i] && Zr.hi[i] < Z.hi[i]))
                throw Error("ConstraintSet: Zr must lie strictly inside Z");
    }

    Box state_box() const { return Z.segment(0, n); }
    Box input_box() const { return Z.segment(n, m); }
    Box ref_state_box() const { return Zr.segment(0, n); }
    Box ref_input_box() const { return Zr.segment(n, m); }
};

/// True iff (x, u) lies in Z, boundary inclusive.
inline bool is_admissible(const ConstraintSet& cs, const Vec& x, const Vec& u) {
    if (x.size() != cs.n || u.size() != cs.m) throw Error("is_admissible: dimension mismatch");
    Vec z(cs.n + cs.m);
    z << x, u;
    return cs.Z.contains(z);
}

/// Equilibrium pair (x_r, u_r) with f(x_r, u_r) = x_r.
struct Reference {
    Vec x_r, u_r;

    Reference() = default;
    Reference(Vec x, Vec u) : x_r(std::move(x)), u_r(std::move(u)) {}

    Vec stacked() const {
        Vec z(x_r.size() + u_r.size());
        z << x_r, u_r;
        return z;
    }
};

/// Euclidean distance over the stacked pair, |r|_{r2}.
inline double ref_distance(const Reference& a, const Reference& b) {
    return std::sqrt((a.x_r - b.x_r).squaredNorm() + (a.u_r - b.u_r).squaredNorm());
}

inline double equilibrium_residual(const SystemModel& model, const Reference& r) {
    return (discretize_step(model, r.x_r, r.u_r) - r.x_r).norm();
}

inline constexpr double kRefTol = 1e-9;

/// Validates the Reference invariants (equilibrium residual and membership in Zr).
inline Reference make_reference(const SystemModel& model, const ConstraintSet& cs, Vec x_r,
                                Vec u_r, double tol_eq = kRefTol) {
    Reference r{std::move(x_r), std::move(u_r)};
    const double res = equilibrium_residual(model, r);
    if (!(res <= tol_eq))
        throw Error("make_reference: equilibrium residual " + std::to_string(res) +
                    " exceeds tolerance");
    Vec z = r.stacked();
    if (!cs.Zr.contains(z, 1e-12)) throw Error("make_reference: reference outside Zr");
    return r;
}

/**
 * @brief Least-norm Gauss-Newton projection of (x, u) onto the equilibrium
 * manifold {f(x,u) = x}.
 *
 * Returns std::nullopt if Newton does not reach the residual tolerance within
 * max_iter steps.
 */
inline std::optional<Reference> project_to_manifold(const SystemModel& model, Vec x, Vec u,
                                                    double tol = 1e-12, int max_iter = 50) {
    const int n = model.n, m = model.m;
    Mat A(n, n), B(n, m);
    for (int it = 0; it < max_iter; ++it) {
        const Vec c = discretize_step(model, x, u) - x;
        if (c.norm() <= tol) return Reference{x, u};
        discrete_jacobian(model, x, u, A, B);
        Mat J(n, n + m);
        J << A - Mat::Identity(n, n), B;
        // Least-norm step: d = -J^T (J J^T)^{-1} c.
        const Mat JJt = J * J.transpose();
        const Vec y = JJt.ldlt().solve(c);
        const Vec d = -J.transpose() * y;
        if (!d.allFinite()) return std::nullopt;
        x += d.head(n);
        u += d.tail(m);
    }
    return std::nullopt;
}

/// Draws a random reference by projecting a uniform sample from Zr onto the
/// manifold; rejects points that leave Zr. Throws after max_tries failures.
inline Reference sample_reference(const SystemModel& model, const ConstraintSet& cs, Rng& rng,
                                  int max_tries = 200) {
    for (int t = 0; t < max_tries; ++t) {
        const Vec p = rng.vector_in(cs.Zr);
        auto r = project_to_manifold(model, p.head(cs.n), p.tail(cs.m));
        if (!r) continue;
        Vec z = r->stacked();
        if (cs.Zr.contains(z)) return *r;
    }
    throw Error("sample_reference: no admissible equilibrium found");
}

}  // namespace mpct

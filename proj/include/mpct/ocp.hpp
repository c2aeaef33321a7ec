#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "mpct/costs.hpp"
#include "mpct/model.hpp"
#include "mpct/reference.hpp"
#include "mpct/staged_qp.hpp"
#include "mpct/terminal.hpp"

namespace mpct {

enum class OcpMode { tracking, standard };

/**
 * @brief Finite-horizon optimal control problem over N shooting intervals.
 *
 * Tracking mode carries the artificial reference (x_r, u_r) as decision
 * variables with the scaled offset cost; standard mode tracks a fixed
 * certified reference.
 */
struct OcpSpec {
    SystemModel model;
    ConstraintSet cs;
    StageCost sc;
    OffsetCost offset;                             // tracking only
    ScalingFn scaling;                             // tracking only
    std::shared_ptr<TerminalIngredients> terminal; // shared design cache
    int N = 0;
    OcpMode mode = OcpMode::tracking;
    Reference r_fixed;                             // standard only
};

enum class SolveStatus { optimal, infeasible, max_iter };

struct OcpSolution {
    std::vector<Vec> x_seq;  ///< N+1 states
    std::vector<Vec> u_seq;  ///< N inputs
    Reference r_opt;         ///< artificial reference (tracking) or r_fixed
    double objective = kInf;
    SolveStatus status = SolveStatus::max_iter;
    double kkt_residual = kInf;
    int sqp_iters = 0;
    double max_defect = kInf;
    double max_box_violation = kInf;
    double eq_residual = kInf;
    double terminal_residual = kInf;
    FixCodes active;  ///< QP working set, reusable as a warm start
    bool ineq_active = false;
    bool multistart_flag = false;  ///< local solutions disagreed by > 1e-4
    double multistart_spread = 0.0;
};

struct OcpWarmStart {
    std::vector<Vec> x_seq, u_seq;
    Reference r;
    FixCodes active;
    bool ineq_active = false;
};

struct SolveOptions {
    int max_sqp_iters = 100;
    double kkt_tol = 1e-8;
    int multistart = 0;  ///< extra random reference starts (tracking only)
    std::uint64_t seed = 0;
};

namespace detail {

struct Transcription {
    StagedQpData data;
    // Residuals of the nonlinear constraints at the expansion point.
    double viol_inf = 0.0;
    double viol_l1 = 0.0;
    double max_defect = 0.0;
    double eq_residual = 0.0;
    double terminal_residual = 0.0;
    double ineq_violation = 0.0;
    double objective = 0.0;
    QuadraticTerminal qt;  // frozen terminal design (quadratic mode)
    bool has_qt = false;
};

inline const Reference& active_reference(const OcpSpec& spec, const Reference& r_var) {
    return spec.mode == OcpMode::tracking ? r_var : spec.r_fixed;
}

/// Objective with the terminal design frozen at the given reference.
inline double ocp_objective_frozen(const OcpSpec& spec, const std::vector<Vec>& xs,
                                   const std::vector<Vec>& us, const Reference& r,
                                   const QuadraticTerminal* qt) {
    double j = 0.0;
    for (int k = 0; k < spec.N; ++k) j += stage_cost(spec.sc, xs[k], us[k], r);
    if (qt) {
        const Vec d = xs[spec.N] - r.x_r;
        j += d.dot(qt->P * d);
    }
    if (spec.mode == OcpMode::tracking)
        j += spec.scaling(spec.N) * offset_cost(spec.offset, r);
    return j;
}

/// l1 norm of all nonlinear constraint residuals at (xs, us, r).
inline double constraint_l1(const OcpSpec& spec, const Vec& x0, const std::vector<Vec>& xs,
                            const std::vector<Vec>& us, const Reference& r,
                            const QuadraticTerminal* qt) {
    double v = (x0 - xs[0]).lpNorm<1>();
    for (int k = 0; k < spec.N; ++k)
        v += (xs[k + 1] - discretize_step(spec.model, xs[k], us[k])).lpNorm<1>();
    if (spec.mode == OcpMode::tracking)
        v += (discretize_step(spec.model, r.x_r, r.u_r) - r.x_r).lpNorm<1>();
    if (spec.terminal->mode() == TerminalMode::equality) {
        v += (xs[spec.N] - r.x_r).lpNorm<1>();
    } else if (qt) {
        const Vec d = xs[spec.N] - r.x_r;
        v += std::max(0.0, d.dot(qt->P * d) - qt->alpha);
    }
    return v;
}

inline Transcription transcribe(const OcpSpec& spec, const Vec& x0, const std::vector<Vec>& xs,
                                const std::vector<Vec>& us, const Reference& r_var,
                                const QuadraticTerminal* frozen = nullptr) {
    const int N = spec.N, n = spec.model.n, m = spec.model.m;
    const bool tracking = spec.mode == OcpMode::tracking;
    const bool quad = spec.terminal->mode() == TerminalMode::quadratic;
    const Reference& r = active_reference(spec, r_var);

    Transcription t;
    StagedQpData& d = t.data;
    d.N = N;
    d.n = n;
    d.m = m;
    d.nb = tracking ? n + m : 0;

    if (quad) {
        t.qt = frozen ? *frozen : spec.terminal->design(r);
        t.has_qt = true;
    }
    const Mat Q2 = 2.0 * spec.sc.Q;
    const Mat R2 = 2.0 * spec.sc.R;

    d.Hx.resize(N + 1);
    d.Hu.resize(N);
    if (d.nb) {
        d.Cxb.assign(N + 1, Mat::Zero(n, d.nb));
        d.Cub.assign(N, Mat::Zero(m, d.nb));
        d.Hb = Mat::Zero(d.nb, d.nb);
    }
    d.g = Vec::Zero(d.nvar());

    Vec gb = Vec::Zero(d.nb);
    for (int k = 0; k < N; ++k) {
        d.Hx[k] = Q2;
        d.Hu[k] = R2;
        d.g.segment(d.ix(k), n) = Q2 * (xs[k] - r.x_r);
        d.g.segment(d.iu(k), m) = R2 * (us[k] - r.u_r);
        if (d.nb) {
            d.Cxb[k].leftCols(n) = -Q2;
            d.Cub[k].rightCols(m) = -R2;
            gb.head(n) -= Q2 * (xs[k] - r.x_r);
            gb.tail(m) -= R2 * (us[k] - r.u_r);
        }
    }
    d.Hx[N] = Mat::Zero(n, n);
    if (quad) {
        const Mat P2 = 2.0 * t.qt.P;
        d.Hx[N] = P2;
        d.g.segment(d.ix(N), n) = P2 * (xs[N] - r.x_r);
        if (d.nb) {
            d.Cxb[N].leftCols(n) = -P2;
            gb.head(n) -= P2 * (xs[N] - r.x_r);
        }
    }
    if (d.nb) {
        const double lam = spec.scaling(N);
        d.Hb.topLeftCorner(n, n) = N * Q2 + lam * 2.0 * spec.offset.S_x;
        d.Hb.bottomRightCorner(m, m) = N * R2 + lam * 2.0 * spec.offset.S_u;
        if (quad) d.Hb.topLeftCorner(n, n) += 2.0 * t.qt.P;
        gb.head(n) += lam * 2.0 * spec.offset.S_x * (r.x_r - spec.offset.x_e);
        gb.tail(m) += lam * 2.0 * spec.offset.S_u * (r.u_r - spec.offset.u_e);
        d.g.tail(d.nb) = gb;
    }

    // Shooting constraints.
    d.init_rhs = x0 - xs[0];
    d.Ak.resize(N);
    d.Bk.resize(N);
    d.dk.resize(N);
    for (int k = 0; k < N; ++k) {
        discrete_jacobian(spec.model, xs[k], us[k], d.Ak[k], d.Bk[k]);
        const Vec f = discretize_step(spec.model, xs[k], us[k]);
        d.dk[k] = f - xs[k + 1];
        t.max_defect = std::max(t.max_defect, d.dk[k].lpNorm<Eigen::Infinity>());
    }

    // Border rows: equilibrium condition (tracking) and terminal equality.
    const bool term_eq = spec.terminal->mode() == TerminalMode::equality;
    int nr = (tracking ? n : 0) + (term_eq ? n : 0);
    d.Tn = Mat::Zero(nr, n);
    d.Tb = Mat::Zero(nr, d.nb);
    d.tr = Vec::Zero(nr);
    int row = 0;
    if (tracking) {
        Mat Fx, Fu;
        discrete_jacobian(spec.model, r.x_r, r.u_r, Fx, Fu);
        d.Tb.block(row, 0, n, n) = Fx - Mat::Identity(n, n);
        d.Tb.block(row, n, n, m) = Fu;
        const Vec ceq = discretize_step(spec.model, r.x_r, r.u_r) - r.x_r;
        d.tr.segment(row, n) = -ceq;
        t.eq_residual = ceq.lpNorm<Eigen::Infinity>();
        row += n;
    }
    if (term_eq) {
        d.Tn.block(row, 0, n, n) = Mat::Identity(n, n);
        Vec cterm;
        if (tracking) {
            d.Tb.block(row, 0, n, n) = -Mat::Identity(n, n);
            cterm = xs[N] - r.x_r;
        } else {
            cterm = xs[N] - r.x_r;  // r = r_fixed here
        }
        d.tr.segment(row, n) = -cterm;
        t.terminal_residual = cterm.lpNorm<Eigen::Infinity>();
    } else {
        const Vec dN = xs[N] - r.x_r;
        const double v = dN.dot(t.qt.P * dN);
        t.ineq_violation = std::max(0.0, v - t.qt.alpha);
        d.has_ineq = true;
        Vec a = Vec::Zero(d.nvar());
        const Vec grad = 2.0 * t.qt.P * dN;
        a.segment(d.ix(N), n) = grad;
        if (d.nb) a.segment(d.ib(), n) = -grad;
        double b = t.qt.alpha - v;
        const double scale = std::max(1.0, a.lpNorm<Eigen::Infinity>());
        d.a = a / scale;
        d.b_ineq = b / scale;
        t.terminal_residual = t.ineq_violation;
    }

    // Bounds. The stage boxes come from Z, the border box from Zr; x(0) is
    // pinned by the initial-state rows, its box is widened to include x0 so
    // states sitting on the boundary do not trip spurious infeasibility.
    d.lo.resize(d.nvar());
    d.hi.resize(d.nvar());
    const Box xb = spec.cs.state_box();
    const Box ub = spec.cs.input_box();
    for (int k = 0; k <= N; ++k) {
        d.lo.segment(d.ix(k), n) = xb.lo - xs[k];
        d.hi.segment(d.ix(k), n) = xb.hi - xs[k];
        if (k < N) {
            d.lo.segment(d.iu(k), m) = ub.lo - us[k];
            d.hi.segment(d.iu(k), m) = ub.hi - us[k];
        }
    }
    for (int i = 0; i < n; ++i) {
        d.lo[d.ix(0) + i] = std::min(d.lo[d.ix(0) + i], x0[i] - xs[0][i]);
        d.hi[d.ix(0) + i] = std::max(d.hi[d.ix(0) + i], x0[i] - xs[0][i]);
    }
    if (d.nb) {
        d.lo.tail(d.nb) = spec.cs.Zr.lo - r.stacked();
        d.hi.tail(d.nb) = spec.cs.Zr.hi - r.stacked();
    }

    t.viol_inf = std::max({(x0 - xs[0]).lpNorm<Eigen::Infinity>(), t.max_defect, t.eq_residual,
                           t.terminal_residual});
    t.viol_l1 = constraint_l1(spec, x0, xs, us, r, t.has_qt ? &t.qt : nullptr);
    t.objective = ocp_objective_frozen(spec, xs, us, r, t.has_qt ? &t.qt : nullptr);
    return t;
}

// Box-projected stationarity over the stage and border bounds. d.lo/d.hi
// hold the step room (box - z), so a coordinate sits at a bound iff the room
// on that side is ~0.
inline double projected_stationarity(const StagedQpData& d, const Vec& s) {
    double out = 0.0;
    for (int i = 0; i < d.nvar(); ++i) {
        if (d.lo[i] >= -1e-9 && s[i] >= 0) continue;
        if (d.hi[i] <= 1e-9 && s[i] <= 0) continue;
        out = std::max(out, std::abs(s[i]));
    }
    return out;
}

struct RestorationResult {
    bool feasible = false;
    std::vector<Vec> xs, us;
    double final_violation = kInf;
};

/// Single-shooting Gauss-Newton feasibility restoration for standard-mode
/// problems: minimises the terminal and state-box residuals over the input
/// box.
inline RestorationResult restore_standard(const OcpSpec& spec, const Vec& x0,
                                          std::vector<Vec> us) {
    const int N = spec.N, n = spec.model.n, m = spec.model.m;
    const Box ub = spec.cs.input_box();
    const Box xb = spec.cs.state_box();
    for (auto& u : us) u = ub.clamp(u);
    const bool quad = spec.terminal->mode() == TerminalMode::quadratic;
    QuadraticTerminal qt;
    Mat Ps;  // sqrt factor for the ellipsoid residual
    if (quad) {
        qt = spec.terminal->design(spec.r_fixed);
        Eigen::SelfAdjointEigenSolver<Mat> es(qt.P);
        Ps = es.operatorSqrt();
    }

    auto rollout = [&](const std::vector<Vec>& u, std::vector<Vec>& xs) {
        xs.assign(N + 1, Vec());
        xs[0] = x0;
        for (int k = 0; k < N; ++k) xs[k + 1] = discretize_step(spec.model, xs[k], u[k]);
    };

    // Residual vector: terminal part plus active state-box violations.
    auto residuals = [&](const std::vector<Vec>& xs, std::vector<std::pair<int, int>>* box_rows,
                         Vec* term) -> double {
        double viol = 0.0;
        if (quad) {
            const Vec d = xs[N] - spec.r_fixed.x_r;
            const double lvl = std::sqrt(std::max(0.0, d.dot(qt.P * d)));
            const double excess = lvl - std::sqrt(qt.alpha);
            if (term) {
                term->resize(1);
                (*term)[0] = std::max(0.0, excess);
            }
            viol = std::max(viol, std::max(0.0, excess));
        } else {
            const Vec d = xs[N] - spec.r_fixed.x_r;
            if (term) *term = d;
            viol = std::max(viol, d.lpNorm<Eigen::Infinity>());
        }
        for (int k = 1; k <= N; ++k)
            for (int i = 0; i < n; ++i) {
                const double lo_v = xb.lo[i] - xs[k][i];
                const double hi_v = xs[k][i] - xb.hi[i];
                if (lo_v > 1e-12 || hi_v > 1e-12) {
                    if (box_rows) box_rows->push_back({k, lo_v > hi_v ? -(i + 1) : (i + 1)});
                    viol = std::max(viol, std::max(lo_v, hi_v));
                }
            }
        return viol;
    };

    std::vector<Vec> xs;
    rollout(us, xs);
    double lm = 1e-8;
    RestorationResult out;
    for (int it = 0; it < 300; ++it) {
        std::vector<std::pair<int, int>> box_rows;
        Vec term;
        const double viol = residuals(xs, &box_rows, &term);
        out.final_violation = viol;
        if (viol <= 1e-9) {
            out.feasible = true;
            out.xs = xs;
            out.us = us;
            return out;
        }
        // Sensitivities of x(k) w.r.t. the stacked inputs.
        std::vector<Mat> S(N + 1);
        S[0] = Mat::Zero(n, N * m);
        Mat A(n, n), B(n, m);
        for (int k = 0; k < N; ++k) {
            discrete_jacobian(spec.model, xs[k], us[k], A, B);
            S[k + 1] = A * S[k];
            S[k + 1].middleCols(k * m, m) += B;
        }
        const int nrows = static_cast<int>(term.size() + box_rows.size());
        Mat J(nrows, N * m);
        Vec R(nrows);
        int row = 0;
        if (quad) {
            const Vec d = xs[N] - spec.r_fixed.x_r;
            const Vec Ld = Ps * d;
            const double lvl = std::max(Ld.norm(), 1e-12);
            J.row(row) = (Ps * Ld / lvl).transpose() * S[N];
            R[row] = term[0];
            ++row;
        } else {
            J.middleRows(row, n) = S[N];
            R.segment(row, n) = term;
            row += n;
        }
        for (auto [k, code] : box_rows) {
            const int i = std::abs(code) - 1;
            const double sgn = code < 0 ? -1.0 : 1.0;  // lower: lo - x, upper: x - hi
            J.row(row) = sgn * S[k].row(i);
            R[row] = sgn < 0 ? xb.lo[i] - xs[k][i] : xs[k][i] - xb.hi[i];
            ++row;
        }

        const Mat JtJ = J.transpose() * J;
        const Vec gr = J.transpose() * R;
        if (gr.lpNorm<Eigen::Infinity>() <= 1e-12) break;
        bool stepped = false;
        for (int tries = 0; tries < 30; ++tries) {
            const Vec step =
                -(JtJ + lm * Mat::Identity(N * m, N * m)).ldlt().solve(gr);
            std::vector<Vec> ut = us;
            for (int k = 0; k < N; ++k) ut[k] = ub.clamp(us[k] + step.segment(k * m, m));
            std::vector<Vec> xt;
            rollout(ut, xt);
            const double vt = residuals(xt, nullptr, nullptr);
            if (vt < viol - 1e-14) {
                us = ut;
                xs = xt;
                lm = std::max(lm * 0.5, 1e-10);
                stepped = true;
                break;
            }
            lm *= 8.0;
            if (lm > 1e14) break;
        }
        if (!stepped) break;
    }
    out.xs = xs;
    out.us = us;
    return out;
}

}  // namespace detail

/// Evaluates the OCP objective at a feasible candidate (terminal design taken
/// at the candidate's reference).
inline double ocp_objective(const OcpSpec& spec, const std::vector<Vec>& xs,
                            const std::vector<Vec>& us, const Reference& r) {
    if (spec.terminal->mode() == TerminalMode::quadratic) {
        const QuadraticTerminal qt = spec.terminal->design(detail::active_reference(spec, r));
        return detail::ocp_objective_frozen(spec, xs, us, detail::active_reference(spec, r), &qt);
    }
    return detail::ocp_objective_frozen(spec, xs, us, detail::active_reference(spec, r), nullptr);
}

namespace detail {

inline OcpSolution solve_single(const OcpSpec& spec, const Vec& x0, std::vector<Vec> xs,
                                std::vector<Vec> us, Reference r, const FixCodes* warm_fix,
                                bool warm_ineq, const SolveOptions& opt,
                                const QuadraticTerminal* frozen_qt = nullptr) {
    const int N = spec.N;
    const bool tracking = spec.mode == OcpMode::tracking;

    OcpSolution sol;
    sol.status = SolveStatus::max_iter;

    Vec nu;  // equality multipliers from the previous QP
    double mu_ineq = 0.0;
    FixCodes fix;
    bool ineq_active = warm_ineq;
    if (warm_fix) fix = *warm_fix;
    double rho = 1.0;
    bool restored_once = false;

    for (int it = 0; it <= opt.max_sqp_iters; ++it) {
        Transcription t = transcribe(spec, x0, xs, us, r, frozen_qt);
        StagedKkt kkt(t.data);
        const StagedQpData& d = kkt.data();

        // KKT certificate at the current point with the latest multipliers.
        double stat;
        {
            Vec s = d.g;
            if (nu.size() == kkt.neq()) s += kkt.mul_ET(nu);
            if (d.has_ineq && mu_ineq != 0.0) s += mu_ineq * d.a;
            stat = projected_stationarity(d, s);
        }
        const double kkt_res = std::max(stat, t.viol_inf);
        sol.kkt_residual = kkt_res;
        if (kkt_res <= opt.kkt_tol) {
            sol.status = SolveStatus::optimal;
            break;
        }
        if (it == opt.max_sqp_iters) break;

        QpResult qp = solve_qp(kkt, fix.empty() ? nullptr : &fix, ineq_active);
        if (qp.status != QpStatus::optimal) {
            if (spec.mode == OcpMode::standard && !restored_once) {
                restored_once = true;
                RestorationResult rr = restore_standard(spec, x0, us);
                if (rr.feasible) {
                    xs = rr.xs;
                    us = rr.us;
                    nu.resize(0);
                    mu_ineq = 0.0;
                    fix.clear();
                    ineq_active = false;
                    continue;
                }
            }
            sol.status = SolveStatus::infeasible;
            break;
        }
        ++sol.sqp_iters;
        nu = qp.eq_mult;
        mu_ineq = qp.ineq_mult;
        fix = qp.fix;
        ineq_active = qp.ineq_active;

        // l1 merit line search.
        const double mult_inf =
            std::max(nu.lpNorm<Eigen::Infinity>(), std::abs(mu_ineq));
        rho = std::max(rho, 1.5 * mult_inf + 1.0);
        const double merit0 = t.objective + rho * t.viol_l1;
        const double slope = t.data.g.dot(qp.z) - rho * t.viol_l1;

        double alpha = 1.0;
        bool accepted = false;
        std::vector<Vec> xt(N + 1), ut(N);
        Reference rt = r;
        while (alpha >= 1e-12) {
            for (int k = 0; k <= N; ++k) xt[k] = xs[k] + alpha * qp.z.segment(d.ix(k), d.n);
            for (int k = 0; k < N; ++k) ut[k] = us[k] + alpha * qp.z.segment(d.iu(k), d.m);
            if (tracking) {
                const Vec rb = r.stacked() + alpha * qp.z.tail(d.nb);
                rt = Reference{rb.head(d.n), rb.tail(d.m)};
            }
            const Reference& ra = active_reference(spec, rt);
            const double jt = ocp_objective_frozen(spec, xt, ut, ra, t.has_qt ? &t.qt : nullptr);
            const double vt = constraint_l1(spec, x0, xt, ut, ra, t.has_qt ? &t.qt : nullptr);
            if (jt + rho * vt <= merit0 + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (spec.mode == OcpMode::standard && !restored_once && t.viol_inf > opt.kkt_tol) {
                restored_once = true;
                RestorationResult rr = restore_standard(spec, x0, us);
                if (rr.feasible) {
                    xs = rr.xs;
                    us = rr.us;
                    nu.resize(0);
                    mu_ineq = 0.0;
                    fix.clear();
                    ineq_active = false;
                    continue;
                }
                sol.status = SolveStatus::infeasible;
            }
            break;
        }
        xs = xt;
        us = ut;
        r = rt;
    }

    // Final bookkeeping at the returned iterate.
    Transcription t = transcribe(spec, x0, xs, us, r, frozen_qt);
    sol.x_seq = xs;
    sol.u_seq = us;
    sol.r_opt = tracking ? r : spec.r_fixed;
    sol.objective = t.objective;
    sol.max_defect = std::max(t.max_defect, (x0 - xs[0]).lpNorm<Eigen::Infinity>());
    sol.eq_residual = t.eq_residual;
    sol.terminal_residual = t.terminal_residual;
    double box = 0.0;
    for (int k = 0; k <= N; ++k) box = std::max(box, spec.cs.state_box().violation(xs[k]));
    for (int k = 0; k < N; ++k) box = std::max(box, spec.cs.input_box().violation(us[k]));
    if (tracking) box = std::max(box, spec.cs.Zr.violation(r.stacked()));
    sol.max_box_violation = std::max(0.0, box);
    sol.active = fix;
    sol.ineq_active = ineq_active;
    if (sol.status == SolveStatus::optimal &&
        (sol.max_defect > 1e-8 || sol.max_box_violation > 1e-8)) {
        sol.status = SolveStatus::max_iter;
    }
    return sol;
}

/// Nearest admissible equilibrium to a target point: a constrained manifold
/// projection, so the start never sits off-manifold on the Zr boundary.
inline Reference projected_reference_start(const OcpSpec& spec, const Vec& target_x,
                                           const Vec& target_u) {
    const OffsetCost proximity(Mat::Identity(spec.model.n, spec.model.n),
                               Mat::Identity(spec.model.m, spec.model.m),
                               spec.cs.ref_state_box().clamp(target_x),
                               spec.cs.ref_input_box().clamp(target_u));
    return best_reachable_reference(spec.model, spec.cs, proximity).r;
}

inline void default_start(const OcpSpec& spec, const Vec& x0, std::vector<Vec>& xs,
                          std::vector<Vec>& us, Reference& r) {
    const int N = spec.N, n = spec.model.n, m = spec.model.m;
    const Box xb = spec.cs.state_box();
    const Box ub = spec.cs.input_box();
    if (spec.mode == OcpMode::tracking) {
        try {
            r = projected_reference_start(spec, x0, spec.cs.ref_input_box().center());
        } catch (const Error&) {
            const Vec c = spec.cs.Zr.center();
            r = Reference{c.head(n), c.tail(m)};
        }
        us.assign(N, ub.clamp(r.u_r));
    } else {
        r = spec.r_fixed;
        // LQR-style rollout towards the fixed reference.
        Mat A, B;
        discrete_jacobian(spec.model, r.x_r, r.u_r, A, B);
        Mat K;
        try {
            const Mat P = solve_dare(A, B, 2.0 * spec.sc.Q, 2.0 * spec.sc.R);
            K = dlqr_gain(A, B, 2.0 * spec.sc.R, P);
        } catch (const Error&) {
            K = Mat::Zero(m, n);
        }
        us.assign(N, r.u_r);
        Vec x = x0;
        for (int k = 0; k < N; ++k) {
            us[k] = ub.clamp(r.u_r + K * (x - r.x_r));
            x = xb.clamp(discretize_step(spec.model, x, us[k]));
        }
    }
    xs.assign(N + 1, x0);
    for (int k = 0; k < N; ++k)
        xs[k + 1] = xb.clamp(discretize_step(spec.model, xs[k], us[k]));
}

}  // namespace detail

/**
 * @brief Solves the OCP by Gauss-Newton SQP with an active-set QP kernel.
 *
 * The Hessian is exact for the quadratic objective, so LQ problems finish in
 * one SQP iteration. Standard-mode infeasibility is decided through a
 * single-shooting restoration phase.
 */
inline OcpSolution solve(const OcpSpec& spec, const Vec& x0,
                         const OcpWarmStart* warm = nullptr, const SolveOptions& opt = {}) {
    if (x0.size() != spec.model.n) throw Error("solve: x0 dimension mismatch");
    if (spec.N < 0) throw Error("solve: negative horizon");
    if (!spec.terminal) throw Error("solve: missing terminal ingredients");

    // Tracking with quadratic ingredients: the design is frozen per solve and
    // re-anchored at the solution until the anchor settles on the 1e-6 cache
    // grid. Re-anchored solutions are accepted only when they do not increase
    // the objective, which keeps the closed-loop decrease properties intact.
    auto run_from = [&](std::vector<Vec> xs, std::vector<Vec> us, Reference r,
                        const FixCodes* wf, bool wineq) -> OcpSolution {
        const bool anchored = spec.mode == OcpMode::tracking &&
                              spec.terminal->mode() == TerminalMode::quadratic;
        if (!anchored) return detail::solve_single(spec, x0, xs, us, r, wf, wineq, opt);
        Reference anchor = r;
        QuadraticTerminal qt = spec.terminal->design(anchor);
        OcpSolution sol =
            detail::solve_single(spec, x0, xs, us, r, wf, wineq, opt, &qt);
        for (int outer = 0; outer < 8 && sol.status == SolveStatus::optimal; ++outer) {
            const double moved = ref_distance(sol.r_opt, anchor);
            if (moved <= 1e-6) break;
            anchor = sol.r_opt;
            qt = spec.terminal->design(anchor);
            OcpSolution next = detail::solve_single(spec, x0, sol.x_seq, sol.u_seq, sol.r_opt,
                                                    &sol.active, sol.ineq_active, opt, &qt);
            if (next.status != SolveStatus::optimal || next.objective > sol.objective) break;
            sol = next;
        }
        return sol;
    };

    std::vector<Vec> xs, us;
    Reference r;
    const FixCodes* wf = nullptr;
    bool wineq = false;
    if (warm) {
        xs = warm->x_seq;
        us = warm->u_seq;
        r = spec.mode == OcpMode::tracking ? warm->r : spec.r_fixed;
        if (!warm->active.empty()) wf = &warm->active;
        wineq = warm->ineq_active;
    } else {
        detail::default_start(spec, x0, xs, us, r);
    }
    OcpSolution best = run_from(xs, us, r, wf, wineq);

    // Cold tracking solves retry from alternative admissible references; the
    // linearisation at a poor start can be infeasible even when the problem
    // is not.
    if (spec.mode == OcpMode::tracking && best.status != SolveStatus::optimal && !warm) {
        std::vector<std::pair<Vec, Vec>> targets;
        targets.emplace_back(spec.offset.x_e, spec.offset.u_e);
        targets.emplace_back(spec.cs.ref_state_box().center(), spec.cs.ref_input_box().center());
        for (const auto& [tx, tu] : targets) {
            Reference r2;
            try {
                r2 = detail::projected_reference_start(spec, tx, tu);
            } catch (const Error&) {
                continue;
            }
            std::vector<Vec> xs2, us2;
            us2.assign(spec.N, spec.cs.input_box().clamp(r2.u_r));
            xs2.assign(spec.N + 1, x0);
            for (int k = 0; k < spec.N; ++k)
                xs2[k + 1] =
                    spec.cs.state_box().clamp(discretize_step(spec.model, xs2[k], us2[k]));
            OcpSolution retry = run_from(xs2, us2, r2, nullptr, false);
            if (retry.status == SolveStatus::optimal) {
                best = retry;
                break;
            }
        }
    }

    if (spec.mode == OcpMode::tracking && opt.multistart > 0) {
        Rng rng(opt.seed + 1315423911ull);
        double lo = best.objective, hi = best.objective;
        for (int s = 0; s < opt.multistart; ++s) {
            Reference r0;
            try {
                r0 = sample_reference(spec.model, spec.cs, rng);
            } catch (const Error&) {
                continue;
            }
            std::vector<Vec> xs2, us2;
            us2.assign(spec.N, spec.cs.input_box().clamp(r0.u_r));
            xs2.assign(spec.N + 1, x0);
            for (int k = 0; k < spec.N; ++k)
                xs2[k + 1] =
                    spec.cs.state_box().clamp(discretize_step(spec.model, xs2[k], us2[k]));
            OcpSolution cand = run_from(xs2, us2, r0, nullptr, false);
            if (cand.status != SolveStatus::optimal) continue;
            lo = std::min(lo, cand.objective);
            hi = std::max(hi, cand.objective);
            if (cand.objective < best.objective || best.status != SolveStatus::optimal)
                best = cand;
        }
        best.multistart_spread = hi - lo;
        best.multistart_flag = best.multistart_spread > 1e-4;
    }
    return best;
}

/// Optimal values of the tracking and standard problems at the same state.
inline std::pair<double, double> value_pair(const OcpSpec& tracking_spec,
                                            const OcpSpec& standard_spec, const Vec& x0) {
    const OcpSolution a = solve(tracking_spec, x0);
    if (a.status != SolveStatus::optimal) throw Error("value_pair: tracking solve failed");
    const OcpSolution b = solve(standard_spec, x0);
    if (b.status != SolveStatus::optimal) throw Error("value_pair: standard solve failed");
    return {a.objective, b.objective};
}

}  // namespace mpct

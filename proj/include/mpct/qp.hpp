#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mpct/types.hpp"

namespace mpct {

// Convex QP with equality rows, variable bounds and at most one general
// inequality row:
//
//   min 1/2 z'Hz + g'z   s.t.  E z = e,  lo <= z <= hi,  a'z <= b.
//
// Solved by a dual active-set method (Goldfarb-Idnani stepping) over an
// abstract KKT backend. The backend owns H and E and factors the KKT system
// for a given working set; bound fixes are realised as identity rows so the
// sparsity structure never changes. Multipliers of fixed bounds are recovered
// from the stationarity residual.

enum class QpStatus { optimal, infeasible, max_iter, singular };

/// Per-variable fix code: 0 free, 1 at lower bound, 2 at upper bound.
using FixCodes = std::vector<std::int8_t>;

struct QpResult {
    QpStatus status = QpStatus::max_iter;
    Vec z;        ///< primal solution
    Vec eq_mult;  ///< multipliers of the equality rows
    double ineq_mult = 0.0;
    FixCodes fix;  ///< final working set over variable bounds
    bool ineq_active = false;
    int iterations = 0;
};

class QpBackend {
public:
    virtual ~QpBackend() = default;

    virtual int nvar() const = 0;
    virtual int neq() const = 0;
    virtual bool has_ineq() const = 0;

    virtual const Vec& gradient() const = 0;
    virtual const Vec& eq_rhs() const = 0;
    virtual const Vec& lower() const = 0;
    virtual const Vec& upper() const = 0;
    virtual const Vec& ineq_row() const = 0;
    virtual double ineq_rhs() const = 0;

    virtual Vec mul_H(const Vec& z) const = 0;
    virtual Vec mul_E(const Vec& z) const = 0;   // length neq()
    virtual Vec mul_ET(const Vec& nu) const = 0; // length nvar()

    /// Factors the KKT system for the given working set. False on singularity.
    virtual bool factor(const FixCodes& fix, bool ineq_active) = 0;

    /// Solves [[H, Ea'], [Ea, 0]] [z; y] = [rs; re] with fixed variables
    /// pinned to pin[i]; Ea stacks the equality rows plus the inequality row
    /// when active. re and y have length neq()+1 when has_ineq() (last entry
    /// ignored while the row is inactive). Fixed-column contributions must
    /// already have been moved into rs/re by the caller.
    virtual bool solve(const Vec& rs, const Vec& re, const Vec& pin, Vec& z, Vec& y) = 0;
};

namespace detail {

// Stationarity vector H z + g + E' nu + mu_a * a.
inline Vec qp_stationarity(const QpBackend& qp, const Vec& z, const Vec& nu, double mu_a) {
    Vec s = qp.mul_H(z) + qp.gradient() + qp.mul_ET(nu);
    if (qp.has_ineq() && mu_a != 0.0) s += mu_a * qp.ineq_row();
    return s;
}

}  // namespace detail

/**
 * @brief Dual active-set QP solve. Requires H positive definite on the null
 * space of the equality rows for every working set encountered.
 *
 * Constraint selection is deterministic: most violated first, lowest index on
 * ties.
 */
inline QpResult solve_qp(QpBackend& qp, const FixCodes* warm = nullptr,
                         bool warm_ineq = false, int max_iter = 0) {
    const int nv = qp.nvar();
    const int ne = qp.neq();
    const int ny = ne + (qp.has_ineq() ? 1 : 0);
    if (max_iter <= 0) max_iter = 2 * nv + 200;

    constexpr double tol_feas = 1e-10;
    constexpr double tol_dual = 1e-11;
    constexpr double tol_curv = 1e-13;

    QpResult res;
    res.fix.assign(nv, 0);
    if (warm && static_cast<int>(warm->size()) == nv) {
        res.fix = *warm;
        for (int i = 0; i < nv; ++i) {
            if (res.fix[i] == 1 && !std::isfinite(qp.lower()[i])) res.fix[i] = 0;
            if (res.fix[i] == 2 && !std::isfinite(qp.upper()[i])) res.fix[i] = 0;
        }
        res.ineq_active = warm_ineq && qp.has_ineq();
    }

    Vec z(nv), y(ny), pin(nv), rs(nv), re(ny);
    double mu_ineq = 0.0;
    std::vector<double> mu_fix(nv, 0.0);

    auto fix_value = [&](int i) { return res.fix[i] == 1 ? qp.lower()[i] : qp.upper()[i]; };

    auto eqp_solve = [&]() -> bool {
        pin.setZero();
        for (int i = 0; i < nv; ++i)
            if (res.fix[i]) pin[i] = fix_value(i);
        rs = -qp.gradient() - qp.mul_H(pin);
        re.setZero();
        re.head(ne) = qp.eq_rhs() - qp.mul_E(pin);
        if (qp.has_ineq() && res.ineq_active)
            re[ne] = qp.ineq_rhs() - qp.ineq_row().dot(pin);
        if (!qp.solve(rs, re, pin, z, y)) return false;
        mu_ineq = (qp.has_ineq() && res.ineq_active) ? y[ne] : 0.0;
        const Vec s = detail::qp_stationarity(qp, z, y.head(ne), mu_ineq);
        for (int i = 0; i < nv; ++i)
            mu_fix[i] = res.fix[i] == 0 ? 0.0 : (res.fix[i] == 1 ? s[i] : -s[i]);
        return true;
    };

    {
        bool ok = qp.factor(res.fix, res.ineq_active) && eqp_solve();
        if (!ok) {
            bool any = res.ineq_active;
            for (int i = 0; i < nv && !any; ++i) any = res.fix[i] != 0;
            if (any) {  // warm set may be inconsistent; retry cold
                std::fill(res.fix.begin(), res.fix.end(), 0);
                res.ineq_active = false;
                ok = qp.factor(res.fix, false) && eqp_solve();
            }
            if (!ok) {
                res.status = QpStatus::singular;
                return res;
            }
        }
    }

    const Vec zero_pin = Vec::Zero(nv);
    const Vec zero_re = Vec::Zero(ny);

    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;

        // Drop working-set members with negative multipliers (worst first).
        {
            int worst = -1;
            double worst_mu = -tol_dual;
            for (int i = 0; i < nv; ++i)
                if (res.fix[i] && mu_fix[i] < worst_mu) { worst_mu = mu_fix[i]; worst = i; }
            const bool drop_ineq = res.ineq_active && mu_ineq < worst_mu;
            if (worst >= 0 || drop_ineq) {
                if (drop_ineq) res.ineq_active = false;
                else res.fix[worst] = 0;
                if (!qp.factor(res.fix, res.ineq_active) || !eqp_solve()) {
                    res.status = QpStatus::singular;
                    return res;
                }
                continue;
            }
        }

        // Most violated inactive constraint.
        int q = -1;            // variable index, or nv for the general row
        std::int8_t side = 0;  // 1 lower, 2 upper
        double viol = tol_feas;
        for (int i = 0; i < nv; ++i) {
            if (res.fix[i]) continue;
            const double vl = qp.lower()[i] - z[i];
            const double vu = z[i] - qp.upper()[i];
            if (vl > viol) { viol = vl; q = i; side = 1; }
            if (vu > viol) { viol = vu; q = i; side = 2; }
        }
        if (qp.has_ineq() && !res.ineq_active) {
            const double vi = qp.ineq_row().dot(z) - qp.ineq_rhs();
            if (vi > viol) { viol = vi; q = nv; side = 0; }
        }
        if (q < 0) {
            res.status = QpStatus::optimal;
            res.z = z;
            res.eq_mult = y.head(ne);
            res.ineq_mult = mu_ineq;
            return res;
        }

        Vec nq = Vec::Zero(nv);
        if (q < nv) nq[q] = (side == 1) ? -1.0 : 1.0;
        else nq = qp.ineq_row();

        // Inner loop: raise mu_q, dropping dual blockers along the way.
        bool resolved = false;
        for (int inner = 0; inner <= ny + nv + 2; ++inner) {
            Vec p(nv), w(ny);
            if (!qp.solve(nq, zero_re, zero_pin, p, w)) {
                res.status = QpStatus::singular;
                return res;
            }
            const double w_ineq = (qp.has_ineq() && res.ineq_active) ? w[ne] : 0.0;
            const double curv = nq.dot(p);

            // sdir = H p + E' w + w_a a - n_q; multiplier of fixed bound j on
            // variable i moves as mu_j(t) = mu_j - t * w_j with
            // w_j = -n_j(i) * sdir_i.
            const Vec sdir =
                detail::qp_stationarity(qp, p, w.head(ne), w_ineq) - qp.gradient() - nq;
            double t_dual = kInf;
            int blocker = -1;
            bool blocker_is_ineq = false;
            for (int i = 0; i < nv; ++i) {
                if (!res.fix[i]) continue;
                const double rate = res.fix[i] == 1 ? sdir[i] : -sdir[i];
                if (rate > tol_dual && mu_fix[i] / rate < t_dual) {
                    t_dual = mu_fix[i] / rate;
                    blocker = i;
                    blocker_is_ineq = false;
                }
            }
            if (res.ineq_active && w_ineq > tol_dual && mu_ineq / w_ineq < t_dual) {
                t_dual = mu_ineq / w_ineq;
                blocker = -1;
                blocker_is_ineq = true;
            }

            const double t_full = curv > tol_curv ? viol / curv : kInf;
            const double t = std::min(t_full, t_dual);
            if (!std::isfinite(t)) {
                res.status = QpStatus::infeasible;
                res.z = z;
                return res;
            }

            z -= t * p;
            y.head(ne) -= t * w.head(ne);
            mu_ineq -= t * w_ineq;
            for (int i = 0; i < nv; ++i)
                if (res.fix[i]) mu_fix[i] -= t * (res.fix[i] == 1 ? sdir[i] : -sdir[i]);
            viol -= t * curv;

            if (t_full <= t_dual) {
                if (q < nv) res.fix[q] = side;
                else res.ineq_active = true;
                if (!qp.factor(res.fix, res.ineq_active) || !eqp_solve()) {
                    res.status = QpStatus::singular;
                    return res;
                }
                resolved = true;
                break;
            }
            if (blocker_is_ineq) res.ineq_active = false;
            else res.fix[blocker] = 0;
            if (!qp.factor(res.fix, res.ineq_active)) {
                res.status = QpStatus::singular;
                return res;
            }
        }
        if (!resolved) {
            res.z = z;
            res.eq_mult = y.head(ne);
            res.ineq_mult = mu_ineq;
            res.status = QpStatus::max_iter;
            return res;
        }
    }
    res.z = z;
    res.eq_mult = y.head(ne);
    res.ineq_mult = mu_ineq;
    res.status = QpStatus::max_iter;
    return res;
}

/**
 * @brief Dense KKT backend for small QPs.
 */
class DenseKkt final : public QpBackend {
public:
    DenseKkt(Mat H, Vec g, Mat E, Vec e, Vec lo, Vec hi)
        : H_(std::move(H)), g_(std::move(g)), E_(std::move(E)), e_(std::move(e)),
          lo_(std::move(lo)), hi_(std::move(hi)) {
        nv_ = static_cast<int>(H_.rows());
        ne_ = static_cast<int>(E_.rows());
        if (ne_ > 0 && E_.cols() != nv_) throw Error("DenseKkt: E column mismatch");
        a_ = Vec::Zero(nv_);
    }

    void set_ineq(Vec a, double b) {
        a_ = std::move(a);
        b_ineq_ = b;
        has_ineq_ = true;
    }

    int nvar() const override { return nv_; }
    int neq() const override { return ne_; }
    bool has_ineq() const override { return has_ineq_; }
    const Vec& gradient() const override { return g_; }
    const Vec& eq_rhs() const override { return e_; }
    const Vec& lower() const override { return lo_; }
    const Vec& upper() const override { return hi_; }
    const Vec& ineq_row() const override { return a_; }
    double ineq_rhs() const override { return b_ineq_; }

    Vec mul_H(const Vec& z) const override { return H_ * z; }
    Vec mul_E(const Vec& z) const override {
        return ne_ > 0 ? Vec(E_ * z) : Vec(Vec::Zero(0));
    }
    Vec mul_ET(const Vec& nu) const override {
        return ne_ > 0 ? Vec(E_.transpose() * nu) : Vec(Vec::Zero(nv_));
    }

    bool factor(const FixCodes& fix, bool ineq_active) override {
        fix_ = fix;
        const int ni = has_ineq_ ? 1 : 0;
        const int d = nv_ + ne_ + ni;
        Mat K = Mat::Zero(d, d);
        K.topLeftCorner(nv_, nv_) = H_;
        if (ne_ > 0) {
            K.block(nv_, 0, ne_, nv_) = E_;
            K.block(0, nv_, nv_, ne_) = E_.transpose();
        }
        if (has_ineq_) {
            if (ineq_active) {
                K.row(nv_ + ne_).head(nv_) = a_.transpose();
                K.col(nv_ + ne_).head(nv_) = a_;
            } else {
                K(nv_ + ne_, nv_ + ne_) = 1.0;
            }
        }
        for (int i = 0; i < nv_; ++i) {
            if (!fix_[i]) continue;
            K.row(i).setZero();
            K.col(i).setZero();
            K(i, i) = 1.0;
        }
        lu_.compute(K);
        return lu_.rank() == d;
    }

    bool solve(const Vec& rs, const Vec& re, const Vec& pin, Vec& z, Vec& y) override {
        const int ni = has_ineq_ ? 1 : 0;
        Vec rhs(nv_ + ne_ + ni);
        rhs.head(nv_) = rs;
        rhs.segment(nv_, ne_) = re.head(ne_);
        if (has_ineq_) rhs[nv_ + ne_] = ne_ < re.size() ? re[ne_] : 0.0;
        for (int i = 0; i < nv_; ++i)
            if (fix_[i]) rhs[i] = pin[i];
        const Vec sol = lu_.solve(rhs);
        z = sol.head(nv_);
        y = sol.tail(ne_ + ni);
        return sol.allFinite();
    }

private:
    Mat H_;
    Vec g_;
    Mat E_;
    Vec e_;
    Vec lo_, hi_;
    Vec a_;
    double b_ineq_ = 0.0;
    bool has_ineq_ = false;
    int nv_ = 0, ne_ = 0;
    Eigen::FullPivLU<Mat> lu_;
    FixCodes fix_;
};

}  // namespace mpct

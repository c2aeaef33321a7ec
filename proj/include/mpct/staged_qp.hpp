#pragma once

#include <lapacke.h>

#include <vector>

#include "mpct/qp.hpp"
#include "mpct/types.hpp"

namespace mpct {

/**
 * @brief Stage-structured QP data for multiple-shooting transcriptions.
 *
 * Variables are stacked [x(0), u(0), ..., x(N-1), u(N-1), x(N), border] where
 * the optional border block holds the artificial reference (x_r, u_r).
 * Equality rows are stacked [initial-state (n); shooting defects (N*n);
 * border rows (nr)], the border rows being everything that couples the border
 * block (equilibrium condition, terminal equality) so that the banded core
 * stays a plain LQ KKT system.
 */
struct StagedQpData {
    int N = 0, n = 0, m = 0, nb = 0;

    std::vector<Mat> Hx;   ///< N+1 diagonal state Hessian blocks
    std::vector<Mat> Hu;   ///< N diagonal input Hessian blocks
    std::vector<Mat> Cxb;  ///< N+1 cross blocks x(k) x border (n x nb)
    std::vector<Mat> Cub;  ///< N cross blocks u(k) x border (m x nb)
    Mat Hb;                ///< border Hessian (nb x nb)
    Vec g;                 ///< stacked gradient

    Vec init_rhs;              ///< n
    std::vector<Mat> Ak, Bk;   ///< N defect Jacobians
    std::vector<Vec> dk;       ///< N defect right-hand sides
    Mat Tn, Tb;                ///< border rows: coefficients on x(N) and border
    Vec tr;                    ///< border row rhs

    Vec lo, hi;
    bool has_ineq = false;
    Vec a;  ///< single inequality row a'z <= b_ineq, stacked like z
    double b_ineq = 0.0;

    int nvar() const { return N * (n + m) + n + nb; }
    int nrows_border() const { return static_cast<int>(Tn.rows()); }
    int neq() const { return n * (N + 1) + nrows_border(); }
    int ix(int k) const { return k * (n + m); }
    int iu(int k) const { return k * (n + m) + n; }
    int ib() const { return N * (n + m) + n; }
};

/**
 * @brief KKT backend exploiting the banded-plus-border structure.
 *
 * The core (stage variables, initial-state and defect multipliers) is ordered
 * stage-wise and factored as a banded LU (LAPACK dgbtrf); the border block is
 * eliminated through a dense Schur complement.
 */
class StagedKkt final : public QpBackend {
public:
    explicit StagedKkt(StagedQpData data) : d_(std::move(data)) {
        nv_ = d_.nvar();
        ne_ = d_.neq();
        nr_ = d_.nrows_border();
        const int n = d_.n, m = d_.m;
        core_dim_ = n + d_.N * (2 * n + m) + n;
        bw_ = 2 * n + m;
        ldab_ = 3 * bw_ + 1;
        e_.resize(ne_);
        e_.head(n) = d_.init_rhs;
        for (int k = 0; k < d_.N; ++k) e_.segment(n + k * n, n) = d_.dk[k];
        e_.tail(nr_) = d_.tr;
        if (!d_.has_ineq) d_.a = Vec::Zero(nv_);
        fix_.assign(nv_, 0);
    }

    int nvar() const override { return nv_; }
    int neq() const override { return ne_; }
    bool has_ineq() const override { return d_.has_ineq; }
    const Vec& gradient() const override { return d_.g; }
    const Vec& eq_rhs() const override { return e_; }
    const Vec& lower() const override { return d_.lo; }
    const Vec& upper() const override { return d_.hi; }
    const Vec& ineq_row() const override { return d_.a; }
    double ineq_rhs() const override { return d_.b_ineq; }

    Vec mul_H(const Vec& v) const override {
        const int n = d_.n, m = d_.m, N = d_.N, nb = d_.nb;
        Vec r = Vec::Zero(nv_);
        const Vec vb = nb > 0 ? Vec(v.tail(nb)) : Vec();
        Vec rb = Vec::Zero(nb);
        for (int k = 0; k <= N; ++k) {
            const auto vx = v.segment(d_.ix(k), n);
            r.segment(d_.ix(k), n) = d_.Hx[k] * vx;
            if (nb > 0) {
                r.segment(d_.ix(k), n) += d_.Cxb[k] * vb;
                rb += d_.Cxb[k].transpose() * vx;
            }
            if (k < N) {
                const auto vu = v.segment(d_.iu(k), m);
                r.segment(d_.iu(k), m) = d_.Hu[k] * vu;
                if (nb > 0) {
                    r.segment(d_.iu(k), m) += d_.Cub[k] * vb;
                    rb += d_.Cub[k].transpose() * vu;
                }
            }
        }
        if (nb > 0) r.tail(nb) = rb + d_.Hb * vb;
        return r;
    }

    Vec mul_E(const Vec& v) const override {
        const int n = d_.n, m = d_.m, N = d_.N, nb = d_.nb;
        Vec r(ne_);
        r.head(n) = v.segment(d_.ix(0), n);
        for (int k = 0; k < N; ++k)
            r.segment(n + k * n, n) = v.segment(d_.ix(k + 1), n) - d_.Ak[k] * v.segment(d_.ix(k), n) -
                                      d_.Bk[k] * v.segment(d_.iu(k), m);
        if (nr_ > 0) {
            r.tail(nr_) = d_.Tn * v.segment(d_.ix(N), n);
            if (nb > 0) r.tail(nr_) += d_.Tb * v.tail(nb);
        }
        return r;
    }

    Vec mul_ET(const Vec& nu) const override {
        const int n = d_.n, m = d_.m, N = d_.N, nb = d_.nb;
        Vec r = Vec::Zero(nv_);
        r.segment(d_.ix(0), n) += nu.head(n);
        for (int k = 0; k < N; ++k) {
            const auto nk = nu.segment(n + k * n, n);
            r.segment(d_.ix(k), n) -= d_.Ak[k].transpose() * nk;
            r.segment(d_.iu(k), m) -= d_.Bk[k].transpose() * nk;
            r.segment(d_.ix(k + 1), n) += nk;
        }
        if (nr_ > 0) {
            const auto nub = nu.tail(nr_);
            r.segment(d_.ix(N), n) += d_.Tn.transpose() * nub;
            if (nb > 0) r.tail(nb) += d_.Tb.transpose() * nub;
        }
        return r;
    }

    bool factor(const FixCodes& fix, bool ineq_active) override {
        fix_ = fix;
        ineq_active_ = ineq_active;
        const int n = d_.n, m = d_.m, N = d_.N, nb = d_.nb;
        const int ni = d_.has_ineq ? 1 : 0;
        w_ = nb + nr_ + ni;

        ab_.assign(static_cast<size_t>(ldab_) * core_dim_, 0.0);
        auto put = [&](int i, int j, double val) {
            // LAPACK band storage, 0-based: AB[(kl+ku) + i - j, j].
            ab_[static_cast<size_t>(j) * ldab_ + (2 * bw_ + i - j)] = val;
        };
        auto add = [&](int i, int j, double val) {
            ab_[static_cast<size_t>(j) * ldab_ + (2 * bw_ + i - j)] += val;
        };
        auto add_sym = [&](int i, int j, double val) {
            add(i, j, val);
            if (i != j) add(j, i, val);
        };

        // Core positions.
        auto px = [&](int k) { return n + k * (2 * n + m); };
        auto pu = [&](int k) { return px(k) + n; };
        auto pnd = [&](int k) { return px(k) + n + m; };
        const int pxN = px(N);
        auto var_fixed = [&](int v) { return fix_[v] != 0; };

        // Initial-state rows: identity on x(0).
        for (int i = 0; i < n; ++i)
            if (!var_fixed(d_.ix(0) + i)) add_sym(i, px(0) + i, 1.0);

        // Stage Hessians.
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i < n; ++i) {
                if (var_fixed(d_.ix(k) + i)) continue;
                for (int j = 0; j <= i; ++j)
                    if (!var_fixed(d_.ix(k) + j)) add_sym(px(k) + i, px(k) + j, d_.Hx[k](i, j));
            }
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) {
                if (var_fixed(d_.iu(k) + i)) continue;
                for (int j = 0; j <= i; ++j)
                    if (!var_fixed(d_.iu(k) + j)) add_sym(pu(k) + i, pu(k) + j, d_.Hu[k](i, j));
            }

        // Defect rows: -A x(k) - B u(k) + x(k+1).
        for (int k = 0; k < N; ++k) {
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j)
                    if (!var_fixed(d_.ix(k) + j)) add_sym(pnd(k) + i, px(k) + j, -d_.Ak[k](i, j));
                for (int j = 0; j < m; ++j)
                    if (!var_fixed(d_.iu(k) + j)) add_sym(pnd(k) + i, pu(k) + j, -d_.Bk[k](i, j));
                if (!var_fixed(d_.ix(k + 1) + i)) add_sym(pnd(k) + i, px(k + 1) + i, 1.0);
            }
        }

        // Fixed core variables become identity rows.
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i < n; ++i)
                if (var_fixed(d_.ix(k) + i)) put(px(k) + i, px(k) + i, 1.0);
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i)
                if (var_fixed(d_.iu(k) + i)) put(pu(k) + i, pu(k) + i, 1.0);

        ipiv_.resize(core_dim_);
        const lapack_int info = LAPACKE_dgbtrf(LAPACK_COL_MAJOR, core_dim_, core_dim_, bw_, bw_,
                                               ab_.data(), ldab_, ipiv_.data());
        if (info != 0) return false;

        if (w_ == 0) {
            S_.resize(0, 0);
            return true;
        }

        // Border columns.
        C_ = Mat::Zero(core_dim_, w_);
        for (int jb = 0; jb < nb; ++jb) {
            if (var_fixed(d_.ib() + jb)) continue;
            for (int k = 0; k <= N; ++k)
                for (int i = 0; i < n; ++i)
                    if (!var_fixed(d_.ix(k) + i)) C_(px(k) + i, jb) = d_.Cxb[k](i, jb);
            for (int k = 0; k < N; ++k)
                for (int i = 0; i < m; ++i)
                    if (!var_fixed(d_.iu(k) + i)) C_(pu(k) + i, jb) = d_.Cub[k](i, jb);
        }
        for (int jr = 0; jr < nr_; ++jr)
            for (int i = 0; i < n; ++i)
                if (!var_fixed(d_.ix(N) + i)) C_(pxN + i, nb + jr) = d_.Tn(jr, i);
        if (d_.has_ineq && ineq_active_) {
            const int jc = nb + nr_;
            for (int k = 0; k <= N; ++k)
                for (int i = 0; i < n; ++i)
                    if (!var_fixed(d_.ix(k) + i)) C_(px(k) + i, jc) = d_.a[d_.ix(k) + i];
            for (int k = 0; k < N; ++k)
                for (int i = 0; i < m; ++i)
                    if (!var_fixed(d_.iu(k) + i)) C_(pu(k) + i, jc) = d_.a[d_.iu(k) + i];
        }

        // Border block.
        Mat D = Mat::Zero(w_, w_);
        if (nb > 0) D.topLeftCorner(nb, nb) = d_.Hb;
        if (nr_ > 0 && nb > 0) {
            D.block(nb, 0, nr_, nb) = d_.Tb;
            D.block(0, nb, nb, nr_) = d_.Tb.transpose();
        }
        if (d_.has_ineq) {
            const int jc = nb + nr_;
            if (ineq_active_) {
                for (int jb = 0; jb < nb; ++jb) {
                    D(jc, jb) = d_.a[d_.ib() + jb];
                    D(jb, jc) = d_.a[d_.ib() + jb];
                }
            } else {
                D(jc, jc) = 1.0;
            }
        }
        for (int jb = 0; jb < nb; ++jb) {
            if (!var_fixed(d_.ib() + jb)) continue;
            D.row(jb).setZero();
            D.col(jb).setZero();
            D(jb, jb) = 1.0;
        }

        // Schur complement S = D - C' B^{-1} C.
        X_ = C_;
        if (LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', core_dim_, bw_, bw_, w_, ab_.data(), ldab_,
                           ipiv_.data(), X_.data(), core_dim_) != 0)
            return false;
        S_ = D - C_.transpose() * X_;
        slu_.compute(S_);
        return slu_.rank() == w_;
    }

    bool solve(const Vec& rs, const Vec& re, const Vec& pin, Vec& z, Vec& y) override {
        const int n = d_.n, m = d_.m, N = d_.N, nb = d_.nb;
        auto px = [&](int k) { return n + k * (2 * n + m); };
        auto pu = [&](int k) { return px(k) + n; };
        auto pnd = [&](int k) { return px(k) + n + m; };

        Vec rc(core_dim_);
        for (int i = 0; i < n; ++i) rc[i] = re[i];
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i < n; ++i) {
                const int v = d_.ix(k) + i;
                rc[px(k) + i] = fix_[v] ? pin[v] : rs[v];
            }
        for (int k = 0; k < N; ++k) {
            for (int i = 0; i < m; ++i) {
                const int v = d_.iu(k) + i;
                rc[pu(k) + i] = fix_[v] ? pin[v] : rs[v];
            }
            for (int i = 0; i < n; ++i) rc[pnd(k) + i] = re[n + k * n + i];
        }

        if (LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', core_dim_, bw_, bw_, 1, ab_.data(), ldab_,
                           ipiv_.data(), rc.data(), core_dim_) != 0)
            return false;

        Vec zb;
        if (w_ > 0) {
            Vec rb(w_);
            for (int jb = 0; jb < nb; ++jb) {
                const int v = d_.ib() + jb;
                rb[jb] = fix_[v] ? pin[v] : rs[v];
            }
            for (int jr = 0; jr < nr_; ++jr) rb[nb + jr] = re[n * (N + 1) + jr];
            if (d_.has_ineq) rb[nb + nr_] = ineq_active_ ? re[ne_] : 0.0;
            zb = slu_.solve(rb - C_.transpose() * rc);
            rc -= X_ * zb;
        }

        // Unscatter.
        z.resize(nv_);
        y.resize(ne_ + (d_.has_ineq ? 1 : 0));
        for (int k = 0; k <= N; ++k)
            for (int i = 0; i < n; ++i) z[d_.ix(k) + i] = rc[px(k) + i];
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) z[d_.iu(k) + i] = rc[pu(k) + i];
        for (int jb = 0; jb < nb; ++jb) z[d_.ib() + jb] = zb[jb];
        for (int i = 0; i < n; ++i) y[i] = rc[i];
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < n; ++i) y[n + k * n + i] = rc[pnd(k) + i];
        for (int jr = 0; jr < nr_; ++jr) y[n * (N + 1) + jr] = zb[nb + jr];
        if (d_.has_ineq) y[ne_] = ineq_active_ ? zb[nb + nr_] : 0.0;
        return z.allFinite() && y.allFinite();
    }

    const StagedQpData& data() const { return d_; }

private:
    StagedQpData d_;
    Vec e_;
    int nv_ = 0, ne_ = 0, nr_ = 0;
    int core_dim_ = 0, bw_ = 0, ldab_ = 0, w_ = 0;
    std::vector<double> ab_;
    std::vector<lapack_int> ipiv_;
    Mat C_, X_, S_;
    Eigen::FullPivLU<Mat> slu_;
    FixCodes fix_;
    bool ineq_active_ = false;
};

}  // namespace mpct

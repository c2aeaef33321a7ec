#pragma once

// Test-only oracles, independent of the solver implementation path.

#include "mpct/costs.hpp"
#include "mpct/model.hpp"
#include "mpct/ocp.hpp"

namespace mpct::testing {

/// Affine system x+ = A x + B u + c with exact Jacobians.
inline SystemModel affine_model(Mat A, Mat B, Vec c) {
    SystemModel s;
    s.n = static_cast<int>(A.rows());
    s.m = static_cast<int>(B.cols());
    s.name = "affine";
    auto Ac = std::make_shared<Mat>(std::move(A));
    auto Bc = std::make_shared<Mat>(std::move(B));
    auto cc = std::make_shared<Vec>(std::move(c));
    s.rhs = [Ac, Bc, cc](const Vec& x, const Vec& u) { return Vec(*Ac * x + *Bc * u + *cc); };
    s.rhs_jac = [Ac, Bc](const Vec&, const Vec&, Mat& Ja, Mat& Jb) {
        Ja = *Ac;
        Jb = *Bc;
    };
    return s;
}

/**
 * @brief Dense KKT oracle for equality-terminal LQ problems with inactive
 * bounds: assembles the full quadratic program in absolute variables and
 * solves one saddle-point system.
 */
struct DenseLqOracle {
    double objective = kInf;
    Vec z;
    bool ok = false;
};

inline DenseLqOracle dense_lq_solve(const OcpSpec& spec, const Mat& A, const Mat& B, const Vec& c,
                                    const Vec& x0) {
    const int N = spec.N, n = spec.model.n, m = spec.model.m;
    const bool tracking = spec.mode == OcpMode::tracking;
    const int nb = tracking ? n + m : 0;
    const int nv = N * (n + m) + n + nb;
    auto ix = [&](int k) { return k * (n + m); };
    auto iu = [&](int k) { return k * (n + m) + n; };
    const int ib = N * (n + m) + n;

    Mat H = Mat::Zero(nv, nv);
    Vec g = Vec::Zero(nv);
    double c0 = 0.0;
    const Mat Q2 = 2.0 * spec.sc.Q, R2 = 2.0 * spec.sc.R;
    const Reference& rf = spec.r_fixed;
    for (int k = 0; k < N; ++k) {
        H.block(ix(k), ix(k), n, n) += Q2;
        H.block(iu(k), iu(k), m, m) += R2;
        if (tracking) {
            H.block(ix(k), ib, n, n) -= Q2;
            H.block(ib, ix(k), n, n) -= Q2;
            H.block(iu(k), ib + n, m, m) -= R2;
            H.block(ib + n, iu(k), m, m) -= R2;
            H.block(ib, ib, n, n) += Q2;
            H.block(ib + n, ib + n, m, m) += R2;
        } else {
            g.segment(ix(k), n) -= Q2 * rf.x_r;
            g.segment(iu(k), m) -= R2 * rf.u_r;
            c0 += rf.x_r.dot(spec.sc.Q * rf.x_r) + rf.u_r.dot(spec.sc.R * rf.u_r);
        }
    }
    if (tracking) {
        const double lam = spec.scaling(N);
        H.block(ib, ib, n, n) += lam * 2.0 * spec.offset.S_x;
        H.block(ib + n, ib + n, m, m) += lam * 2.0 * spec.offset.S_u;
        g.segment(ib, n) -= lam * 2.0 * spec.offset.S_x * spec.offset.x_e;
        g.segment(ib + n, m) -= lam * 2.0 * spec.offset.S_u * spec.offset.u_e;
        c0 += lam * (spec.offset.x_e.dot(spec.offset.S_x * spec.offset.x_e) +
                     spec.offset.u_e.dot(spec.offset.S_u * spec.offset.u_e));
    }

    const int ne = n * (N + 1) + (tracking ? n : 0) + n;  // init, defects, equilibrium, terminal
    Mat E = Mat::Zero(ne, nv);
    Vec e = Vec::Zero(ne);
    E.block(0, ix(0), n, n) = Mat::Identity(n, n);
    e.head(n) = x0;
    for (int k = 0; k < N; ++k) {
        E.block(n + k * n, ix(k), n, n) = -A;
        E.block(n + k * n, iu(k), n, m) = -B;
        E.block(n + k * n, ix(k + 1), n, n) = Mat::Identity(n, n);
        e.segment(n + k * n, n) = c;
    }
    int row = n * (N + 1);
    if (tracking) {
        E.block(row, ib, n, n) = A - Mat::Identity(n, n);
        E.block(row, ib + n, n, m) = B;
        e.segment(row, n) = -c;
        row += n;
    }
    E.block(row, ix(N), n, n) = Mat::Identity(n, n);
    if (tracking) E.block(row, ib, n, n) = -Mat::Identity(n, n);
    else e.segment(row, n) = rf.x_r;

    const int d = nv + ne;
    Mat K = Mat::Zero(d, d);
    K.topLeftCorner(nv, nv) = H;
    K.block(nv, 0, ne, nv) = E;
    K.block(0, nv, nv, ne) = E.transpose();
    Vec rhs(d);
    rhs.head(nv) = -g;
    rhs.tail(ne) = e;
    Eigen::FullPivLU<Mat> lu(K);
    DenseLqOracle out;
    if (lu.rank() < d) return out;
    const Vec sol = lu.solve(rhs);
    out.z = sol.head(nv);
    out.objective = 0.5 * out.z.dot(H * out.z) + g.dot(out.z) + c0;
    out.ok = true;
    return out;
}

/**
 * @brief Brute-force scalar tracking oracle: grid over x_r with an exact
 * equality-terminal LQ inner solve per grid point (bounds checked, not
 * enforced; callers pick regimes where they stay inactive).
 */
struct ScalarGridResult {
    double x_r = 0.0;
    double value = kInf;
};

inline ScalarGridResult scalar_tracking_grid(double x0, int N, double lambda, double lo, double hi,
                                             double step) {
    ScalarGridResult best;
    for (double xr = lo; xr <= hi + 1e-12; xr += step) {
        // Inner problem: min sum (x_k - xr)^2 + u_k^2, x+ = x + u, x_N = xr.
        const int n = 1, m = 1;
        const int nv = N * (n + m) + n;
        Mat H = Mat::Zero(nv, nv);
        Vec g = Vec::Zero(nv);
        double c0 = lambda * xr * xr;
        for (int k = 0; k < N; ++k) {
            H(k * 2, k * 2) = 2.0;
            H(k * 2 + 1, k * 2 + 1) = 2.0;
            g[k * 2] = -2.0 * xr;
            c0 += xr * xr;
        }
        const int ne = N + 2;
        Mat E = Mat::Zero(ne, nv);
        Vec e = Vec::Zero(ne);
        E(0, 0) = 1.0;
        e[0] = x0;
        for (int k = 0; k < N; ++k) {
            E(1 + k, 2 * k) = -1.0;
            E(1 + k, 2 * k + 1) = -1.0;
            E(1 + k, 2 * k + 2) = 1.0;
        }
        E(N + 1, 2 * N) = 1.0;
        e[N + 1] = xr;
        const int d = nv + ne;
        Mat K = Mat::Zero(d, d);
        K.topLeftCorner(nv, nv) = H;
        K.block(nv, 0, ne, nv) = E;
        K.block(0, nv, nv, ne) = E.transpose();
        Vec rhs(d);
        rhs.head(nv) = -g;
        rhs.tail(ne) = e;
        const Vec sol = Eigen::FullPivLU<Mat>(K).solve(rhs);
        const Vec z = sol.head(nv);
        const double val = 0.5 * z.dot(H * z) + g.dot(z) + c0;
        if (val < best.value) {
            best.value = val;
            best.x_r = xr;
        }
    }
    return best;
}

}  // namespace mpct::testing

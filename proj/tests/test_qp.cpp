#include <catch2/catch_amalgamated.hpp>

#include "mpct/qp.hpp"
#include "mpct/staged_qp.hpp"

using namespace mpct;

namespace {

double objective(const Mat& H, const Vec& g, const Vec& z) {
    return 0.5 * z.dot(H * z) + g.dot(z);
}

// Brute-force oracle: enumerate every bound fix combination, solve the dense
// equality-constrained KKT system, keep the best primal-dual feasible point.
struct Oracle {
    bool feasible = false;
    double obj = kInf;
    Vec z;
};

Oracle enumerate_qp(const Mat& H, const Vec& g, const Mat& E, const Vec& e, const Vec& lo,
                    const Vec& hi) {
    const int nv = static_cast<int>(H.rows());
    const int ne = static_cast<int>(E.rows());
    Oracle best;
    std::vector<int> code(nv, 0);
    const long combos = static_cast<long>(std::pow(3, nv));
    for (long c = 0; c < combos; ++c) {
        long t = c;
        for (int i = 0; i < nv; ++i) { code[i] = t % 3; t /= 3; }
        int nfix = 0;
        for (int i = 0; i < nv; ++i) nfix += code[i] != 0;
        const int d = nv + ne + nfix;
        Mat K = Mat::Zero(d, d);
        Vec rhs = Vec::Zero(d);
        K.topLeftCorner(nv, nv) = H;
        rhs.head(nv) = -g;
        if (ne > 0) {
            K.block(nv, 0, ne, nv) = E;
            K.block(0, nv, nv, ne) = E.transpose();
            rhs.segment(nv, ne) = e;
        }
        int rrow = nv + ne;
        for (int i = 0; i < nv; ++i) {
            if (!code[i]) continue;
            K(rrow, i) = 1.0;
            K(i, rrow) = 1.0;
            rhs[rrow] = code[i] == 1 ? lo[i] : hi[i];
            ++rrow;
        }
        Eigen::FullPivLU<Mat> lu(K);
        if (lu.rank() < d) continue;
        const Vec sol = lu.solve(rhs);
        const Vec z = sol.head(nv);
        if ((K * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-8) continue;
        bool ok = true;
        for (int i = 0; i < nv; ++i)
            if (z[i] < lo[i] - 1e-9 || z[i] > hi[i] + 1e-9) ok = false;
        if (ne > 0 && (E * z - e).lpNorm<Eigen::Infinity>() > 1e-9) ok = false;
        // Dual feasibility. The oracle rows are +e_i, so the row multiplier
        // satisfies s_i = -(mu_row)_i with s = Hz + g + E'nu. A lower bound
        // needs s_i >= 0 (mu_row <= 0), an upper bound s_i <= 0 (mu_row >= 0).
        rrow = nv + ne;
        for (int i = 0; i < nv && ok; ++i) {
            if (!code[i]) continue;
            const double mu_row = sol[rrow];
            if (code[i] == 1 && mu_row > 1e-9) ok = false;
            if (code[i] == 2 && mu_row < -1e-9) ok = false;
            ++rrow;
        }
        if (!ok) continue;
        const double obj = objective(H, g, z);
        if (!best.feasible || obj < best.obj) {
            best.feasible = true;
            best.obj = obj;
            best.z = z;
        }
    }
    return best;
}

Mat random_spd(Rng& rng, int d) {
    Mat A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = rng.uniform(-1, 1);
    return A.transpose() * A + 0.3 * Mat::Identity(d, d);
}

}  // namespace

TEST_CASE("random box QPs match the enumeration oracle") {
    Rng rng(2024);
    int solved = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int nv = 2 + static_cast<int>(rng.uniform() * 4.0);
        const int ne = static_cast<int>(rng.uniform() * std::min(nv - 1, 3));
        const Mat H = random_spd(rng, nv);
        Vec g(nv), lo(nv), hi(nv);
        for (int i = 0; i < nv; ++i) {
            g[i] = rng.uniform(-2, 2);
            lo[i] = rng.uniform(-1.5, 0.0);
            hi[i] = lo[i] + rng.uniform(0.2, 2.0);
        }
        Mat E(ne, nv);
        for (int i = 0; i < ne; ++i)
            for (int j = 0; j < nv; ++j) E(i, j) = rng.uniform(-1, 1);
        // Right-hand side from an interior point so the QP is feasible.
        Vec zf(nv);
        for (int i = 0; i < nv; ++i) zf[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform(0.2, 0.8);
        const Vec e = ne > 0 ? Vec(E * zf) : Vec(Vec::Zero(0));

        const Oracle oracle = enumerate_qp(H, g, E, e, lo, hi);
        REQUIRE(oracle.feasible);

        DenseKkt qp(H, g, E, e, lo, hi);
        const QpResult sol = solve_qp(qp);
        REQUIRE(sol.status == QpStatus::optimal);
        CHECK(objective(H, g, sol.z) == Catch::Approx(oracle.obj).margin(1e-7));
        CHECK((sol.z - oracle.z).lpNorm<Eigen::Infinity>() < 1e-6);
        ++solved;
    }
    CHECK(solved == 200);
}

TEST_CASE("infeasible and degenerate QPs are detected") {
    SECTION("equalities incompatible with bounds") {
        Mat H = Mat::Identity(2, 2);
        Vec g = Vec::Zero(2);
        Mat E(1, 2);
        E << 1, 1;
        Vec e(1);
        e << 10.0;
        DenseKkt qp(H, g, E, e, Vec::Zero(2), Vec::Ones(2));
        const QpResult sol = solve_qp(qp);
        CHECK(sol.status == QpStatus::infeasible);
    }
    SECTION("contradictory equality rows are singular") {
        Mat H = Mat::Identity(1, 1);
        Vec g = Vec::Zero(1);
        Mat E(2, 1);
        E << 1, 1;
        Vec e(2);
        e << 0.0, 1.0;
        Vec lo(1), hi(1);
        lo << -5;
        hi << 5;
        DenseKkt qp(H, g, E, e, lo, hi);
        const QpResult sol = solve_qp(qp);
        CHECK(sol.status == QpStatus::singular);
    }
}

TEST_CASE("single general inequality row") {
    // min |z - c|^2 with a'z <= b; solution is the halfspace projection.
    Mat H = 2.0 * Mat::Identity(3, 3);
    Vec c(3);
    c << 1, 2, 3;
    Vec g = -2.0 * c;
    Vec lo = Vec::Constant(3, -100), hi = Vec::Constant(3, 100);
    DenseKkt qp(H, g, Mat(0, 3), Vec(0), lo, hi);
    Vec a(3);
    a << 1, 1, 1;
    qp.set_ineq(a, 3.0);
    const QpResult sol = solve_qp(qp);
    REQUIRE(sol.status == QpStatus::optimal);
    const Vec expect = c - a * ((a.dot(c) - 3.0) / a.squaredNorm());
    CHECK((sol.z - expect).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(sol.ineq_active);
    CHECK(sol.ineq_mult > 0.0);

    qp.set_ineq(a, 100.0);  // inactive case
    const QpResult sol2 = solve_qp(qp);
    REQUIRE(sol2.status == QpStatus::optimal);
    CHECK((sol2.z - c).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK_FALSE(sol2.ineq_active);
}

namespace {

// Equivalent dense problem for a staged QP, used to validate the banded
// backend against the dense one.
void staged_to_dense(const StagedQpData& d, Mat& H, Mat& E, Vec& e) {
    const int nv = d.nvar();
    const int ne = d.neq();
    const int n = d.n, m = d.m, N = d.N, nb = d.nb;
    H = Mat::Zero(nv, nv);
    for (int k = 0; k <= N; ++k) {
        H.block(d.ix(k), d.ix(k), n, n) = d.Hx[k];
        if (nb > 0) {
            H.block(d.ix(k), d.ib(), n, nb) = d.Cxb[k];
            H.block(d.ib(), d.ix(k), nb, n) = d.Cxb[k].transpose();
        }
        if (k < N) {
            H.block(d.iu(k), d.iu(k), m, m) = d.Hu[k];
            if (nb > 0) {
                H.block(d.iu(k), d.ib(), m, nb) = d.Cub[k];
                H.block(d.ib(), d.iu(k), nb, m) = d.Cub[k].transpose();
            }
        }
    }
    if (nb > 0) H.block(d.ib(), d.ib(), nb, nb) = d.Hb;

    E = Mat::Zero(ne, nv);
    e = Vec::Zero(ne);
    E.block(0, d.ix(0), n, n) = Mat::Identity(n, n);
    e.head(n) = d.init_rhs;
    for (int k = 0; k < N; ++k) {
        E.block(n + k * n, d.ix(k), n, n) = -d.Ak[k];
        E.block(n + k * n, d.iu(k), n, m) = -d.Bk[k];
        E.block(n + k * n, d.ix(k + 1), n, n) = Mat::Identity(n, n);
        e.segment(n + k * n, n) = d.dk[k];
    }
    const int nr = d.nrows_border();
    if (nr > 0) {
        E.block(n * (N + 1), d.ix(N), nr, n) = d.Tn;
        if (nb > 0) E.block(n * (N + 1), d.ib(), nr, nb) = d.Tb;
        e.tail(nr) = d.tr;
    }
}

StagedQpData random_staged(Rng& rng, int N, int n, int m, bool border, bool term_eq, bool ineq) {
    StagedQpData d;
    if (term_eq) N = std::max(N, n);  // keep the terminal target reachable
    d.N = N;
    d.n = n;
    d.m = m;
    d.nb = border ? n + m : 0;
    for (int k = 0; k <= N; ++k) {
        d.Hx.push_back(random_spd(rng, n));
        if (d.nb) d.Cxb.push_back(Mat::Zero(n, d.nb));
        if (k < N) {
            d.Hu.push_back(random_spd(rng, m));
            if (d.nb) d.Cub.push_back(Mat::Zero(m, d.nb));
        }
    }
    if (d.nb) {
        // Tracking-style cross terms keep H positive definite overall.
        for (int k = 0; k <= N; ++k) d.Cxb[k].leftCols(n) = -0.3 * d.Hx[k];
        for (int k = 0; k < N; ++k) d.Cub[k].rightCols(m) = -0.3 * d.Hu[k];
        d.Hb = random_spd(rng, d.nb) + 3.0 * Mat::Identity(d.nb, d.nb);
    }
    d.g = Vec::Zero(d.nvar());
    for (int i = 0; i < d.nvar(); ++i) d.g[i] = rng.uniform(-1, 1);
    d.init_rhs = Vec::Zero(n);
    for (int i = 0; i < n; ++i) d.init_rhs[i] = rng.uniform(-0.5, 0.5);
    for (int k = 0; k < N; ++k) {
        Mat A(n, n), B(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-0.6, 0.6);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) B(i, j) = rng.uniform(-1, 1);
        d.Ak.push_back(A);
        d.Bk.push_back(B);
        Vec dkv(n);
        for (int i = 0; i < n; ++i) dkv[i] = rng.uniform(-0.2, 0.2);
        d.dk.push_back(dkv);
    }
    int nr = 0;
    if (border) nr += n;  // equilibrium-style rows
    if (term_eq) nr += n;
    d.Tn = Mat::Zero(nr, n);
    d.Tb = Mat::Zero(nr, d.nb);
    d.tr = Vec::Zero(nr);
    int row = 0;
    if (border) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d.nb; ++j) d.Tb(row + i, j) = rng.uniform(-0.5, 0.5);
        for (int i = 0; i < n; ++i) d.Tb(row + i, i) += 1.0;
        row += n;
    }
    if (term_eq) {
        d.Tn.block(row, 0, n, n) = Mat::Identity(n, n);
        if (border) d.Tb.block(row, 0, n, n) = -Mat::Identity(n, n);
        else
            for (int i = 0; i < n; ++i) d.tr[row + i] = rng.uniform(-0.3, 0.3);
        row += n;
    }
    d.lo = Vec::Constant(d.nvar(), -1.2);
    d.hi = Vec::Constant(d.nvar(), 1.2);
    if (ineq) {
        d.has_ineq = true;
        d.a = Vec::Zero(d.nvar());
        for (int i = 0; i < n; ++i) d.a[d.ix(N) + i] = rng.uniform(-1, 1);
        if (d.nb)
            for (int i = 0; i < d.nb; ++i) d.a[d.ib() + i] = rng.uniform(-1, 1);
        d.b_ineq = rng.uniform(-0.1, 0.5);
    }
    return d;
}

}  // namespace

TEST_CASE("staged backend matches the dense backend") {
    Rng rng(31337);
    int agreements = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const int N = 1 + static_cast<int>(rng.uniform() * 5);
        const int n = 1 + static_cast<int>(rng.uniform() * 3);
        const int m = 1 + static_cast<int>(rng.uniform() * 2);
        const bool border = rng.uniform() < 0.6;
        const bool term_eq = rng.uniform() < 0.5;
        const bool ineq = rng.uniform() < 0.4;
        StagedQpData d = random_staged(rng, N, n, m, border, term_eq, ineq);

        Mat H, E;
        Vec e;
        staged_to_dense(d, H, E, e);
        DenseKkt dense(H, d.g, E, e, d.lo, d.hi);
        if (d.has_ineq) dense.set_ineq(d.a, d.b_ineq);
        StagedKkt staged(d);

        const QpResult rd = solve_qp(dense);
        const QpResult rs = solve_qp(staged);
        // Degenerate instances may be classified singular by one backend and
        // infeasible by the other; what matters is agreement on solvability.
        REQUIRE((rd.status == QpStatus::optimal) == (rs.status == QpStatus::optimal));
        if (rd.status == QpStatus::optimal) {
            CHECK(objective(H, d.g, rs.z) == Catch::Approx(objective(H, d.g, rd.z)).margin(1e-8));
            CHECK((rs.z - rd.z).lpNorm<Eigen::Infinity>() < 1e-6);
            ++agreements;
        }
    }
    CHECK(agreements > 60);
}

TEST_CASE("warm starting reuses the optimal working set") {
    Rng rng(55);
    const Mat H = random_spd(rng, 5);
    Vec g(5), lo = Vec::Constant(5, -0.1), hi = Vec::Constant(5, 0.1);
    for (int i = 0; i < 5; ++i) g[i] = rng.uniform(-2, 2);
    DenseKkt qp(H, g, Mat(0, 5), Vec(0), lo, hi);
    const QpResult cold = solve_qp(qp);
    REQUIRE(cold.status == QpStatus::optimal);
    const QpResult warm = solve_qp(qp, &cold.fix, cold.ineq_active);
    REQUIRE(warm.status == QpStatus::optimal);
    CHECK((warm.z - cold.z).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(warm.iterations <= cold.iterations);
}

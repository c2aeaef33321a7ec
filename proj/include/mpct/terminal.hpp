#pragma once

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <vector>

#include "mpct/costs.hpp"
#include "mpct/model.hpp"

namespace mpct {

/// Discrete algebraic Riccati equation by fixed-point iteration from P = Q.
/// Throws on divergence (unstabilisable pair).
inline Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol = 1e-12,
                      int max_iter = 500000) {
    Mat P = Q;
    for (int it = 0; it < max_iter; ++it) {
        const Mat BtP = B.transpose() * P;
        const Mat G = (R + BtP * B).ldlt().solve(BtP * A);
        const Mat Pn = Q + A.transpose() * P * A - (BtP * A).transpose() * G;
        const double delta = (Pn - P).lpNorm<Eigen::Infinity>();
        P = Pn;
        if (P.lpNorm<Eigen::Infinity>() > 1e14)
            throw Error("solve_dare: iteration diverged (unstabilisable linearisation)");
        if (delta <= tol * std::max(1.0, P.lpNorm<Eigen::Infinity>())) return 0.5 * (P + P.transpose());
    }
    throw Error("solve_dare: no convergence");
}

/// LQR gain for u = u_r + K (x - x_r) given the DARE solution P.
inline Mat dlqr_gain(const Mat& A, const Mat& B, const Mat& R, const Mat& P) {
    const Mat BtP = B.transpose() * P;
    return -(R + BtP * B).ldlt().solve(BtP * A);
}

enum class TerminalMode { equality, quadratic };

struct QuadraticTerminal {
    Mat P;         ///< terminal weight, V^f = |x - x_r|_P^2
    Mat K;         ///< terminal feedback gain
    double alpha;  ///< level of the terminal set {V^f <= alpha}
};

struct TerminalCertification {
    double c_b = 0.0;  ///< ball radius contained in the terminal set
    double c_f = 0.0;  ///< terminal cost bound V^f <= c_f * lbar
    double viol_invariance = -kInf;
    double viol_decrease = -kInf;
    double viol_constraint = -kInf;
    double viol_cost_bound = -kInf;
    bool singleton = false;  ///< equality mode; ball-radius condition void,
                             ///< finite-time controllability regime assumed
    int samples = 0;
};

/**
 * @brief Terminal ingredients (k_f, V^f, terminal set) in two modes.
 *
 * Equality mode pins the terminal state to the reference with V^f = 0.
 * Quadratic mode designs per-reference LQR ingredients lazily: the stage
 * weights are doubled so the linear decrease has margin against the
 * nonlinearity, the level alpha is the largest value that keeps the set
 * inside the constraints (exact) and preserves decrease under the true
 * dynamics (bisection over sampled points). Designs are cached by the
 * reference quantised to a 1e-6 grid; the per-design sampling seed derives
 * from the same key, so results do not depend on cache order.
 */
class TerminalIngredients {
public:
    TerminalIngredients(TerminalMode mode, SystemModel model, StageCost sc, ConstraintSet cs,
                        int design_samples = 1000)
        : mode_(mode), model_(std::move(model)), sc_(std::move(sc)), cs_(std::move(cs)),
          design_samples_(design_samples) {}

    TerminalMode mode() const { return mode_; }
    const SystemModel& model() const { return model_; }
    const StageCost& stage_cost_weights() const { return sc_; }

    /// Designs (or fetches) the quadratic ingredients at r. Inputs slightly
    /// off the equilibrium manifold (solver iterates) are projected first;
    /// the cache key is the projected reference quantised to 1e-6.
    QuadraticTerminal design(const Reference& r) const {
        if (mode_ != TerminalMode::quadratic)
            throw Error("TerminalIngredients: design requested in equality mode");
        Reference rp = r;
        if (auto proj = project_to_manifold(model_, r.x_r, r.u_r)) rp = *proj;
        const auto key = quantize(rp);
        {
            std::shared_lock lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        QuadraticTerminal qt = design_uncached(rp, seed_from(key));
        std::unique_lock lock(mu_);
        return cache_.emplace(key, std::move(qt)).first->second;
    }

    double value(const Vec& x, const Reference& r) const {
        if (mode_ == TerminalMode::equality) return 0.0;
        const QuadraticTerminal qt = design(r);
        const Vec d = x - r.x_r;
        return d.dot(qt.P * d);
    }

    /// Terminal control law; throws when x lies outside the terminal set.
    Vec terminal_control(const Vec& x, const Reference& r) const {
        if (mode_ == TerminalMode::equality) {
            if ((x - r.x_r).norm() > 1e-8)
                throw Error("terminal_control: state outside the singleton terminal set");
            return r.u_r;
        }
        const QuadraticTerminal qt = design(r);
        const Vec d = x - r.x_r;
        if (d.dot(qt.P * d) > qt.alpha * (1.0 + 1e-8) + 1e-14)
            throw Error("terminal_control: state outside the terminal set");
        return r.u_r + qt.K * d;
    }

    bool in_terminal_set(const Vec& x, const Reference& r, double tol = 1e-9) const {
        if (mode_ == TerminalMode::equality) return (x - r.x_r).norm() <= tol;
        const QuadraticTerminal qt = design(r);
        const Vec d = x - r.x_r;
        return d.dot(qt.P * d) <= qt.alpha + tol;
    }

    /// Sample-based certificate of invariance, decrease, constraint
    /// satisfaction and the terminal cost bound against the true dynamics.
    TerminalCertification certify(const Reference& r, int samples = 1000,
                                  std::uint64_t seed = 1234) const {
        TerminalCertification cert;
        cert.samples = samples;
        if (mode_ == TerminalMode::equality) {
            cert.singleton = true;
            cert.c_b = 0.0;
            cert.c_f = 0.0;
            cert.viol_invariance = equilibrium_residual(model_, r);
            cert.viol_decrease = 0.0;
            cert.viol_constraint = cs_.Z.violation(r.stacked());
            cert.viol_cost_bound = 0.0;
            return cert;
        }
        const QuadraticTerminal qt = design(r);
        Eigen::SelfAdjointEigenSolver<Mat> es(qt.P);
        const Mat L = es.operatorInverseSqrt();
        cert.c_b = std::sqrt(qt.alpha / es.eigenvalues().maxCoeff());
        cert.c_f = es.eigenvalues().maxCoeff() / sc_.q_min;
        Rng rng(seed);
        const int n = model_.n;
        for (int s = 0; s < samples; ++s) {
            const double radius = s % 4 == 0 ? 1.0 : std::pow(rng.uniform(), 1.0 / n);
            const Vec x = r.x_r + std::sqrt(qt.alpha) * radius * (L * rng.direction(n));
            const Vec u = r.u_r + qt.K * (x - r.x_r);
            const Vec xp = discretize_step(model_, x, u);
            const Vec dp = xp - r.x_r;
            const double v = (x - r.x_r).dot(qt.P * (x - r.x_r));
            const double vp = dp.dot(qt.P * dp);
            cert.viol_invariance = std::max(cert.viol_invariance, vp - qt.alpha);
            cert.viol_decrease = std::max(cert.viol_decrease, vp - v + stage_cost(sc_, x, u, r));
            Vec zu(n + model_.m);
            zu << x, u;
            cert.viol_constraint = std::max(cert.viol_constraint, cs_.Z.violation(zu));
            cert.viol_cost_bound =
                std::max(cert.viol_cost_bound, v - cert.c_f * min_input_cost(sc_, cs_, x, r));
        }
        return cert;
    }

private:
    using Key = std::vector<std::int64_t>;

    Key quantize(const Reference& r) const {
        const Vec z = r.stacked();
        Key k(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            k[i] = static_cast<std::int64_t>(std::llround(z[i] * 1e6));
        return k;
    }

    static std::uint64_t seed_from(const Key& k) {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (const auto v : k) {
            std::uint64_t u;
            std::memcpy(&u, &v, sizeof u);
            for (int b = 0; b < 8; ++b) {
                h ^= (u >> (8 * b)) & 0xff;
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    QuadraticTerminal design_uncached(const Reference& r, std::uint64_t seed) const {
        Mat A, B;
        discrete_jacobian(model_, r.x_r, r.u_r, A, B);
        QuadraticTerminal qt;
        // Doubled weights buy a decrease margin of one full stage cost.
        qt.P = solve_dare(A, B, 2.0 * sc_.Q, 2.0 * sc_.R);
        qt.K = dlqr_gain(A, B, 2.0 * sc_.R, qt.P);

        // Largest level satisfying the constraint condition exactly.
        const Mat Pinv = qt.P.llt().solve(Mat::Identity(model_.n, model_.n));
        double alpha_box = kInf;
        const Box xb = cs_.state_box();
        const Box ub = cs_.input_box();
        for (int i = 0; i < model_.n; ++i) {
            const double spread = Pinv(i, i);
            if (spread <= 0) continue;
            const double room = std::min(xb.hi[i] - r.x_r[i], r.x_r[i] - xb.lo[i]);
            alpha_box = std::min(alpha_box, room * room / spread);
        }
        for (int i = 0; i < model_.m; ++i) {
            const Vec ki = qt.K.row(i).transpose();
            const double spread = ki.dot(Pinv * ki);
            if (spread <= 1e-300) continue;
            const double room = std::min(ub.hi[i] - r.u_r[i], r.u_r[i] - ub.lo[i]);
            alpha_box = std::min(alpha_box, room * room / spread);
        }
        if (!std::isfinite(alpha_box)) alpha_box = 1.0;

        // Bisect on the decrease condition under the true dynamics.
        Eigen::SelfAdjointEigenSolver<Mat> es(qt.P);
        const Mat L = es.operatorInverseSqrt();
        auto decrease_ok = [&](double alpha) {
            Rng rng(seed);
            const int n = model_.n;
            for (int s = 0; s < design_samples_; ++s) {
                const double radius = s % 2 == 0 ? 1.0 : std::pow(rng.uniform(), 1.0 / n);
                const Vec d = std::sqrt(alpha) * radius * (L * rng.direction(n));
                const Vec x = r.x_r + d;
                const Vec u = r.u_r + qt.K * d;
                const Vec dp = discretize_step(model_, x, u) - r.x_r;
                const double vp = dp.dot(qt.P * dp);
                const double v = d.dot(qt.P * d);
                if (vp - v + stage_cost(sc_, x, u, r) > 1e-12 * std::max(1.0, alpha)) return false;
                if (vp > v + 1e-12 * std::max(1.0, alpha)) return false;
            }
            return true;
        };
        if (decrease_ok(alpha_box)) {
            qt.alpha = alpha_box;
        } else {
            double lo = 0.0, hi = alpha_box;
            for (int it = 0; it < 80 && (hi - lo) > 1e-6 * hi; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (decrease_ok(mid)) lo = mid;
                else hi = mid;
            }
            qt.alpha = lo;
        }
        if (qt.alpha < 1e-12)
            throw Error("terminal design: level collapsed, no invariant neighbourhood found");
        return qt;
    }

    TerminalMode mode_;
    SystemModel model_;
    StageCost sc_;
    ConstraintSet cs_;
    int design_samples_;
    mutable std::shared_mutex mu_;
    mutable std::map<Key, QuadraticTerminal> cache_;
};

}  // namespace mpct

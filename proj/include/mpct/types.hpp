#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace mpct {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Scenario/configuration errors; carries a "file:line:" anchor when parsed from a file.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Dynamics produced a non-finite state; carries the offending point.
class DynamicsBlowup : public Error {
public:
    DynamicsBlowup(const std::string& msg, Vec x, Vec u)
        : Error(msg), x(std::move(x)), u(std::move(u)) {}
    Vec x, u;
};

/// Axis-aligned box, possibly unbounded per coordinate.
struct Box {
    Vec lo, hi;

    Box() = default;
    Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
        if (lo.size() != hi.size()) throw Error("Box: bound dimension mismatch");
        for (Eigen::Index i = 0; i < lo.size(); ++i)
            if (lo[i] > hi[i]) throw Error("Box: lower bound exceeds upper bound");
    }

    Eigen::Index dim() const { return lo.size(); }

    bool contains(const Vec& v, double tol = 0.0) const {
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (v[i] < lo[i] - tol || v[i] > hi[i] + tol) return false;
        return true;
    }

    Vec clamp(const Vec& v) const {
        return v.cwiseMax(lo).cwiseMin(hi);
    }

    bool finite() const {
        return lo.allFinite() && hi.allFinite();
    }

    Vec center() const { return 0.5 * (lo + hi); }

    /// Sub-box over coordinates [begin, begin+len).
    Box segment(Eigen::Index begin, Eigen::Index len) const {
        return Box(lo.segment(begin, len), hi.segment(begin, len));
    }

    /// Largest violation of v against the box (0 when inside).
    double violation(const Vec& v) const {
        double w = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            w = std::max({w, lo[i] - v[i], v[i] - hi[i]});
        return w;
    }
};

/// Deterministic RNG. Raw mt19937_64 output is mapped to doubles directly so
/// that streams do not depend on the standard library's distribution details.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        spare_ = rad * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return rad * std::cos(2.0 * M_PI * u2);
    }

    Vec vector_in(const Box& box) {
        Vec v(box.dim());
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = uniform(box.lo[i], box.hi[i]);
        return v;
    }

    /// Uniform direction on the unit sphere in R^d.
    Vec direction(Eigen::Index d) {
        Vec v(d);
        double nrm = 0.0;
        while (nrm < 1e-12) {
            for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
            nrm = v.norm();
        }
        return v / nrm;
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mpct

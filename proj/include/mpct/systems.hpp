#pragma once

#include <cmath>

#include "mpct/model.hpp"

namespace mpct {

/// Scalar integrator x+ = x + u (discrete map).
inline SystemModel make_scalar_integrator() {
    SystemModel s;
    s.n = 1;
    s.m = 1;
    s.name = "scalar_integrator";
    s.continuous = false;
    s.rhs = [](const Vec& x, const Vec& u) {
        Vec r(1);
        r[0] = x[0] + u[0];
        return r;
    };
    s.rhs_jac = [](const Vec&, const Vec&, Mat& A, Mat& B) {
        A = Mat::Ones(1, 1);
        B = Mat::Ones(1, 1);
    };
    return s;
}

/**
 * @brief Continuous stirred-tank reactor benchmark (scaled to [0,1]^2).
 *
 * States: reactant concentration x1 and temperature x2; input: coolant flow.
 *   dx1 = (1 - x1)/theta - k x1 exp(-M/x2)
 *   dx2 = (xf - x2)/theta + k x1 exp(-M/x2) - a u (x2 - xc)
 */
inline SystemModel make_cstr(double sampling_time = 0.1, Integrator scheme = Integrator::euler) {
    SystemModel s;
    s.n = 2;
    s.m = 1;
    s.name = "cstr";
    s.continuous = true;
    s.h = sampling_time;
    s.scheme = scheme;
    s.params = {{"theta", 20.0}, {"k", 300.0},    {"M", 5.0},
                {"xf", 0.3947},  {"xc", 0.3816},  {"a", 0.117}};
    const double theta = 20.0, k = 300.0, M = 5.0, xf = 0.3947, xc = 0.3816, a = 0.117;
    s.rhs = [=](const Vec& x, const Vec& u) {
        const double E = x[1] > 1e-10 ? std::exp(-M / x[1]) : 0.0;
        Vec g(2);
        g[0] = (1.0 - x[0]) / theta - k * x[0] * E;
        g[1] = (xf - x[1]) / theta + k * x[0] * E - a * u[0] * (x[1] - xc);
        return g;
    };
    s.rhs_jac = [=](const Vec& x, const Vec& u, Mat& A, Mat& B) {
        const double E = x[1] > 1e-10 ? std::exp(-M / x[1]) : 0.0;
        const double dE = x[1] > 1e-10 ? E * M / (x[1] * x[1]) : 0.0;
        A.resize(2, 2);
        B.resize(2, 1);
        A(0, 0) = -1.0 / theta - k * E;
        A(0, 1) = -k * x[0] * dE;
        A(1, 0) = k * E;
        A(1, 1) = -1.0 / theta + k * x[0] * dE - a * u[0];
        B(0, 0) = 0.0;
        B(1, 0) = -a * (x[1] - xc);
    };
    return s;
}

}  // namespace mpct

#pragma once

#include <memory>

#include "mpct/ocp.hpp"
#include "mpct/reference.hpp"
#include "mpct/systems.hpp"

namespace mpct::testing {

inline Vec vN(std::initializer_list<double> vals) {
    Vec v(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (double x : vals) v[i++] = x;
    return v;
}

struct Setup {
    SystemModel model;
    ConstraintSet cs;
    StageCost sc;
    OffsetCost offset;
    Reference r_d;
};

/// Scalar system x+ = x + u with the unit quadratic costs and x0-scaled boxes.
inline Setup scalar_setup() {
    Setup s;
    s.model = make_scalar_integrator();
    s.cs = ConstraintSet(1, 1, Box(vN({-2, -1}), vN({2, 1})),
                         Box(vN({-1.9, -0.9}), vN({1.9, 0.9})));
    s.sc = StageCost(Mat::Identity(1, 1), Mat::Identity(1, 1));
    s.offset = OffsetCost(Mat::Identity(1, 1), Mat::Identity(1, 1), vN({0}), vN({0}));
    s.r_d = Reference{vN({0}), vN({0})};
    return s;
}

/// CSTR benchmark with the weights from the case study.
inline Setup cstr_setup() {
    Setup s;
    s.model = make_cstr();
    s.cs = ConstraintSet(2, 1, Box(vN({0, 0, 0}), vN({1, 1, 2})),
                         Box(vN({0.0529, 0.43, 0.1366}), vN({0.9492, 0.86, 0.7687})));
    Mat Sx(2, 2);
    Sx << 0.01, 0, 0, 1000;
    s.sc = StageCost(Mat::Identity(2, 2), 0.01 * Mat::Identity(1, 1));
    s.offset = OffsetCost(Sx, Mat::Identity(1, 1), vN({0.2632, 0.6519}), vN({0.7583}));
    s.r_d = best_reachable_reference(s.model, s.cs, s.offset).r;
    return s;
}

inline OcpSpec tracking_spec(const Setup& s, int N, ScalingFn scaling,
                             TerminalMode tm = TerminalMode::equality) {
    OcpSpec spec;
    spec.model = s.model;
    spec.cs = s.cs;
    spec.sc = s.sc;
    spec.offset = s.offset;
    spec.scaling = scaling;
    spec.terminal = std::make_shared<TerminalIngredients>(tm, s.model, s.sc, s.cs);
    spec.N = N;
    spec.mode = OcpMode::tracking;
    return spec;
}

inline OcpSpec standard_spec(const Setup& s, int N, TerminalMode tm = TerminalMode::equality) {
    OcpSpec spec;
    spec.model = s.model;
    spec.cs = s.cs;
    spec.sc = s.sc;
    spec.offset = s.offset;
    spec.scaling = ScalingFn::linear();
    spec.terminal = std::make_shared<TerminalIngredients>(tm, s.model, s.sc, s.cs);
    spec.N = N;
    spec.mode = OcpMode::standard;
    spec.r_fixed = s.r_d;
    return spec;
}

}  // namespace mpct::testing

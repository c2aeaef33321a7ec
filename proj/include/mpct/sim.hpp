#pragma once

#include <limits>
#include <vector>

#include "mpct/ocp.hpp"

namespace mpct {

struct SimStep {
    int t = 0;
    Vec x, u;     ///< state and applied input u = mu_N(x(t))
    Reference r;  ///< optimal artificial reference r*_N(x(t))
    double value = 0.0;       ///< V_N(x(t)) (or W_N in standard mode)
    double stage = 0.0;       ///< l(x, u, r*)
    double ref_offset = 0.0;  ///< |r* - r_d| over the stacked pair
    SolveStatus status = SolveStatus::optimal;
    int sqp_iters = 0;
    double candidate_objective = std::numeric_limits<double>::quiet_NaN();
};

/**
 * @brief Closed-loop log over K transitions: K+1 rows, each carrying the
 * solve at x(t); the last row's input is computed but never applied.
 */
struct SimTrace {
    std::vector<SimStep> steps;
    Reference r_d;
    bool completed = false;
    int first_failure = -1;  ///< step index of the first non-optimal solve

    int transitions() const { return static_cast<int>(steps.size()) - 1; }
    std::vector<Vec> states() const {
        std::vector<Vec> xs;
        xs.reserve(steps.size());
        for (const auto& s : steps) xs.push_back(s.x);
        return xs;
    }
    std::vector<Vec> inputs() const {
        std::vector<Vec> us;
        us.reserve(steps.size());
        for (const auto& s : steps) us.push_back(s.u);
        return us;
    }
};

namespace detail {

/// Shifts a QP working set one stage to the left; the new final stage and
/// the border keep their codes.
inline FixCodes shift_fix_codes(const FixCodes& fix, const StagedQpData& layout) {
    if (fix.empty()) return fix;
    FixCodes out(fix.size(), 0);
    const int n = layout.n, m = layout.m, N = layout.N;
    for (int k = 0; k + 1 <= N; ++k) {
        if (k + 1 < N)
            for (int i = 0; i < n + m; ++i) out[layout.ix(k) + i] = fix[layout.ix(k + 1) + i];
        else
            for (int i = 0; i < n; ++i) out[layout.ix(k) + i] = fix[layout.ix(k + 1) + i];
    }
    for (int i = 0; i < n; ++i) out[layout.ix(N) + i] = fix[layout.ix(N) + i];
    for (int i = 0; i < layout.nb; ++i) out[layout.ib() + i] = fix[layout.ib() + i];
    return out;
}

}  // namespace detail

/**
 * @brief Receding-horizon closed loop: solve, apply the first input, advance.
 *
 * Each successor solve is warm started with the shifted input sequence
 * completed by the terminal controller and the unchanged artificial
 * reference. States are advanced with the exact discrete map, so logged
 * trajectories re-simulate bitwise.
 */
inline SimTrace run_closed_loop(const OcpSpec& spec, const Vec& x0, int K, const Reference& r_d,
                                const SolveOptions& opt = {}) {
    if (K > 0 && spec.N < 1) throw Error("run_closed_loop: need N >= 1 to generate inputs");
    SimTrace trace;
    trace.r_d = r_d;
    trace.completed = true;

    Vec x = x0;
    OcpWarmStart ws;
    bool have_warm = false;
    double cand_obj = std::numeric_limits<double>::quiet_NaN();

    for (int t = 0; t <= K; ++t) {
        const OcpSolution sol = solve(spec, x, have_warm ? &ws : nullptr, opt);
        SimStep step;
        step.t = t;
        step.x = x;
        step.r = sol.r_opt;
        step.value = sol.objective;
        step.status = sol.status;
        step.sqp_iters = sol.sqp_iters;
        step.ref_offset = ref_distance(sol.r_opt, r_d);
        step.candidate_objective = cand_obj;
        step.u = sol.u_seq.empty() ? sol.r_opt.u_r : sol.u_seq[0];
        step.stage = stage_cost(spec.sc, x, step.u, sol.r_opt);
        trace.steps.push_back(step);

        if (sol.status != SolveStatus::optimal) {
            trace.completed = false;
            trace.first_failure = t;
            if (t == 0) throw Error("run_closed_loop: problem infeasible at the initial state");
            break;
        }
        if (t == K) break;

        const Vec x_next = discretize_step(spec.model, x, step.u);

        // Shifted warm start: (u*(1..N-1), k_f(x*(N), r*)) with r unchanged.
        ws.u_seq.assign(spec.N, Vec());
        for (int k = 0; k + 1 < spec.N; ++k) ws.u_seq[k] = sol.u_seq[k + 1];
        Vec u_tail;
        try {
            u_tail = spec.terminal->terminal_control(sol.x_seq[spec.N], sol.r_opt);
        } catch (const Error&) {
            u_tail = sol.r_opt.u_r;
        }
        ws.u_seq[spec.N - 1] = spec.cs.input_box().clamp(u_tail);
        ws.x_seq.assign(spec.N + 1, Vec());
        ws.x_seq[0] = x_next;
        for (int k = 0; k < spec.N; ++k)
            ws.x_seq[k + 1] = discretize_step(spec.model, ws.x_seq[k], ws.u_seq[k]);
        ws.r = sol.r_opt;
        {
            StagedQpData layout;
            layout.N = spec.N;
            layout.n = spec.model.n;
            layout.m = spec.model.m;
            layout.nb = spec.mode == OcpMode::tracking ? spec.model.n + spec.model.m : 0;
            ws.active = detail::shift_fix_codes(sol.active, layout);
        }
        ws.ineq_active = sol.ineq_active;
        cand_obj = ocp_objective(spec, ws.x_seq, ws.u_seq, ws.r);
        have_warm = true;
        x = x_next;
    }
    return trace;
}

/**
 * @brief Smallest horizon at which the standard problem is feasible at x0,
 * found by doubling then bisection. Returns -1 when nothing up to n_max is.
 */
inline int smallest_feasible_horizon(const OcpSpec& standard_template, const Vec& x0,
                                     int n_max = 2048) {
    if (standard_template.mode != OcpMode::standard)
        throw Error("smallest_feasible_horizon: standard-mode spec required");
    auto feasible = [&](int N) {
        OcpSpec s = standard_template;
        s.N = N;
        return solve(s, x0).status == SolveStatus::optimal;
    };
    int lo = 0, hi = -1;
    for (int N = 1; N <= n_max; N *= 2) {
        if (feasible(N)) {
            hi = N;
            break;
        }
        lo = N;
    }
    if (hi < 0) return -1;
    while (hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        if (feasible(mid)) hi = mid;
        else lo = mid;
    }
    return hi;
}

/**
 * @brief Closed loop under standard MPC with a large horizon, used as the
 * infinite-horizon surrogate. Throws (naming the smallest feasible horizon)
 * when the requested horizon is infeasible at x0.
 */
inline SimTrace infinite_horizon_proxy(const OcpSpec& standard_template, const Vec& x0, int n_big,
                                       int K) {
    OcpSpec spec = standard_template;
    spec.N = n_big;
    spec.mode = OcpMode::standard;
    try {
        return run_closed_loop(spec, x0, K, spec.r_fixed);
    } catch (const Error&) {
        const int n_min = smallest_feasible_horizon(spec, x0);
        throw Error("infinite_horizon_proxy: horizon " + std::to_string(n_big) +
                    " infeasible at x0; smallest feasible horizon is " +
                    (n_min > 0 ? std::to_string(n_min) : std::string("beyond the search cap")));
    }
}

}  // namespace mpct

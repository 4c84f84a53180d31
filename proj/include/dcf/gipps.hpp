#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcf/trajectory.hpp"

namespace dcf::gipps {

/// Car-following parameters. Braking terms are negative (decelerations).
struct GippsParams {
    double a_max = 1.7;  // desired acceleration, m/s^2
    double b = -3.0;     // desired braking, m/s^2
    double b_hat = -3.5; // braking assumed of the lead, m/s^2
    double V = 13.9;     // desired speed, m/s
    double s_eff = 6.5;  // effective lead size + margin, m
    double tau = 1.0;    // reaction time, s

    void validate() const;
};

struct GippsState {
    double spacing = 0.0;  // m, lead position minus follower position
    double v_foll = 0.0;   // m/s
    double v_lead = 0.0;   // m/s
};

/// Follower speed one reaction time ahead: the minimum of the free
/// acceleration branch and the safe braking branch, floored at zero. A
/// negative square-root argument in the braking branch means no safe speed
/// exists and is treated as an emergency stop (returns 0).
double gipps_step(const GippsState& s, const GippsParams& p);

struct RolloutSetup {
    std::vector<double> lead_speeds;  // sampled at dt
    double initial_spacing = 20.0;    // m, must exceed s_eff
    double initial_foll_speed = 0.0;  // m/s
    double lead_start_pos = 100.0;    // m
    std::string pair_id = "gipps";
    PairClass cls = PairClass::HDV_HDV;
};

/// Simulates the follower against an observed lead speed profile. The
/// follower's target speed is re-decided every tau (which must be an integer
/// multiple of dt) and ramped linearly on the dt grid in between; positions
/// integrate trapezoidally. An empty profile yields an empty pair.
TrajectoryPair gipps_rollout(const RolloutSetup& setup, const GippsParams& p, double dt = 0.1);

/// One-step speed prediction on the window interface shared with the neural
/// models: the linear ramp toward gipps_step's target, advanced by dt.
double gipps_predict(const GippsState& s, const GippsParams& p, double dt);
double gipps_predict_window(const Window& w, int steps, const GippsParams& p, double dt);

struct GippsFit {
    GippsParams params;
    bool fallback = false;  // degenerate pair: preset means kept
    std::string note;       // human-readable fallback reason, empty otherwise
};

/// Per-pair least-squares fit of (a_max, V, b, s_eff) by coordinate grid
/// search over one-step prediction error; b_hat stays b - 0.5, tau stays at
/// its initial value.
GippsFit fit_gipps(const TrajectoryPair& pair, double dt = 0.1, const GippsParams& init = {});

}  // namespace dcf::gipps

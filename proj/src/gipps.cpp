#include "dcf/gipps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcf/common.hpp"

namespace dcf::gipps {

void GippsParams::validate() const {
    if (!(a_max > 0.0)) throw ConfigError("gipps a_max must be positive");
    if (!(b < 0.0)) throw ConfigError("gipps b must be negative");
    if (!(b_hat < 0.0)) throw ConfigError("gipps b_hat must be negative");
    if (!(V > 0.0)) throw ConfigError("gipps V must be positive");
    if (!(s_eff > 0.0)) throw ConfigError("gipps s_eff must be positive");
    if (!(tau > 0.0)) throw ConfigError("gipps tau must be positive");
}

double gipps_step(const GippsState& s, const GippsParams& p) {
    p.validate();
    const double v = s.v_foll;
    const double ratio = v / p.V;
    const double v_accel =
        v + 2.5 * p.a_max * p.tau * (1.0 - ratio) * std::sqrt(0.025 + ratio);

    const double btau = p.b * p.tau;
    const double arg = btau * btau -
                       p.b * (2.0 * (s.spacing - p.s_eff) - v * p.tau -
                              s.v_lead * s.v_lead / p.b_hat);
    if (arg < 0.0) return 0.0;  // no safe speed: emergency stop
    const double v_brake = btau + std::sqrt(arg);

    return std::max(0.0, std::min(v_accel, v_brake));
}

TrajectoryPair gipps_rollout(const RolloutSetup& setup, const GippsParams& p, double dt) {
    p.validate();
    if (!(dt > 0.0)) throw ConfigError("gipps rollout dt must be positive");
    const double steps_per_tau_real = p.tau / dt;
    const long steps_per_tau = std::lround(steps_per_tau_real);
    if (steps_per_tau < 1 || std::abs(steps_per_tau_real - steps_per_tau) > 1e-9)
        throw ConfigError("gipps tau must be an integer multiple of dt");

    TrajectoryPair pair;
    pair.pair_id = setup.pair_id;
    pair.cls = setup.cls;
    if (setup.lead_speeds.empty()) return pair;

    if (!(setup.initial_spacing > p.s_eff))
        throw ConfigError("gipps rollout initial spacing must exceed s_eff");

    const std::size_t n = setup.lead_speeds.size();
    std::vector<double> foll_speed(n);
    std::vector<double> lead_pos(n), foll_pos(n);

    foll_speed[0] = std::max(0.0, setup.initial_foll_speed);
    lead_pos[0] = setup.lead_start_pos;
    foll_pos[0] = setup.lead_start_pos - setup.initial_spacing;

    // Speed decided at the last decision point and its ramp target.
    double ramp_from = foll_speed[0];
    double ramp_to = foll_speed[0];
    std::size_t decision_index = 0;

    for (std::size_t i = 0; i < n; ++i) {
        if (i % static_cast<std::size_t>(steps_per_tau) == 0) {
            GippsState st;
            st.spacing = lead_pos[i] - foll_pos[i];
            st.v_foll = foll_speed[i];
            st.v_lead = setup.lead_speeds[i];
            ramp_from = foll_speed[i];
            ramp_to = gipps_step(st, p);
            decision_index = i;
        }
        if (i + 1 < n) {
            const double frac =
                static_cast<double>(i + 1 - decision_index) / static_cast<double>(steps_per_tau);
            foll_speed[i + 1] = std::max(0.0, ramp_from + (ramp_to - ramp_from) * frac);
            lead_pos[i + 1] =
                lead_pos[i] + 0.5 * dt * (setup.lead_speeds[i] + setup.lead_speeds[i + 1]);
            foll_pos[i + 1] = foll_pos[i] + 0.5 * dt * (foll_speed[i] + foll_speed[i + 1]);
        }
    }

    pair.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        TrajectoryPoint& pt = pair.points[i];
        pt.t = static_cast<double>(i) * dt;
        pt.lead_pos = lead_pos[i];
        pt.foll_pos = foll_pos[i];
        pt.lead_speed = setup.lead_speeds[i];
        pt.foll_speed = foll_speed[i];
        pt.spacing = lead_pos[i] - foll_pos[i];
        pt.speed_diff = foll_speed[i] - setup.lead_speeds[i];
    }
    if (pair.points.size() >= 3) pair = derive_kinematics(std::move(pair), dt);
    return pair;
}

double gipps_predict(const GippsState& s, const GippsParams& p, double dt) {
    const double target = gipps_step(s, p);
    return std::max(0.0, s.v_foll + (target - s.v_foll) * (dt / p.tau));
}

double gipps_predict_window(const Window& w, int steps, const GippsParams& p, double dt) {
    const std::size_t last = static_cast<std::size_t>(steps - 1) * kChannels;
    GippsState s;
    s.spacing = w.features[last + 0];
    s.v_lead = w.features[last + 1];
    s.v_foll = s.v_lead + w.features[last + 2];  // speed_diff = follower - lead
    return gipps_predict(s, p, dt);
}

namespace {

/// Mean squared one-step prediction error over a pair.
double fit_objective(const TrajectoryPair& pair, const GippsParams& p, double dt) {
    double sse = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < pair.points.size(); ++i) {
        const TrajectoryPoint& pt = pair.points[i];
        GippsState s{pt.spacing, pt.foll_speed, pt.lead_speed};
        const double pred = gipps_predict(s, p, dt);
        const double err = pred - pair.points[i + 1].foll_speed;
        sse += err * err;
        ++count;
    }
    if (count == 0) return std::numeric_limits<double>::infinity();
    return sse / static_cast<double>(count);
}

}  // namespace

GippsFit fit_gipps(const TrajectoryPair& pair, double dt, const GippsParams& init) {
    init.validate();
    GippsFit fit;
    fit.params = init;
    if (pair.points.size() < 2) {
        fit.fallback = true;
        fit.note = "pair '" + pair.pair_id + "' has fewer than 2 points; keeping preset means";
        return fit;
    }

    // Coordinate descent on a shrinking grid. Bounds are generous around
    // urban car-following magnitudes; b_hat rides along as b - 0.5.
    struct Coord {
        double GippsParams::*field;
        double lo, hi;
    };
    const Coord coords[] = {
        {&GippsParams::a_max, 0.3, 3.5},
        {&GippsParams::V, 3.0, 30.0},
        {&GippsParams::b, -6.0, -0.8},
        {&GippsParams::s_eff, 1.0, 15.0},
    };
    constexpr int kRounds = 3;
    constexpr int kGrid = 9;

    GippsParams best = init;
    best.a_max = std::clamp(best.a_max, coords[0].lo, coords[0].hi);
    best.V = std::clamp(best.V, coords[1].lo, coords[1].hi);
    best.b = std::clamp(best.b, coords[2].lo, coords[2].hi);
    best.s_eff = std::clamp(best.s_eff, coords[3].lo, coords[3].hi);
    best.b_hat = best.b - 0.5;
    double best_sse = fit_objective(pair, best, dt);

    double span_scale = 1.0;
    for (int round = 0; round < kRounds; ++round) {
        for (const Coord& c : coords) {
            const double center = best.*(c.field);
            const double span = (c.hi - c.lo) * 0.5 * span_scale;
            for (int g = 0; g < kGrid; ++g) {
                GippsParams cand = best;
                const double frac = static_cast<double>(g) / (kGrid - 1);  // 0..1
                cand.*(c.field) =
                    std::clamp(center - span + 2.0 * span * frac, c.lo, c.hi);
                cand.b_hat = cand.b - 0.5;
                const double sse = fit_objective(pair, cand, dt);
                if (sse < best_sse) {
                    best_sse = sse;
                    best = cand;
                }
            }
        }
        span_scale *= 0.35;
    }

    if (!std::isfinite(best_sse)) {
        fit.fallback = true;
        fit.note = "pair '" + pair.pair_id + "' produced no finite fit error; keeping preset means";
        return fit;
    }
    fit.params = best;
    return fit;
}

}  // namespace dcf::gipps

#include "dcf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dcf/common.hpp"

namespace dcf::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLeadAccelCap = 2.0;   // m/s^2, lead speed-up limit
constexpr double kLeadSpeedCap = 22.0;  // m/s

std::string pair_name(PairClass cls, int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return to_string(cls) + "-" + buf;
}

// Mean-reversion rate of the drive state, 1/s. Relaxation time ~8 s: the
// state wanders slowly enough to be inferable from recent behaviour.
constexpr double kDriveRate = 0.12;

/// Follower rollout with a wandering drive state. At every decision point a
/// multiplier m takes a mean-reverting random-walk step and scales the
/// acceleration-side parameters (desired acceleration, desired speed). The
/// braking side is untouched, so the safe-speed envelope — and with it the
/// collision-freedom argument of the steady rollout — is unchanged.
TrajectoryPair modulated_rollout(const gipps::RolloutSetup& setup, const gipps::GippsParams& p,
                                 double drive_var, Rng& rng, double dt) {
    p.validate();
    if (!(dt > 0.0)) throw ConfigError("rollout dt must be positive");
    const double steps_per_tau_real = p.tau / dt;
    const long steps_per_tau = std::lround(steps_per_tau_real);
    if (steps_per_tau < 1 || std::abs(steps_per_tau_real - steps_per_tau) > 1e-9)
        throw ConfigError("gipps tau must be an integer multiple of dt");

    TrajectoryPair pair;
    pair.pair_id = setup.pair_id;
    pair.cls = setup.cls;
    if (setup.lead_speeds.empty()) return pair;
    if (!(setup.initial_spacing > p.s_eff))
        throw ConfigError("rollout initial spacing must exceed s_eff");

    const std::size_t n = setup.lead_speeds.size();
    std::vector<double> foll_speed(n), lead_pos(n), foll_pos(n);
    foll_speed[0] = std::max(0.0, setup.initial_foll_speed);
    lead_pos[0] = setup.lead_start_pos;
    foll_pos[0] = setup.lead_start_pos - setup.initial_spacing;

    double ramp_from = foll_speed[0];
    double ramp_to = foll_speed[0];
    std::size_t decision_index = 0;
    double m = 1.0;

    for (std::size_t i = 0; i < n; ++i) {
        if (i % static_cast<std::size_t>(steps_per_tau) == 0) {
            m += kDriveRate * (1.0 - m) * p.tau + drive_var * std::sqrt(p.tau) * rng.normal();
            m = std::clamp(m, 0.55, 1.6);
            gipps::GippsParams pd = p;
            pd.a_max = p.a_max * m;
            pd.V = p.V * std::clamp(m, 0.8, 1.25);
            gipps::GippsState st;
            st.spacing = lead_pos[i] - foll_pos[i];
            st.v_foll = foll_speed[i];
            st.v_lead = setup.lead_speeds[i];
            ramp_from = foll_speed[i];
            ramp_to = gipps::gipps_step(st, pd);
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
    return pair;
}

}  // namespace

void ScenarioPreset::validate() const {
    mean.validate();
    if (jitter < 0.0 || jitter > 0.5) throw ConfigError("preset jitter must be in [0, 0.5]");
    if (drive_var < 0.0 || drive_var > 1.0)
        throw ConfigError("preset drive_var must be in [0, 1]");
    if (noise_std < 0.0) throw ConfigError("preset noise_std must be >= 0");
    if (!(base_speed > 0.0) || speed_amp < 0.0)
        throw ConfigError("preset lead speed levels must be positive");
    if (!(min_duration > 1.0) || max_duration < min_duration)
        throw ConfigError("preset duration range is invalid");
    if (stop_prob < 0.0 || stop_prob > 1.0) throw ConfigError("preset stop_prob must be in [0, 1]");
    if (!(lead_decel_cap() > 0.0))
        throw ConfigError("preset b_hat too mild: no room for a safe lead braking cap");
}

double ScenarioPreset::lead_decel_cap() const {
    // Mildest braking assumption any jittered follower can hold, minus some
    // slack; the lead never brakes harder than this.
    return -mean.b_hat * (1.0 - jitter) - 0.2;
}

std::vector<ScenarioPreset> default_presets() {
    std::vector<ScenarioPreset> presets(3);

    // Human follower behind a human lead: assertive gains, strong lead
    // oscillation, wandering attention, noisy speed tracking.
    presets[0].cls = PairClass::HDV_HDV;
    presets[0].mean = {1.9, -3.2, -3.7, 13.5, 5.5, 0.5};
    presets[0].jitter = 0.15;
    presets[0].drive_var = 0.21;
    presets[0].noise_std = 0.05;
    presets[0].speed_amp = 3.2;

    // Human follower behind an automated lead: the lead drives smoothly.
    presets[1].cls = PairClass::HDV_AV;
    presets[1].mean = {1.8, -3.1, -3.6, 13.5, 5.8, 0.5};
    presets[1].jitter = 0.15;
    presets[1].drive_var = 0.168;
    presets[1].noise_std = 0.04;
    presets[1].speed_amp = 1.8;
    presets[1].stop_prob = 0.15;

    // Automated follower behind a human lead: gentle acceleration and
    // braking, longer effective gap, steady controller, little speed noise.
    presets[2].cls = PairClass::AV_HDV;
    presets[2].mean = {1.1, -2.4, -2.9, 13.0, 7.5, 0.5};
    presets[2].jitter = 0.15;
    presets[2].drive_var = 0.014;
    presets[2].noise_std = 0.015;
    presets[2].speed_amp = 3.2;

    return presets;
}

gipps::GippsParams sample_params(const ScenarioPreset& preset, Rng& rng) {
    const auto jitter = [&](double v) { return v * (1.0 + preset.jitter * rng.uniform(-1.0, 1.0)); };
    gipps::GippsParams p = preset.mean;
    p.a_max = jitter(p.a_max);
    p.V = jitter(p.V);
    p.b = jitter(p.b);
    p.b_hat = jitter(p.b_hat);
    p.s_eff = jitter(p.s_eff);
    p.validate();
    return p;
}

std::vector<double> make_lead_profile(const ScenarioPreset& preset, Rng& rng, double dt) {
    preset.validate();
    const double duration = rng.uniform(preset.min_duration, preset.max_duration);
    const std::size_t n = static_cast<std::size_t>(std::lround(duration / dt)) + 1;

    const double base = rng.uniform(preset.base_speed - 1.5, preset.base_speed + 1.5);
    const double a1 = preset.speed_amp * rng.uniform(0.5, 1.0);
    const double p1 = rng.uniform(18.0, 30.0);
    const double ph1 = rng.uniform(0.0, 2.0 * kPi);
    const double a2 = preset.speed_amp * rng.uniform(0.15, 0.4);
    const double p2 = rng.uniform(5.0, 11.0);
    const double ph2 = rng.uniform(0.0, 2.0 * kPi);

    std::vector<double> desired(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        desired[i] = base + a1 * std::sin(2.0 * kPi * t / p1 + ph1) +
                     a2 * std::sin(2.0 * kPi * t / p2 + ph2);
        desired[i] = std::clamp(desired[i], 0.0, kLeadSpeedCap);
    }

    if (rng.uniform() < preset.stop_prob) {
        const double t_stop = duration * rng.uniform(0.35, 0.55);
        const double dwell = rng.uniform(2.0, 5.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) * dt;
            if (t >= t_stop && t <= t_stop + dwell) desired[i] = 0.0;
        }
    }

    // Rate-limit so the realized braking never reaches any follower's
    // assumed lead braking b_hat.
    const double decel_cap = preset.lead_decel_cap();
    std::vector<double> speeds(n);
    speeds[0] = desired[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double lo = speeds[i - 1] - decel_cap * dt;
        const double hi = speeds[i - 1] + kLeadAccelCap * dt;
        speeds[i] = std::max(0.0, std::clamp(desired[i], lo, hi));
    }
    return speeds;
}

std::vector<TrajectoryPair> generate_synthetic_dataset(
    const std::vector<ScenarioPreset>& presets, int n_pairs_per_class, std::uint64_t seed,
    double dt) {
    if (n_pairs_per_class < 0) throw ConfigError("n_pairs_per_class must be >= 0");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    for (const ScenarioPreset& p : presets) p.validate();

    std::vector<TrajectoryPair> pairs;
    pairs.reserve(presets.size() * static_cast<std::size_t>(n_pairs_per_class));

    for (std::size_t ci = 0; ci < presets.size(); ++ci) {
        const ScenarioPreset& preset = presets[ci];
        for (int i = 0; i < n_pairs_per_class; ++i) {
            // Every pair owns a seed partition: generation order cannot
            // change any pair's content.
            Rng rng(stage_seed(seed, "pair", ci * 1000000ull + static_cast<std::uint64_t>(i)));

            const gipps::GippsParams params = sample_params(preset, rng);
            gipps::RolloutSetup setup;
            setup.lead_speeds = make_lead_profile(preset, rng, dt);
            setup.initial_spacing = params.s_eff + rng.uniform(10.0, 25.0);
            setup.initial_foll_speed = std::min(setup.lead_speeds.front(), params.V);
            // Start inside the safe-speed envelope so the braking-assumption
            // guarantee holds from the first decision onward.
            const gipps::GippsState start{setup.initial_spacing, setup.initial_foll_speed,
                                          setup.lead_speeds.front()};
            setup.initial_foll_speed =
                std::min(setup.initial_foll_speed, gipps::gipps_step(start, params));
            setup.lead_start_pos = 100.0;
            setup.pair_id = pair_name(preset.cls, i);
            setup.cls = preset.cls;

            // With a steady drive state the pair is exactly a static-parameter
            // rollout; otherwise the drive state wanders between decisions.
            TrajectoryPair pair = preset.drive_var > 0.0
                                      ? modulated_rollout(setup, params, preset.drive_var, rng, dt)
                                      : gipps_rollout(setup, params, dt);

            // Measurement-style noise on the follower speed; positions are
            // re-integrated so the kinematics stay self-consistent.
            if (preset.noise_std > 0.0) {
                for (std::size_t k = 1; k < pair.points.size(); ++k) {
                    double v = pair.points[k].foll_speed + rng.normal(0.0, preset.noise_std);
                    pair.points[k].foll_speed = std::max(0.0, v);
                }
                for (std::size_t k = 1; k < pair.points.size(); ++k)
                    pair.points[k].foll_pos =
                        pair.points[k - 1].foll_pos +
                        0.5 * dt * (pair.points[k - 1].foll_speed + pair.points[k].foll_speed);
            }
            if (pair.points.size() >= 3) pair = derive_kinematics(std::move(pair), dt);
            pairs.push_back(std::move(pair));
        }
    }
    return pairs;
}

}  // namespace dcf::synth

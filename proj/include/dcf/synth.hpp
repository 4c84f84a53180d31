#pragma once

#include <cstdint>
#include <vector>

#include "dcf/gipps.hpp"
#include "dcf/trajectory.hpp"

namespace dcf::synth {

/// Recipe for one pair class: parameter means with relative jitter, a lead
/// speed profile family (slow + fast sinusoid with optional full stops),
/// follower speed noise, and a wandering per-pair drive state (human
/// followers drift between eager and relaxed over tens of seconds; automated
/// followers hold steady). The per-class defaults are engineered so AV
/// followers drive measurably smoother than HDV followers.
struct ScenarioPreset {
    PairClass cls = PairClass::HDV_HDV;
    gipps::GippsParams mean;
    double jitter = 0.10;       // relative jitter on a_max, V, b, b_hat, s_eff
    double drive_var = 0.0;     // follower drive-state wander per decision (0 = steady)
    double noise_std = 0.15;    // Gaussian follower speed noise, m/s
    double base_speed = 10.0;   // m/s, lead cruise level
    double speed_amp = 3.0;     // m/s, lead oscillation amplitude scale
    double min_duration = 30.0; // s
    double max_duration = 45.0; // s
    double stop_prob = 0.25;    // chance the lead performs a full stop

    void validate() const;

    /// Hardest braking the generated lead may realize. Kept strictly milder
    /// than any jittered b_hat so the follower's braking assumption always
    /// covers the lead's actual behaviour.
    double lead_decel_cap() const;
};

std::vector<ScenarioPreset> default_presets();

/// n_pairs_per_class rollouts per preset, Gaussian noise on follower speeds,
/// positions re-integrated so kinematics stay consistent. Each pair draws
/// from its own seed partition, so generation order cannot matter.
std::vector<TrajectoryPair> generate_synthetic_dataset(
    const std::vector<ScenarioPreset>& presets, int n_pairs_per_class, std::uint64_t seed,
    double dt = 0.1);

/// Randomized lead speed profile for one scenario (exposed for rollout
/// safety tests).
std::vector<double> make_lead_profile(const ScenarioPreset& preset, Rng& rng, double dt);

/// Gipps parameters jittered around the preset means (exposed for tests).
gipps::GippsParams sample_params(const ScenarioPreset& preset, Rng& rng);

}  // namespace dcf::synth

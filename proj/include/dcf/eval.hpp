#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcf/gipps.hpp"
#include "dcf/nn.hpp"
#include "dcf/trajectory.hpp"

namespace dcf::eval {

// ---------------------------------------------------------------------------
// One-step prediction error
// ---------------------------------------------------------------------------

double rmse(std::span<const double> pred, std::span<const double> target);

/// Batch predictor over window indices; returns m/s speeds aligned with idx.
using Predictor = std::function<std::vector<double>(const WindowSet& set,
                                                    const std::vector<std::size_t>& idx)>;

/// Wraps a trained network: normalizes window features, runs the forward
/// pass in inference mode, denormalizes the outputs.
Predictor make_network_predictor(const nn::NetworkSpec& spec, const nn::Weights& w,
                                 const NormalizationSpec& norm);

/// Wraps per-pair fitted Gipps parameters (aligned with set.pair_ids).
Predictor make_gipps_predictor(std::vector<gipps::GippsParams> per_pair, double dt);

struct GroupedRmse {
    double overall = 0.0;
    std::array<std::optional<double>, kNumClasses> by_class;  // empty class -> nullopt
    std::vector<std::string> warnings;
};

GroupedRmse rmse_by_group(std::span<const double> pred_ms, const WindowSet& set,
                          const std::vector<std::size_t>& idx);

// ---------------------------------------------------------------------------
// Closed-loop rollout and TTC
// ---------------------------------------------------------------------------

/// One-step controller on raw (m, m/s) feature windows laid out like
/// Window::features; returns the next follower speed in m/s.
using StepPredictor = std::function<double(const std::vector<double>& window_features)>;

StepPredictor make_network_step(const nn::NetworkSpec& spec, const nn::Weights& w,
                                const NormalizationSpec& norm, int steps);
StepPredictor make_gipps_step(const gipps::GippsParams& params, double dt);

struct ClosedLoopResult {
    std::vector<double> t;           // simulated steps only
    std::vector<double> foll_speed;  // m/s, clamped >= 0
    std::vector<double> foll_pos;    // m
    std::vector<double> spacing;     // m
    std::vector<double> ttc;         // s, +inf when not closing
    double min_ttc = 0.0;            // +inf when never closing
    bool collision = false;          // spacing <= 0 occurred; min_ttc forced to 0
};

/// Replays the observed lead, warm-starts the follower from `steps` observed
/// points, then feeds the model its own simulated state; positions integrate
/// trapezoidally. Simulates at most `horizon` steps.
ClosedLoopResult closed_loop_rollout(const StepPredictor& model, const TrajectoryPair& pair,
                                     int steps, std::size_t horizon = SIZE_MAX,
                                     double dt = 0.1);

/// Minimum observed-time-to-collision from step `from_step` on, for
/// comparison against closed-loop results.
double observed_min_ttc(const TrajectoryPair& pair, std::size_t from_step);

// ---------------------------------------------------------------------------
// Compute metering
// ---------------------------------------------------------------------------

struct MeteringResult {
    std::string model;
    std::uint64_t macs_per_sample = 0;  // analytic, exact
    std::size_t batch = 0;
    int repetitions = 0;
    double wall_median_us = 0.0;  // per full-batch inference pass
    double wall_iqr_us = 0.0;
    double us_per_10k = 0.0;      // median scaled to 10k inferences
    long peak_rss_kb = -1;        // process peak RSS, -1 if unavailable
};

/// Times `repetitions` full-batch inference passes (after one warm-up pass)
/// and reports the median and IQR alongside the closed-form multiply-add
/// count.
MeteringResult compute_metering(const nn::NetworkSpec& spec, const nn::Weights& w,
                                const NormalizedData& batch, int steps, int repetitions = 5);

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct NamedPredictor {
    std::string name;
    Predictor fn;
};

struct PairRmseRow {
    std::string pair_id;
    PairClass cls = PairClass::HDV_HDV;
    std::vector<std::optional<double>> rmse;  // per model; nullopt if no windows
};

struct MinTtcRow {
    std::string model;
    std::string pair_id;
    PairClass cls = PairClass::HDV_HDV;
    double min_ttc = 0.0;
    bool collision = false;
};

struct EvalReport {
    std::vector<std::string> model_names;
    std::vector<double> overall_rmse;  // per model, test windows
    std::vector<std::array<std::optional<double>, kNumClasses>> class_rmse;  // per model
    std::vector<PairRmseRow> pair_rows;
    std::vector<MinTtcRow> min_ttc_rows;
    std::vector<MeteringResult> metering;
    std::vector<std::string> warnings;
    std::string dataset_hash;
};

/// One-step metrics (overall/class/pair RMSE) for every model over the given
/// test window indices.
EvalReport evaluate_models(const std::vector<NamedPredictor>& models, const WindowSet& set,
                           const std::vector<std::size_t>& test_idx);

/// Per pair per model: CSV of (t, observed, predicted) teacher-forced speed
/// series. Returns the created file paths in deterministic order.
std::vector<std::string> speed_profile_export(const std::vector<NamedPredictor>& models,
                                              const WindowSet& set, const std::string& out_dir);

void write_eval_report_json(const std::string& path, const EvalReport& report);
void write_class_rmse_csv(const std::string& path, const EvalReport& report);  // model x class
void write_min_ttc_csv(const std::string& path, const EvalReport& report);     // model x pair TTC
void write_metering_csv(const std::string& path, const EvalReport& report);    // MACs + wall clock
void write_pair_rmse_csv(const std::string& path, const EvalReport& report);   // model x pair RMSE

}  // namespace dcf::eval

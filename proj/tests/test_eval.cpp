#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dcf/common.hpp"
#include "dcf/eval.hpp"
#include "dcf/gipps.hpp"
#include "dcf/nn.hpp"
#include "dcf/trajectory.hpp"

using namespace dcf;
using namespace dcf::eval;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Steady-cruise pair: both vehicles at constant speed, positions built with
/// the same trapezoid accumulation the rollout uses.
TrajectoryPair cruise_pair(std::size_t n, double v_foll, double v_lead,
                           double spacing0, double dt = 0.1) {
    TrajectoryPair pair;
    pair.pair_id = "cruise";
    pair.cls = PairClass::HDV_HDV;
    pair.points.resize(n);
    double foll_pos = 0.0;
    double lead_pos = spacing0;
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = pair.points[i];
        p.t = static_cast<double>(i) * dt;
        p.foll_speed = v_foll;
        p.lead_speed = v_lead;
        p.foll_pos = foll_pos;
        p.lead_pos = lead_pos;
        p.spacing = lead_pos - foll_pos;
        foll_pos += 0.5 * dt * (v_foll + v_foll);
        lead_pos += 0.5 * dt * (v_lead + v_lead);
    }
    return pair;
}

/// Predicts the follower's current speed (the last window step keeps it):
/// lead_speed + speed_diff of the newest feature row.
StepPredictor identity_controller() {
    return [](const std::vector<double>& f) {
        const std::size_t last = f.size() - static_cast<std::size_t>(kChannels);
        return f[last + 1] + f[last + 2];
    };
}

/// Two-pair, two-class window set with hand-set targets; one window per call
/// to push_window.
struct HandSet {
    WindowSet set;

    HandSet() {
        set.steps = 2;
        set.dt = 0.1;
        set.history = 0.2;
        set.pair_ids = {"alpha", "beta"};
        set.pair_classes = {PairClass::HDV_HDV, PairClass::AV_HDV};
    }

    void push_window(int pair, double target, double t_end) {
        Window w;
        w.features = {10.0, 5.0, -1.0, 11.0, 5.5, -0.5};
        w.target = target;
        w.t_end = t_end;
        w.pair = pair;
        w.cls = set.pair_classes[static_cast<std::size_t>(pair)];
        set.windows.push_back(std::move(w));
    }
};

}  // namespace

TEST_CASE("rmse matches the closed form and validates its input") {
    const std::vector<double> pred = {3.0, 4.0};
    const std::vector<double> target = {0.0, 0.0};
    CHECK(rmse(pred, target) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
    CHECK(rmse(target, target) == 0.0);

    const std::vector<double> shorter = {1.0};
    CHECK_THROWS_AS(rmse(pred, shorter), ConfigError);
    const std::vector<double> empty;
    CHECK_THROWS_AS(rmse(empty, empty), DataError);
}

TEST_CASE("closed-loop rollout under an identity controller holds the cruise") {
    const double dt = 0.1;
    auto pair = cruise_pair(60, 12.0, 15.0, 30.0, dt);
    auto out = closed_loop_rollout(identity_controller(), pair, 10, SIZE_MAX, dt);

    REQUIRE(out.t.size() == 50);  // 60 points minus 10 warm-up steps
    for (std::size_t k = 0; k < out.t.size(); ++k) {
        CHECK(out.foll_speed[k] == 12.0);  // identity keeps the speed bit-exactly
        const std::size_t i = k + 10;
        CHECK(out.foll_pos[k] == doctest::Approx(pair.points[i].foll_pos).epsilon(1e-9));
        CHECK(out.spacing[k] == doctest::Approx(pair.points[i].spacing).epsilon(1e-9));
        // Opening gap: never closing, so TTC is infinite throughout.
        CHECK(out.ttc[k] == kInf);
    }
    CHECK(out.min_ttc == kInf);
    CHECK_FALSE(out.collision);
}

TEST_CASE("closed-loop rollout reports closing TTC and collisions") {
    const double dt = 0.1;

    // Closing at a steady 5 m/s from 50 m: TTC shrinks monotonically and the
    // running minimum is the last value; 80 points stay collision-free.
    auto closing = cruise_pair(80, 15.0, 10.0, 50.0, dt);
    auto out = closed_loop_rollout(identity_controller(), closing, 10, SIZE_MAX, dt);
    REQUIRE(out.t.size() == 70);
    CHECK_FALSE(out.collision);
    for (std::size_t k = 0; k < out.ttc.size(); ++k) {
        CHECK(out.ttc[k] == doctest::Approx(out.spacing[k] / 5.0).epsilon(1e-12));
        if (k > 0) CHECK(out.ttc[k] < out.ttc[k - 1]);
    }
    CHECK(out.min_ttc == doctest::Approx(out.ttc.back()).epsilon(1e-15));

    // From 4 m the same closing speed hits the lead after ~8 s: the rollout
    // stops at the collision with min_ttc pinned to zero.
    auto crash = cruise_pair(120, 15.0, 10.0, 4.0, dt);
    auto hit = closed_loop_rollout(identity_controller(), crash, 10, SIZE_MAX, dt);
    CHECK(hit.collision);
    CHECK(hit.min_ttc == 0.0);
    CHECK(hit.ttc.back() == 0.0);
    CHECK(hit.spacing.back() <= 0.0);
    CHECK(hit.t.size() < 110);  // stopped early

    // Horizon cap limits the simulated step count.
    auto capped = closed_loop_rollout(identity_controller(), closing, 10, 7, dt);
    CHECK(capped.t.size() == 7);

    // Too-short pairs and non-positive warm-ups are rejected.
    auto tiny = cruise_pair(10, 12.0, 15.0, 30.0, dt);
    CHECK_THROWS_AS(closed_loop_rollout(identity_controller(), tiny, 10, SIZE_MAX, dt),
                    DataError);
    CHECK_THROWS_AS(closed_loop_rollout(identity_controller(), closing, 0, SIZE_MAX, dt),
                    ConfigError);
}

TEST_CASE("observed minimum TTC scans from the requested step") {
    TrajectoryPair pair;
    pair.pair_id = "obs";
    pair.points.resize(5);
    const double spac[] = {10.0, 8.0, 6.0, 12.0, 9.0};
    for (std::size_t i = 0; i < 5; ++i) {
        pair.points[i].t = 0.1 * static_cast<double>(i);
        pair.points[i].spacing = spac[i];
        pair.points[i].foll_speed = 7.0;  // closing at 2 m/s everywhere
        pair.points[i].lead_speed = 5.0;
    }
    CHECK(observed_min_ttc(pair, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(observed_min_ttc(pair, 3) == doctest::Approx(4.5).epsilon(1e-15));

    // Never closing -> infinite.
    for (auto& p : pair.points) p.foll_speed = 4.0;
    CHECK(observed_min_ttc(pair, 0) == kInf);
}

TEST_CASE("grouped RMSE pools per class and warns about empty ones") {
    HandSet h;
    h.push_window(0, 1.0, 0.2);
    h.push_window(0, 2.0, 0.3);
    h.push_window(1, 3.0, 0.2);
    h.push_window(1, 4.0, 0.3);
    const std::vector<std::size_t> idx = {0, 1, 2, 3};
    const std::vector<double> pred = {2.0, 2.0, 3.0, 5.0};  // errors 1,0,0,1

    auto g = rmse_by_group(pred, h.set, idx);
    CHECK(g.overall == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    REQUIRE(g.by_class[0].has_value());  // HDV-HDV
    REQUIRE(g.by_class[2].has_value());  // AV-HDV
    CHECK(*g.by_class[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(*g.by_class[2] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK_FALSE(g.by_class[1].has_value());  // HDV-AV absent
    REQUIRE(g.warnings.size() == 1);
    CHECK(g.warnings[0].find("HDV-AV") != std::string::npos);

    const std::vector<double> short_pred = {1.0};
    CHECK_THROWS_AS(rmse_by_group(short_pred, h.set, idx), ConfigError);
    CHECK_THROWS_AS(rmse_by_group({}, h.set, {}), DataError);
}

TEST_CASE("network predictor and step wrapper denormalize through the spec") {
    // All-zero weights push 0.5 through the sigmoid head for both network
    // kinds; with a [2, 6] target range every prediction lands on 4 m/s.
    NormalizationSpec norm;
    norm.feat_min = {0.0, 0.0, -5.0};
    norm.feat_max = {50.0, 20.0, 5.0};
    norm.target_min = 2.0;
    norm.target_max = 6.0;

    WindowSet set;
    set.steps = 10;
    set.dt = 0.1;
    set.history = 1.0;
    set.pair_ids = {"p"};
    set.pair_classes = {PairClass::HDV_HDV};
    for (int k = 0; k < 3; ++k) {
        Window w;
        w.features.assign(static_cast<std::size_t>(set.steps) * kChannels, 0.0);
        for (int s = 0; s < set.steps; ++s) {
            w.features[static_cast<std::size_t>(s) * kChannels + 0] = 20.0 + k;
            w.features[static_cast<std::size_t>(s) * kChannels + 1] = 10.0;
            w.features[static_cast<std::size_t>(s) * kChannels + 2] = -1.0;
        }
        w.target = 9.0;
        w.t_end = 0.9 + 0.1 * k;
        w.pair = 0;
        w.cls = PairClass::HDV_HDV;
        set.windows.push_back(std::move(w));
    }

    nn::MlpSpec mlp;  // stock 30-60-60-1 student shape
    nn::Weights mw = nn::init_weights(mlp, 0);
    for (double& v : mw.data) v = 0.0;
    auto mpred = make_network_predictor(mlp, mw, norm)(set, {0, 1, 2});
    REQUIRE(mpred.size() == 3);
    for (double p : mpred) CHECK(p == doctest::Approx(4.0).epsilon(1e-12));

    nn::LstmSpec lstm;
    lstm.layers = {7, 5};
    nn::Weights lw = nn::init_weights(lstm, 0);
    for (double& v : lw.data) v = 0.0;
    auto lpred = make_network_predictor(lstm, lw, norm)(set, {2});
    REQUIRE(lpred.size() == 1);
    CHECK(lpred[0] == doctest::Approx(4.0).epsilon(1e-12));

    // The one-shot step wrapper agrees with the batch predictor.
    auto step = make_network_step(mlp, mw, norm, set.steps);
    CHECK(step(set.windows[0].features) == doctest::Approx(mpred[0]).epsilon(1e-15));
}

TEST_CASE("gipps predictor wraps the per-pair window predictions") {
    gipps::GippsParams p;
    p.a_max = 1.5;
    p.b = -3.0;
    p.b_hat = -3.5;
    p.V = 14.0;
    p.s_eff = 6.0;
    p.tau = 0.5;

    gipps::RolloutSetup setup;
    setup.lead_speeds.assign(200, 11.0);
    for (std::size_t i = 40; i < 90; ++i) setup.lead_speeds[i] = 8.0;
    setup.initial_spacing = 25.0;
    setup.initial_foll_speed = 10.0;
    setup.pair_id = "g0";
    auto pair = gipps::gipps_rollout(setup, p, 0.1);

    auto set = make_windows({pair}, 1.0, 0.1);
    REQUIRE(set.windows.size() > 50);
    std::vector<std::size_t> idx(set.windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    auto pred = make_gipps_predictor({p}, 0.1)(set, idx);
    REQUIRE(pred.size() == idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        CHECK(pred[i] ==
              gipps::gipps_predict_window(set.windows[idx[i]], set.steps, p, 0.1));

    // Missing per-pair parameters are a configuration error.
    auto broken = make_gipps_predictor({}, 0.1);
    CHECK_THROWS_AS(broken(set, idx), ConfigError);
}

TEST_CASE("evaluate_models assembles a consistent report") {
    HandSet h;
    h.push_window(0, 1.0, 0.2);
    h.push_window(0, 2.0, 0.3);
    h.push_window(1, 3.0, 0.2);
    const std::vector<std::size_t> test_idx = {0, 1, 2};

    NamedPredictor exact{"exact", [](const WindowSet& s, const std::vector<std::size_t>& idx) {
                             std::vector<double> out;
                             for (std::size_t i : idx) out.push_back(s.windows[i].target);
                             return out;
                         }};
    NamedPredictor zero{"zero", [](const WindowSet&, const std::vector<std::size_t>& idx) {
                            return std::vector<double>(idx.size(), 0.0);
                        }};

    auto report = evaluate_models({exact, zero}, h.set, test_idx);
    REQUIRE(report.model_names == std::vector<std::string>{"exact", "zero"});
    REQUIRE(report.overall_rmse.size() == 2);
    CHECK(report.overall_rmse[0] == 0.0);
    CHECK(report.overall_rmse[1] ==
          doctest::Approx(std::sqrt((1.0 + 4.0 + 9.0) / 3.0)).epsilon(1e-15));

    REQUIRE(report.pair_rows.size() == 2);
    CHECK(report.pair_rows[0].pair_id == "alpha");
    CHECK(report.pair_rows[1].pair_id == "beta");
    REQUIRE(report.pair_rows[0].rmse.size() == 2);
    CHECK(*report.pair_rows[0].rmse[1] ==
          doctest::Approx(std::sqrt((1.0 + 4.0) / 2.0)).epsilon(1e-15));
    CHECK(*report.pair_rows[1].rmse[1] == doctest::Approx(3.0).epsilon(1e-15));

    // Both models warn about the absent HDV-AV class, prefixed by name.
    REQUIRE(report.warnings.size() == 2);
    CHECK(report.warnings[0].find("exact: ") == 0);
    CHECK(report.warnings[1].find("zero: ") == 0);

    CHECK_THROWS_AS(evaluate_models({}, h.set, test_idx), ConfigError);
    CHECK_THROWS_AS(evaluate_models({exact}, h.set, {}), DataError);
}

TEST_CASE("speed profile export writes one file per pair and model") {
    HandSet h;
    h.push_window(0, 1.0, 0.2);
    h.push_window(0, 2.0, 0.3);
    h.push_window(1, 3.0, 0.2);

    NamedPredictor zero{"zero", [](const WindowSet&, const std::vector<std::size_t>& idx) {
                            return std::vector<double>(idx.size(), 0.0);
                        }};
    NamedPredictor one{"one", [](const WindowSet&, const std::vector<std::size_t>& idx) {
                           return std::vector<double>(idx.size(), 1.0);
                       }};

    const auto dir = std::filesystem::temp_directory_path() / "dcf_test_profiles";
    std::filesystem::remove_all(dir);
    auto paths = speed_profile_export({zero, one}, h.set, dir.string());

    REQUIRE(paths.size() == 4);  // 2 pairs x 2 models, pair-major order
    CHECK(paths[0].find("speed_alpha_zero.csv") != std::string::npos);
    CHECK(paths[1].find("speed_alpha_one.csv") != std::string::npos);
    CHECK(paths[2].find("speed_beta_zero.csv") != std::string::npos);
    CHECK(paths[3].find("speed_beta_one.csv") != std::string::npos);

    std::ifstream f(paths[0]);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "t,observed,predicted");
    std::size_t rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);  // pair "alpha" holds two windows

    std::filesystem::remove_all(dir);
}

TEST_CASE("compute metering reports exact MACs and consistent scaling") {
    nn::MlpSpec spec;  // 30-60-60-1
    nn::Weights w = nn::init_weights(spec, 3);

    NormalizationSpec norm;
    norm.feat_min = {0.0, 0.0, -5.0};
    norm.feat_max = {50.0, 20.0, 5.0};
    norm.target_min = 0.0;
    norm.target_max = 15.0;

    WindowSet set;
    set.steps = 10;
    set.dt = 0.1;
    set.pair_ids = {"p"};
    set.pair_classes = {PairClass::HDV_HDV};
    std::vector<std::size_t> idx;
    for (int k = 0; k < 64; ++k) {
        Window win;
        win.features.assign(static_cast<std::size_t>(set.steps) * kChannels,
                            0.25 * (k % 4));
        win.target = 5.0;
        win.t_end = 0.9 + 0.1 * k;
        win.pair = 0;
        set.windows.push_back(std::move(win));
        idx.push_back(static_cast<std::size_t>(k));
    }
    auto batch = normalize_windows(set, idx, norm);

    auto r = compute_metering(spec, w, batch, set.steps, 7);
    CHECK(r.macs_per_sample == nn::mlp_macs(spec));
    CHECK(r.macs_per_sample == 5460);
    CHECK(r.batch == 64);
    CHECK(r.repetitions == 7);
    CHECK(r.wall_median_us > 0.0);
    CHECK(r.wall_iqr_us >= 0.0);
    CHECK(r.us_per_10k ==
          doctest::Approx(r.wall_median_us / 64.0 * 10000.0).epsilon(1e-12));
    CHECK(r.peak_rss_kb > 0);  // getrusage is available on this platform

    CHECK_THROWS_AS(compute_metering(spec, w, batch, set.steps, 0), ConfigError);
    NormalizedData empty;
    CHECK_THROWS_AS(compute_metering(spec, w, empty, set.steps, 3), DataError);
}

#include "dcf/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <sys/resource.h>

#include "json.hpp"

#include "dcf/common.hpp"
#include "dcf/stats.hpp"

namespace dcf::eval {

namespace {

constexpr std::size_t kChunk = 512;

std::vector<double> network_predict_rows(const nn::NetworkSpec& spec, const nn::Weights& w,
                                         const std::vector<double>& rows, std::size_t n,
                                         int steps) {
    const std::size_t row = static_cast<std::size_t>(steps) * kChannels;
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t bn = std::min(kChunk, n - start);
        std::span<const double> batch(rows.data() + start * row, bn * row);
        std::vector<double> pred;
        if (const auto* mlp = std::get_if<nn::MlpSpec>(&spec))
            pred = nn::mlp_forward(*mlp, w, batch, bn);
        else
            pred = nn::lstm_forward(std::get<nn::LstmSpec>(spec), w, batch, bn, steps);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v.has_value() || !std::isfinite(*v)) return nullptr;
    return *v;
}

nlohmann::json finite_json(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// One-step prediction error
// ---------------------------------------------------------------------------

double rmse(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size())
        throw ConfigError("rmse needs equally long prediction/target vectors");
    if (pred.empty()) throw DataError("rmse of an empty vector is undefined");
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        sse += d * d;
    }
    return std::sqrt(sse / static_cast<double>(pred.size()));
}

Predictor make_network_predictor(const nn::NetworkSpec& spec, const nn::Weights& w,
                                 const NormalizationSpec& norm) {
    return [spec, w, norm](const WindowSet& set, const std::vector<std::size_t>& idx) {
        const NormalizedData data = normalize_windows(set, idx, norm);
        std::vector<double> pred =
            network_predict_rows(spec, w, data.features, data.n, set.steps);
        for (double& p : pred) p = norm.invert_target(p);
        return pred;
    };
}

Predictor make_gipps_predictor(std::vector<gipps::GippsParams> per_pair, double dt) {
    return [per_pair = std::move(per_pair), dt](const WindowSet& set,
                                                const std::vector<std::size_t>& idx) {
        std::vector<double> pred;
        pred.reserve(idx.size());
        for (std::size_t i : idx) {
            const Window& w = set.windows[i];
            if (w.pair < 0 || static_cast<std::size_t>(w.pair) >= per_pair.size())
                throw ConfigError("gipps predictor is missing parameters for pair index " +
                                  std::to_string(w.pair));
            pred.push_back(
                gipps::gipps_predict_window(w, set.steps, per_pair[w.pair], dt));
        }
        return pred;
    };
}

GroupedRmse rmse_by_group(std::span<const double> pred_ms, const WindowSet& set,
                          const std::vector<std::size_t>& idx) {
    if (pred_ms.size() != idx.size())
        throw ConfigError("rmse_by_group needs one prediction per index");
    GroupedRmse out;
    double sse = 0.0;
    std::array<double, kNumClasses> class_sse{};
    std::array<std::size_t, kNumClasses> class_n{};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Window& w = set.windows[idx[i]];
        const double d = pred_ms[i] - w.target;
        sse += d * d;
        class_sse[static_cast<int>(w.cls)] += d * d;
        ++class_n[static_cast<int>(w.cls)];
    }
    if (idx.empty()) throw DataError("rmse_by_group over an empty index set");
    out.overall = std::sqrt(sse / static_cast<double>(idx.size()));
    for (int c = 0; c < kNumClasses; ++c) {
        if (class_n[c] == 0) {
            out.by_class[c] = std::nullopt;
            out.warnings.push_back("no windows for class " +
                                   to_string(static_cast<PairClass>(c)));
        } else {
            out.by_class[c] = std::sqrt(class_sse[c] / static_cast<double>(class_n[c]));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Closed-loop rollout
// ---------------------------------------------------------------------------

StepPredictor make_network_step(const nn::NetworkSpec& spec, const nn::Weights& w,
                                const NormalizationSpec& norm, int steps) {
    return [spec, w, norm, steps](const std::vector<double>& features) {
        std::vector<double> normed(features.size());
        for (int s = 0; s < steps; ++s)
            for (int c = 0; c < kChannels; ++c) {
                const std::size_t k = static_cast<std::size_t>(s) * kChannels + c;
                normed[k] = norm.apply_feature(c, features[k]);
            }
        std::vector<double> pred;
        if (const auto* mlp = std::get_if<nn::MlpSpec>(&spec))
            pred = nn::mlp_forward(*mlp, w, normed, 1);
        else
            pred = nn::lstm_forward(std::get<nn::LstmSpec>(spec), w, normed, 1, steps);
        return norm.invert_target(pred[0]);
    };
}

StepPredictor make_gipps_step(const gipps::GippsParams& params, double dt) {
    return [params, dt](const std::vector<double>& features) {
        const std::size_t last = features.size() - kChannels;
        gipps::GippsState s;
        s.spacing = features[last + 0];
        s.v_lead = features[last + 1];
        s.v_foll = s.v_lead + features[last + 2];
        return gipps::gipps_predict(s, params, dt);
    };
}

ClosedLoopResult closed_loop_rollout(const StepPredictor& model, const TrajectoryPair& pair,
                                     int steps, std::size_t horizon, double dt) {
    if (steps < 1) throw ConfigError("closed-loop rollout needs steps >= 1");
    const std::size_t n = pair.points.size();
    const std::size_t warmup = static_cast<std::size_t>(steps);
    if (n < warmup + 1)
        throw DataError("pair '" + pair.pair_id + "' is too short for a " +
                        std::to_string(steps) + "-step closed-loop warm-up");

    std::vector<double> sim_speed(n), sim_pos(n);
    for (std::size_t i = 0; i < warmup; ++i) {
        sim_speed[i] = pair.points[i].foll_speed;
        sim_pos[i] = pair.points[i].foll_pos;
    }

    ClosedLoopResult out;
    out.min_ttc = std::numeric_limits<double>::infinity();
    // n - warmup is safe (n >= warmup + 1 was checked above) and avoids the
    // overflow of warmup + horizon when horizon is SIZE_MAX.
    const std::size_t stop = n - warmup > horizon ? warmup + horizon : n;
    std::vector<double> features(warmup * kChannels);

    for (std::size_t i = warmup; i < stop; ++i) {
        for (std::size_t k = 0; k < warmup; ++k) {
            const std::size_t src = i - warmup + k;
            features[k * kChannels + 0] = pair.points[src].lead_pos - sim_pos[src];
            features[k * kChannels + 1] = pair.points[src].lead_speed;
            features[k * kChannels + 2] = sim_speed[src] - pair.points[src].lead_speed;
        }
        sim_speed[i] = std::max(0.0, model(features));
        sim_pos[i] = sim_pos[i - 1] + 0.5 * dt * (sim_speed[i - 1] + sim_speed[i]);

        const double spacing = pair.points[i].lead_pos - sim_pos[i];
        out.t.push_back(pair.points[i].t);
        out.foll_speed.push_back(sim_speed[i]);
        out.foll_pos.push_back(sim_pos[i]);
        out.spacing.push_back(spacing);
        if (spacing <= 0.0) {
            out.collision = true;
            out.ttc.push_back(0.0);
            out.min_ttc = 0.0;
            break;
        }
        const double step_ttc = stats::ttc(spacing, sim_speed[i] - pair.points[i].lead_speed);
        out.ttc.push_back(step_ttc);
        out.min_ttc = std::min(out.min_ttc, step_ttc);
    }
    return out;
}

double observed_min_ttc(const TrajectoryPair& pair, std::size_t from_step) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = from_step; i < pair.points.size(); ++i) {
        const TrajectoryPoint& p = pair.points[i];
        best = std::min(best, stats::ttc(p.spacing, p.foll_speed - p.lead_speed));
    }
    return best;
}

// ---------------------------------------------------------------------------
// Compute metering
// ---------------------------------------------------------------------------

MeteringResult compute_metering(const nn::NetworkSpec& spec, const nn::Weights& w,
                                const NormalizedData& batch, int steps, int repetitions) {
    if (repetitions < 1) throw ConfigError("metering needs at least one repetition");
    if (batch.n == 0) throw DataError("metering needs a non-empty batch");

    MeteringResult r;
    r.batch = batch.n;
    r.repetitions = repetitions;
    r.macs_per_sample = std::holds_alternative<nn::MlpSpec>(spec)
                            ? nn::mlp_macs(std::get<nn::MlpSpec>(spec))
                            : nn::lstm_macs(std::get<nn::LstmSpec>(spec), steps);

    volatile double sink = 0.0;  // keep the optimizer honest
    // Warm-up pass outside the timed region.
    sink = sink + network_predict_rows(spec, w, batch.features, batch.n, steps)[0];

    std::vector<double> times_us;
    times_us.reserve(repetitions);
    for (int rep = 0; rep < repetitions; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<double> pred =
            network_predict_rows(spec, w, batch.features, batch.n, steps);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + pred[batch.n - 1];
        times_us.push_back(
            std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    (void)sink;

    std::sort(times_us.begin(), times_us.end());
    r.wall_median_us = quantile_sorted(times_us, 0.5);
    r.wall_iqr_us = quantile_sorted(times_us, 0.75) - quantile_sorted(times_us, 0.25);
    r.us_per_10k = r.wall_median_us / static_cast<double>(batch.n) * 10000.0;

    rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) == 0) r.peak_rss_kb = usage.ru_maxrss;
    return r;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

EvalReport evaluate_models(const std::vector<NamedPredictor>& models, const WindowSet& set,
                           const std::vector<std::size_t>& test_idx) {
    if (models.empty()) throw ConfigError("evaluate_models needs at least one model");
    if (test_idx.empty()) throw DataError("evaluate_models over an empty test set");

    EvalReport report;
    for (const NamedPredictor& m : models) report.model_names.push_back(m.name);

    // Per-pair index lists, in pair order.
    std::vector<std::vector<std::size_t>> by_pair(set.pair_ids.size());
    for (std::size_t i : test_idx) by_pair[set.windows[i].pair].push_back(i);

    for (const NamedPredictor& m : models) {
        const std::vector<double> pred = m.fn(set, test_idx);
        GroupedRmse grouped = rmse_by_group(pred, set, test_idx);
        report.overall_rmse.push_back(grouped.overall);
        report.class_rmse.push_back(grouped.by_class);
        for (std::string& warning : grouped.warnings)
            report.warnings.push_back(m.name + ": " + warning);
    }

    for (std::size_t p = 0; p < by_pair.size(); ++p) {
        if (by_pair[p].empty()) continue;
        PairRmseRow row;
        row.pair_id = set.pair_ids[p];
        row.cls = set.pair_classes[p];
        for (const NamedPredictor& m : models) {
            const std::vector<double> pred = m.fn(set, by_pair[p]);
            std::vector<double> targets;
            targets.reserve(by_pair[p].size());
            for (std::size_t i : by_pair[p]) targets.push_back(set.windows[i].target);
            row.rmse.push_back(rmse(pred, targets));
        }
        report.pair_rows.push_back(std::move(row));
    }
    return report;
}

std::vector<std::string> speed_profile_export(const std::vector<NamedPredictor>& models,
                                              const WindowSet& set, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::vector<std::size_t>> by_pair(set.pair_ids.size());
    for (std::size_t i = 0; i < set.windows.size(); ++i)
        by_pair[set.windows[i].pair].push_back(i);

    std::vector<std::string> paths;
    for (std::size_t p = 0; p < by_pair.size(); ++p) {
        if (by_pair[p].empty()) continue;
        for (const NamedPredictor& m : models) {
            const std::vector<double> pred = m.fn(set, by_pair[p]);
            const std::string path =
                out_dir + "/speed_" + set.pair_ids[p] + "_" + m.name + ".csv";
            std::ofstream f(path, std::ios::trunc);
            if (!f) throw DataError(path + ": cannot open for writing");
            f << "t,observed,predicted\n";
            for (std::size_t k = 0; k < by_pair[p].size(); ++k) {
                const Window& w = set.windows[by_pair[p][k]];
                f << fmt_g(w.t_end + set.dt) << ',' << fmt_g(w.target) << ','
                  << fmt_g(pred[k]) << '\n';
            }
            if (!f) throw DataError(path + ": write failed");
            paths.push_back(path);
        }
    }
    return paths;
}

void write_eval_report_json(const std::string& path, const EvalReport& report) {
    nlohmann::json j;
    j["dataset_hash"] = report.dataset_hash;
    j["models"] = report.model_names;

    nlohmann::json overall = nlohmann::json::object();
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t m = 0; m < report.model_names.size(); ++m) {
        overall[report.model_names[m]] = finite_json(report.overall_rmse[m]);
        nlohmann::json cls = nlohmann::json::object();
        for (int c = 0; c < kNumClasses; ++c)
            cls[to_string(static_cast<PairClass>(c))] = opt_json(report.class_rmse[m][c]);
        per_class[report.model_names[m]] = cls;
    }
    j["rmse_overall"] = overall;
    j["rmse_by_class"] = per_class;

    nlohmann::json rows = nlohmann::json::array();
    for (const PairRmseRow& r : report.pair_rows) {
        nlohmann::json row;
        row["pair_id"] = r.pair_id;
        row["pair_type"] = to_string(r.cls);
        for (std::size_t m = 0; m < report.model_names.size(); ++m)
            row[report.model_names[m]] = opt_json(r.rmse[m]);
        rows.push_back(row);
    }
    j["rmse_by_pair"] = rows;

    nlohmann::json ttc = nlohmann::json::array();
    for (const MinTtcRow& r : report.min_ttc_rows) {
        nlohmann::json row;
        row["model"] = r.model;
        row["pair_id"] = r.pair_id;
        row["pair_type"] = to_string(r.cls);
        row["min_ttc"] = finite_json(r.min_ttc);
        row["collision"] = r.collision;
        ttc.push_back(row);
    }
    j["min_ttc"] = ttc;

    nlohmann::json metering = nlohmann::json::array();
    for (const MeteringResult& m : report.metering) {
        nlohmann::json row;
        row["model"] = m.model;
        row["macs_per_sample"] = m.macs_per_sample;
        row["batch"] = m.batch;
        row["repetitions"] = m.repetitions;
        row["wall_median_us"] = m.wall_median_us;
        row["wall_iqr_us"] = m.wall_iqr_us;
        row["us_per_10k"] = m.us_per_10k;
        row["peak_rss_kb"] = m.peak_rss_kb;
        metering.push_back(row);
    }
    j["metering"] = metering;
    j["warnings"] = report.warnings;

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << j.dump(2) << '\n';
    if (!f) throw DataError(path + ": write failed");
}

void write_class_rmse_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "model,pair_type,rmse\n";
    for (std::size_t m = 0; m < report.model_names.size(); ++m)
        for (int c = 0; c < kNumClasses; ++c) {
            f << report.model_names[m] << ',' << to_string(static_cast<PairClass>(c)) << ',';
            if (report.class_rmse[m][c].has_value())
                f << fmt_g(*report.class_rmse[m][c]);
            f << '\n';
        }
    if (!f) throw DataError(path + ": write failed");
}

void write_min_ttc_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "model,pair_id,pair_type,min_ttc,collision\n";
    for (const MinTtcRow& r : report.min_ttc_rows) {
        f << r.model << ',' << r.pair_id << ',' << to_string(r.cls) << ',';
        if (std::isfinite(r.min_ttc))
            f << fmt_g(r.min_ttc);
        else
            f << "inf";
        f << ',' << (r.collision ? 1 : 0) << '\n';
    }
    if (!f) throw DataError(path + ": write failed");
}

void write_metering_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "model,macs_per_sample,batch,repetitions,wall_median_us,wall_iqr_us,us_per_10k,peak_rss_kb\n";
    for (const MeteringResult& m : report.metering)
        f << m.model << ',' << m.macs_per_sample << ',' << m.batch << ',' << m.repetitions
          << ',' << fmt_g(m.wall_median_us) << ',' << fmt_g(m.wall_iqr_us) << ','
          << fmt_g(m.us_per_10k) << ',' << m.peak_rss_kb << '\n';
    if (!f) throw DataError(path + ": write failed");
}

void write_pair_rmse_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "pair_id,pair_type";
    for (const std::string& name : report.model_names) f << ',' << name;
    f << '\n';
    for (const PairRmseRow& r : report.pair_rows) {
        f << r.pair_id << ',' << to_string(r.cls);
        for (const std::optional<double>& v : r.rmse) {
            f << ',';
            if (v.has_value()) f << fmt_g(*v);
        }
        f << '\n';
    }
    if (!f) throw DataError(path + ": write failed");
}

}  // namespace dcf::eval

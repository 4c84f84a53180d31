// Command-line front end. One binary, nine subcommands covering the whole
// workflow:
//
//   synth  -> ingest -> analyze
//                    -> train --model teacher
//                    -> train --model student
//                    -> distill / sweep
//                    -> evaluate / rollout / bench
//
// Every run resolves its configuration (defaults < file < DCF_ environment
// < flags), writes the resolved snapshot as a manifest next to its
// artifacts, and emits a machine-readable summary JSON. Artifacts embed only
// paths as configured (relative paths stay relative), so identical configs
// and seeds reproduce byte-identical run directories.
//
// Exit codes: 0 success, 2 configuration error, 3 data error (including a
// missing dependency artifact, which is named), 4 numerical divergence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcf/common.hpp"
#include "dcf/config.hpp"
#include "dcf/distill.hpp"
#include "dcf/eval.hpp"
#include "dcf/gipps.hpp"
#include "dcf/nn.hpp"
#include "dcf/stats.hpp"
#include "dcf/synth.hpp"
#include "dcf/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace dcf;

// ---------------------------------------------------------------------------
// Run context: resolved configuration plus the artifact directory
// ---------------------------------------------------------------------------

struct Override {
    std::string key;
    std::string value;
    std::string origin;  // "--flag", for error messages and the manifest
};

struct GlobalArgs {
    std::string config_path;
    std::string out;
    long long seed = 0;
    int threads = 0;
    CLI::Option* out_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
};

struct RunContext {
    config::Config cfg;
    std::string command;  // artifact tag, e.g. "train_teacher"
    std::string out;
    std::uint64_t seed = 0;
    int threads = 1;
};

RunContext make_context(const GlobalArgs& g, std::string command,
                        const std::vector<Override>& overrides) {
    RunContext ctx;
    ctx.command = std::move(command);
    ctx.cfg = config::Config::load(g.config_path);
    if (g.out_opt->count() > 0) ctx.cfg.set("run.out", g.out, "--out");
    if (g.seed_opt->count() > 0) ctx.cfg.set("run.seed", std::to_string(g.seed), "--seed");
    if (g.threads_opt->count() > 0)
        ctx.cfg.set("run.threads", std::to_string(g.threads), "--threads");
    for (const Override& o : overrides) ctx.cfg.set(o.key, o.value, o.origin);

    ctx.out = ctx.cfg.get_string("run.out");
    if (ctx.out.empty()) throw ConfigError("run.out must name an output directory");
    long seed = ctx.cfg.get_int("run.seed");
    if (seed < 0) throw ConfigError("run.seed must be non-negative");
    ctx.seed = static_cast<std::uint64_t>(seed);
    long threads = ctx.cfg.get_int("run.threads");
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    ctx.threads = static_cast<int>(threads);

    fs::create_directories(ctx.out);
    return ctx;
}

std::string out_path(const RunContext& ctx, const std::string& name) {
    return ctx.out + "/" + name;
}

// Paths recorded inside artifacts are relative to the run directory when
// they live in it, so reruns into equally named directories stay
// byte-identical.
std::string rel_out(const RunContext& ctx, const std::string& path) {
    const std::string prefix = ctx.out + "/";
    if (path.rfind(prefix, 0) == 0) return path.substr(prefix.size());
    return path;
}

void require_artifact(const std::string& path) {
    if (!fs::exists(path)) throw DataError("missing dependency artifact: " + path);
}

std::string dataset_path(const RunContext& ctx) {
    std::string p = ctx.cfg.get_string("data.dataset");
    return p.empty() ? out_path(ctx, "dataset.dcfw") : p;
}

std::string resolve_input_csv(const RunContext& ctx) {
    std::string p = ctx.cfg.get_string("data.csv");
    if (p.empty())
        throw ConfigError("no input trajectory CSV configured; set data.csv or pass --input");
    require_artifact(p);
    return p;
}

// ---------------------------------------------------------------------------
// Manifest and summary artifacts
// ---------------------------------------------------------------------------

std::string manifest_text(const RunContext& ctx, const std::vector<std::string>& extras) {
    std::ostringstream o;
    o << "command " << ctx.command << "\n";
    for (const std::string& line : extras) o << line << "\n";
    o << ctx.cfg.snapshot();
    return o.str();
}

/// Writes manifest_<command>.txt and returns the 16-hex-digit fingerprint of
/// its content; evaluate-family outputs carry it in their file names.
std::string write_manifest(const RunContext& ctx, const std::vector<std::string>& extras) {
    const std::string text = manifest_text(ctx, extras);
    const std::string path = out_path(ctx, "manifest_" + ctx.command + ".txt");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << text;
    if (!f.flush()) throw DataError(path + ": write failed");
    return fmt_hex16(fnv1a(text));
}

void write_summary(const RunContext& ctx, json j) {
    j["command"] = ctx.command;
    j["seed"] = ctx.seed;
    const std::string path = out_path(ctx, "summary_" + ctx.command + ".json");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << j.dump(2) << '\n';
    if (!f.flush()) throw DataError(path + ": write failed");
}

// ---------------------------------------------------------------------------
// Config -> module structs
// ---------------------------------------------------------------------------

std::vector<synth::ScenarioPreset> presets_from_config(const config::Config& cfg) {
    auto presets = synth::default_presets();
    static const char* kTokens[kNumClasses] = {"hdv_hdv", "hdv_av", "av_hdv"};
    for (int c = 0; c < kNumClasses; ++c) {
        const std::string base = std::string("synth.") + kTokens[c] + ".";
        synth::ScenarioPreset& p = presets[static_cast<std::size_t>(c)];
        p.mean.a_max = cfg.get_double(base + "a_max");
        p.mean.b = cfg.get_double(base + "b");
        p.mean.b_hat = cfg.get_double(base + "b_hat");
        p.mean.V = cfg.get_double(base + "v");
        p.mean.s_eff = cfg.get_double(base + "s_eff");
        p.mean.tau = cfg.get_double(base + "tau");
        p.jitter = cfg.get_double(base + "jitter");
        p.drive_var = cfg.get_double(base + "drive_var");
        p.noise_std = cfg.get_double(base + "noise_std");
        p.base_speed = cfg.get_double(base + "base_speed");
        p.speed_amp = cfg.get_double(base + "speed_amp");
        p.stop_prob = cfg.get_double(base + "stop_prob");
        p.min_duration = cfg.get_double(base + "min_duration");
        p.max_duration = cfg.get_double(base + "max_duration");
        p.validate();
    }
    return presets;
}

gipps::GippsParams gipps_from_config(const config::Config& cfg) {
    gipps::GippsParams p;
    p.a_max = cfg.get_double("gipps.a_max");
    p.b = cfg.get_double("gipps.b");
    p.b_hat = cfg.get_double("gipps.b_hat");
    p.V = cfg.get_double("gipps.v");
    p.s_eff = cfg.get_double("gipps.s_eff");
    p.tau = cfg.get_double("gipps.tau");
    p.validate();
    return p;
}

nn::OptimizerSpec optimizer_from_config(const config::Config& cfg, const std::string& prefix) {
    nn::OptimizerSpec o;
    const std::string kind = cfg.get_string("optimizer.kind");
    if (kind == "adam") {
        o.kind = nn::OptimizerKind::Adam;
    } else if (kind == "sgd") {
        o.kind = nn::OptimizerKind::SGD;
    } else {
        throw ConfigError("optimizer.kind must be adam or sgd, got '" + kind + "'");
    }
    o.learning_rate = cfg.get_double(prefix + ".learning_rate");
    o.batch_size = static_cast<int>(cfg.get_int(prefix + ".batch_size"));
    o.epochs = static_cast<int>(cfg.get_int(prefix + ".epochs"));
    o.beta1 = cfg.get_double("optimizer.beta1");
    o.beta2 = cfg.get_double("optimizer.beta2");
    o.epsilon = cfg.get_double("optimizer.epsilon");
    o.validate();
    return o;
}

nn::MlpSpec student_from_config(const config::Config& cfg, int steps) {
    nn::MlpSpec s;
    s.input_dim = steps * kChannels;
    s.hidden = cfg.get_ints("student.hidden");
    s.validate();
    return s;
}

nn::LstmSpec teacher_from_config(const config::Config& cfg) {
    nn::LstmSpec s;
    s.input_channels = kChannels;
    s.layers = cfg.get_ints("teacher.layers");
    s.dropout = cfg.get_double("teacher.dropout");
    s.projection = static_cast<int>(cfg.get_int("teacher.projection"));
    s.validate();
    return s;
}

/// "lo:hi:step" or a comma list; values in [0, 1], deduplicated.
std::vector<double> parse_alpha_grid(const std::string& text) {
    const auto parse_one = [&](const std::string& tok) {
        char* end = nullptr;
        double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
            throw ConfigError("distill.alphas: cannot parse number '" + tok + "'");
        return v;
    };

    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ':')) parts.push_back(tok);
        if (parts.size() != 3)
            throw ConfigError("distill.alphas grid must be lo:hi:step, got '" + text + "'");
        const double lo = parse_one(parts[0]);
        const double hi = parse_one(parts[1]);
        const double step = parse_one(parts[2]);
        if (step <= 0.0 || hi < lo)
            throw ConfigError("distill.alphas grid needs step > 0 and hi >= lo");
        const int count = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
        for (int k = 0; k <= count; ++k) out.push_back(lo + k * step);
    } else {
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) out.push_back(parse_one(tok));
        }
    }
    if (out.empty()) throw ConfigError("distill.alphas resolves to an empty grid");
    for (double a : out) {
        if (a < 0.0 || a > 1.0)
            throw ConfigError("alpha must lie in [0, 1], got " + fmt_g(a));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double x, double y) { return std::abs(x - y) < 1e-12; }),
              out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

struct PipelineResult {
    std::vector<TrajectoryPair> filtered;
    WindowSet set;
    LoadReport load;
    FilterReport filter;
};

/// CSV -> kinematics -> spacing filter -> windows, governed by data.* keys.
PipelineResult build_windows(const RunContext& ctx, const std::string& csv) {
    PipelineResult r;
    const double dt = ctx.cfg.get_double("data.dt");
    auto pairs = load_pairs(csv, {}, dt, &r.load);
    for (TrajectoryPair& p : pairs) {
        if (p.points.size() >= 3) p = derive_kinematics(std::move(p), dt);
    }
    const long min_points = ctx.cfg.get_int("data.min_points");
    if (min_points < 1) throw ConfigError("data.min_points must be >= 1");
    r.filtered = filter_spacing(pairs, ctx.cfg.get_double("data.max_spacing"), dt,
                                static_cast<std::size_t>(min_points), &r.filter);
    r.set = make_windows(r.filtered, ctx.cfg.get_double("data.history"), dt);
    return r;
}

Dataset load_dataset_artifact(const RunContext& ctx) {
    const std::string path = dataset_path(ctx);
    require_artifact(path);
    return load_dataset(path);
}

/// Checks that the CSV reproduces the stored dataset under the current
/// data.* settings, so evaluation never silently mixes generations.
PipelineResult rebuild_and_check(const RunContext& ctx, const Dataset& ds,
                                 const std::string& csv) {
    PipelineResult pipe = build_windows(ctx, csv);
    if (dataset_hash(pipe.set) != dataset_hash(ds.windows)) {
        throw DataError(csv + ": does not reproduce dataset " + dataset_path(ctx) +
                        " (window fingerprint mismatch; re-run ingest)");
    }
    return pipe;
}

/// For each pair index in the window table, the filtered segment with the
/// most points (first wins ties). The spacing filter can split one pair into
/// several segments; per-pair fitting and rollouts use the dominant one.
std::vector<const TrajectoryPair*> best_segments(const WindowSet& set,
                                                 const std::vector<TrajectoryPair>& filtered) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < set.pair_ids.size(); ++i) index[set.pair_ids[i]] = i;
    std::vector<const TrajectoryPair*> seg(set.pair_ids.size(), nullptr);
    for (const TrajectoryPair& p : filtered) {
        auto it = index.find(p.pair_id);
        if (it == index.end()) continue;
        const TrajectoryPair*& cur = seg[it->second];
        if (cur == nullptr || p.points.size() > cur->points.size()) cur = &p;
    }
    return seg;
}

/// Per-pair physics parameters: fitted per pair when gipps.fit is on,
/// otherwise the configured values everywhere.
std::vector<gipps::GippsParams> pair_params(const RunContext& ctx, const WindowSet& set,
                                            const std::vector<const TrajectoryPair*>& segments) {
    const gipps::GippsParams base = gipps_from_config(ctx.cfg);
    const double dt = ctx.cfg.get_double("data.dt");
    std::vector<gipps::GippsParams> params(set.pair_ids.size(), base);
    if (!ctx.cfg.get_bool("gipps.fit")) return params;
    parallel_for(params.size(), ctx.threads, [&](std::size_t i) {
        if (segments[i] != nullptr && segments[i]->points.size() >= 2)
            params[i] = gipps::fit_gipps(*segments[i], dt, base).params;
    });
    return params;
}

// ---------------------------------------------------------------------------
// Trained-model discovery
// ---------------------------------------------------------------------------

struct ModelFile {
    std::string name;
    std::string path;
    nn::LoadedNetwork net;
};

std::optional<ModelFile> load_model(const RunContext& ctx, const std::string& name,
                                    const std::string& flag_path,
                                    const std::vector<std::string>& default_names,
                                    bool want_recurrent) {
    std::string path;
    if (!flag_path.empty()) {
        require_artifact(flag_path);
        path = flag_path;
    } else {
        for (const std::string& n : default_names) {
            const std::string candidate = out_path(ctx, n);
            if (fs::exists(candidate)) {
                path = candidate;
                break;
            }
        }
        if (path.empty()) return std::nullopt;
    }
    ModelFile mf{name, path, nn::load_network(path)};
    const bool recurrent = std::holds_alternative<nn::LstmSpec>(mf.net.spec);
    if (recurrent != want_recurrent) {
        throw ConfigError(path + ": network kind does not match model '" + name + "' (" +
                          (recurrent ? "recurrent" : "feed-forward") + ")");
    }
    return mf;
}

struct ModelFlags {
    std::string teacher;
    std::string student;
    std::string kdnn;
};

std::vector<ModelFile> collect_models(const RunContext& ctx, const ModelFlags& flags) {
    std::vector<ModelFile> models;
    if (auto m = load_model(ctx, "teacher", flags.teacher, {"teacher.dcfn"}, true))
        models.push_back(std::move(*m));
    if (auto m = load_model(ctx, "student", flags.student, {"student.dcfn"}, false))
        models.push_back(std::move(*m));
    if (auto m = load_model(ctx, "kdnn", flags.kdnn, {"kdnn_best.dcfn", "kdnn.dcfn"}, false))
        models.push_back(std::move(*m));
    return models;
}

std::uint64_t model_macs(const nn::NetworkSpec& spec, int steps) {
    if (const auto* m = std::get_if<nn::MlpSpec>(&spec)) return nn::mlp_macs(*m);
    return nn::lstm_macs(std::get<nn::LstmSpec>(spec), steps);
}

std::string sanitize_component(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return out;
}

json split_counts(const DatasetSplit& split) {
    return json{{"train", split.train.size()},
                {"validation", split.validation.size()},
                {"test", split.test.size()}};
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void cmd_synth(const RunContext& ctx) {
    const auto presets = presets_from_config(ctx.cfg);
    const long per_class = ctx.cfg.get_int("synth.pairs_per_class");
    if (per_class < 1) throw ConfigError("synth.pairs_per_class must be >= 1");
    const double dt = ctx.cfg.get_double("data.dt");

    const auto pairs = synth::generate_synthetic_dataset(
        presets, static_cast<std::size_t>(per_class), ctx.seed, dt);
    const std::string csv = out_path(ctx, "synth_pairs.csv");
    write_pairs_csv(csv, pairs);

    std::size_t points = 0;
    for (const auto& p : pairs) points += p.points.size();
    write_manifest(ctx, {});

    json j;
    j["csv"] = rel_out(ctx, csv);
    j["pairs"] = pairs.size();
    j["pairs_per_class"] = per_class;
    j["points"] = points;
    write_summary(ctx, j);
    std::cout << "synth: " << pairs.size() << " pairs (" << points << " points) -> " << csv
              << "\n";
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

void cmd_ingest(const RunContext& ctx) {
    const std::string csv = resolve_input_csv(ctx);
    PipelineResult pipe = build_windows(ctx, csv);
    if (pipe.set.windows.empty())
        throw DataError(csv + ": no training windows survive the spacing filter");

    DatasetSplit split = split_dataset(pipe.set, ctx.seed);
    NormalizationSpec norm = fit_normalizer(pipe.set, split.train);
    const std::string dpath = dataset_path(ctx);
    if (const fs::path parent = fs::path(dpath).parent_path(); !parent.empty())
        fs::create_directories(parent);

    Dataset ds{std::move(pipe.set), norm, std::move(split)};
    save_dataset(dpath, ds);
    const std::string hash = fmt_hex16(dataset_hash(ds.windows));
    write_manifest(ctx, {"input " + csv, "dataset_hash " + hash});

    json j;
    j["input"] = csv;
    j["dataset"] = rel_out(ctx, dpath);
    j["dataset_hash"] = hash;
    j["rows"] = pipe.load.rows;
    j["pairs_in"] = pipe.filter.pairs_in;
    j["pairs_retained"] = pipe.filter.pairs_retained;
    j["points_removed"] = pipe.filter.points_removed;
    j["segments_dropped"] = pipe.filter.segments_dropped;
    j["segments_out"] = pipe.filter.segments_out;
    j["windows"] = ds.windows.windows.size();
    j["split"] = split_counts(ds.split);
    write_summary(ctx, j);
    std::cout << "ingest: " << ds.windows.windows.size() << " windows from "
              << ds.windows.pair_ids.size() << " pairs -> " << dpath << " (hash " << hash
              << ")\n";
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

void write_variability_csv(const std::string& path, const stats::VariabilityTable& table) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "pair_type,bin_low,bin_high,n,foll_speed_std\n";
    for (int c = 0; c < kNumClasses; ++c) {
        for (int b = 0; b < table.bins.count(); ++b) {
            const stats::CellStd& cell = table.cells[static_cast<std::size_t>(c)]
                                                    [static_cast<std::size_t>(b)];
            f << to_string(static_cast<PairClass>(c)) << ',' << fmt_g(table.bins.edges[b]) << ','
              << fmt_g(table.bins.edges[b + 1]) << ',' << cell.n << ',';
            if (cell.stddev.has_value()) f << fmt_g(*cell.stddev);
            f << '\n';
        }
    }
    if (!f) throw DataError(path + ": write failed");
}

void write_moments_csv(const std::string& path,
                       const std::vector<std::pair<std::string, std::vector<stats::GroupSummary>>>&
                           tables,
                       const stats::SpacingBins& bins) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "variable,pair_type,bin_low,bin_high,n,mean,std,skewness,kurtosis\n";
    const auto cell = [&f](const std::optional<double>& v) {
        f << ',';
        if (v.has_value()) f << fmt_g(*v);
    };
    for (const auto& [variable, rows] : tables) {
        for (const stats::GroupSummary& r : rows) {
            f << variable << ',' << to_string(r.cls) << ',' << fmt_g(bins.edges[r.bin]) << ','
              << fmt_g(bins.edges[r.bin + 1]) << ',' << r.n;
            cell(r.mean);
            cell(r.stddev);
            cell(r.skewness);
            cell(r.kurtosis);
            f << '\n';
        }
    }
    if (!f) throw DataError(path + ": write failed");
}

void write_category_csv(const std::string& path, const std::vector<stats::CategoryCell>& cells,
                      const stats::SpacingBins& categories) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << "category_low,category_high,pair_type,n,mean_speed,mean_accel,mean_ttc,n_finite_ttc\n";
    const auto cell = [&f](const std::optional<double>& v) {
        f << ',';
        if (v.has_value()) f << fmt_g(*v);
    };
    for (const stats::CategoryCell& c : cells) {
        f << fmt_g(categories.edges[c.category]) << ',' << fmt_g(categories.edges[c.category + 1])
          << ',' << to_string(c.cls) << ',' << c.n;
        cell(c.mean_speed);
        cell(c.mean_accel);
        cell(c.mean_ttc);
        f << ',' << c.n_finite_ttc << '\n';
    }
    if (!f) throw DataError(path + ": write failed");
}

void cmd_analyze(const RunContext& ctx) {
    const std::string csv = resolve_input_csv(ctx);
    const double dt = ctx.cfg.get_double("data.dt");
    LoadReport lreport;
    auto pairs = load_pairs(csv, {}, dt, &lreport);
    for (TrajectoryPair& p : pairs) {
        if (p.points.size() >= 3) p = derive_kinematics(std::move(p), dt);
    }
    FilterReport freport;
    const auto filtered =
        filter_spacing(pairs, ctx.cfg.get_double("data.max_spacing"), dt,
                       static_cast<std::size_t>(ctx.cfg.get_int("data.min_points")), &freport);
    if (filtered.empty()) throw DataError(csv + ": no pairs survive the spacing filter");

    // Speed variability and distribution shape per spacing bin.
    stats::SpacingBins fine{ctx.cfg.get_doubles("stats.variability_edges")};
    fine.validate();
    const auto variability = stats::speed_variability(filtered, fine);
    const std::string var_path = out_path(ctx, "variability.csv");
    write_variability_csv(var_path, variability);

    std::vector<std::pair<std::string, std::vector<stats::GroupSummary>>> moment_tables;
    moment_tables.emplace_back(
        "speed_diff", stats::moment_summaries(filtered, fine, [](const TrajectoryPoint& p) {
            return p.speed_diff;
        }));
    moment_tables.emplace_back(
        "foll_accel", stats::moment_summaries(filtered, fine, [](const TrajectoryPoint& p) {
            return p.foll_accel;
        }));
    const std::string moments_path = out_path(ctx, "moments.csv");
    write_moments_csv(moments_path, moment_tables, fine);

    // Coarse spacing categories: per-cell means plus one-way ANOVA across
    // pair types within each category.
    stats::SpacingBins coarse{ctx.cfg.get_doubles("stats.category_edges")};
    coarse.validate();
    const auto cells = stats::summarize_categories(filtered, coarse);
    const std::string category_path = out_path(ctx, "category_summary.csv");
    write_category_csv(category_path, cells, coarse);

    struct VarSpec {
        const char* name;
        double (*value)(const TrajectoryPoint&);
        bool finite_only;
    };
    const VarSpec variables[] = {
        {"foll_speed", [](const TrajectoryPoint& p) { return p.foll_speed; }, false},
        {"foll_accel", [](const TrajectoryPoint& p) { return p.foll_accel; }, false},
        {"ttc", [](const TrajectoryPoint& p) { return stats::ttc(p.spacing, p.speed_diff); },
         true},
    };

    std::vector<std::string> warnings;
    const std::string anova_path = out_path(ctx, "anova.csv");
    std::ofstream af(anova_path, std::ios::trunc);
    if (!af) throw DataError(anova_path + ": cannot open for writing");
    af << "variable,category_low,category_high,groups,F,p,df_between,df_within\n";
    for (const VarSpec& var : variables) {
        for (int cat = 0; cat < coarse.count(); ++cat) {
            std::vector<std::vector<double>> groups(kNumClasses);
            for (const TrajectoryPair& p : filtered) {
                for (const TrajectoryPoint& pt : p.points) {
                    if (coarse.bin_of(pt.spacing) != cat) continue;
                    const double v = var.value(pt);
                    if (var.finite_only && !std::isfinite(v)) continue;
                    groups[static_cast<std::size_t>(p.cls)].push_back(v);
                }
            }
            std::vector<std::vector<double>> usable;
            for (auto& g : groups) {
                if (g.size() >= 2) usable.push_back(std::move(g));
            }
            if (usable.size() < 2) {
                warnings.push_back(std::string(var.name) + " category " + std::to_string(cat) +
                                   ": fewer than two pair types with n >= 2, ANOVA skipped");
                continue;
            }
            const stats::AnovaResult res = stats::one_way_anova(usable);
            af << var.name << ',' << fmt_g(coarse.edges[cat]) << ',' << fmt_g(coarse.edges[cat + 1])
               << ',' << usable.size() << ',' << fmt_g(res.F) << ',' << fmt_g(res.p) << ','
               << res.df_between << ',' << res.df_within << '\n';
        }
    }
    if (!af) throw DataError(anova_path + ": write failed");
    af.close();

    write_manifest(ctx, {"input " + csv});
    json j;
    j["input"] = csv;
    j["rows"] = lreport.rows;
    j["pairs_retained"] = freport.pairs_retained;
    j["outputs"] = {rel_out(ctx, var_path), rel_out(ctx, moments_path), rel_out(ctx, category_path),
                    rel_out(ctx, anova_path)};
    j["warnings"] = warnings;
    write_summary(ctx, j);
    std::cout << "analyze: " << freport.pairs_retained << " pairs -> variability, moments, "
              << "spacing-category and ANOVA tables in " << ctx.out << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

json log_tail(const std::vector<distill::TrainLogRow>& log) {
    json j = json::object();
    if (log.empty()) return j;
    const distill::TrainLogRow& last = log.back();
    j["epochs"] = log.size();
    j["final_train_loss"] = last.train_loss;
    j["final_val_mse"] = last.val_mse;
    j["final_val_rmse"] = last.val_rmse;
    return j;
}

void cmd_train(const RunContext& ctx, const std::string& model) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::string hash = fmt_hex16(dataset_hash(ds.windows));

    std::string weights_path;
    std::string log_path;
    json j;
    if (model == "teacher") {
        const nn::LstmSpec spec = teacher_from_config(ctx.cfg);
        const nn::OptimizerSpec opt = optimizer_from_config(ctx.cfg, "teacher");
        const distill::TrainResult res = distill::train_teacher(ds, spec, opt, ctx.seed);
        weights_path = out_path(ctx, "teacher.dcfn");
        log_path = out_path(ctx, "train_teacher_log.csv");
        nn::save_weights(weights_path, nn::NetworkSpec{spec}, res.weights);
        distill::write_train_log(log_path, res.log);
        j = log_tail(res.log);
        j["parameters"] = res.weights.data.size();
        j["macs_per_sample"] = nn::lstm_macs(spec, ds.windows.steps);
    } else {
        const nn::MlpSpec spec = student_from_config(ctx.cfg, ds.windows.steps);
        const nn::OptimizerSpec opt = optimizer_from_config(ctx.cfg, "student");
        const distill::TrainResult res = distill::train_student_plain(ds, spec, opt, ctx.seed);
        weights_path = out_path(ctx, "student.dcfn");
        log_path = out_path(ctx, "train_student_log.csv");
        nn::save_weights(weights_path, nn::NetworkSpec{spec}, res.weights);
        distill::write_train_log(log_path, res.log);
        j = log_tail(res.log);
        j["parameters"] = res.weights.data.size();
        j["macs_per_sample"] = nn::mlp_macs(spec);
    }

    write_manifest(ctx, {"model " + model, "dataset_hash " + hash});
    j["model"] = model;
    j["dataset_hash"] = hash;
    j["weights"] = rel_out(ctx, weights_path);
    j["log"] = rel_out(ctx, log_path);
    write_summary(ctx, j);
    std::cout << "train " << model << ": val rmse "
              << (j.contains("final_val_rmse") ? fmt_g(j["final_val_rmse"].get<double>())
                                               : std::string("n/a"))
              << " m/s -> " << weights_path << "\n";
}

// ---------------------------------------------------------------------------
// distill / sweep
// ---------------------------------------------------------------------------

struct TeacherArtifact {
    std::string path;
    nn::LstmSpec spec;
    nn::Weights weights;
};

TeacherArtifact load_teacher(const RunContext& ctx, const std::string& flag_path) {
    const std::string path = flag_path.empty() ? out_path(ctx, "teacher.dcfn") : flag_path;
    require_artifact(path);
    nn::LoadedNetwork ln = nn::load_network(path);
    const auto* spec = std::get_if<nn::LstmSpec>(&ln.spec);
    if (spec == nullptr)
        throw ConfigError(path + ": expected recurrent teacher weights, found a feed-forward net");
    return {path, *spec, std::move(ln.weights)};
}

void cmd_distill(const RunContext& ctx, const std::string& teacher_flag) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::string hash = fmt_hex16(dataset_hash(ds.windows));
    const TeacherArtifact teacher = load_teacher(ctx, teacher_flag);

    distill::DistillConfig dc;
    dc.alpha = ctx.cfg.get_double("distill.alpha");
    dc.teacher_spec = teacher.spec;
    dc.teacher_weights = &teacher.weights;
    dc.student = student_from_config(ctx.cfg, ds.windows.steps);
    dc.optimizer = optimizer_from_config(ctx.cfg, "student");
    dc.seed = ctx.seed;
    dc.cache_teacher = ctx.cfg.get_bool("distill.cache_teacher");

    const distill::TrainResult res = distill::train_kdnn(ds, dc);
    const std::string weights_path = out_path(ctx, "kdnn.dcfn");
    const std::string log_path = out_path(ctx, "train_kdnn_log.csv");
    nn::save_weights(weights_path, nn::NetworkSpec{dc.student}, res.weights);
    distill::write_train_log(log_path, res.log);

    write_manifest(ctx, {"teacher " + teacher.path, "dataset_hash " + hash});
    json j = log_tail(res.log);
    j["alpha"] = dc.alpha;
    j["teacher"] = teacher.path;
    j["dataset_hash"] = hash;
    j["weights"] = rel_out(ctx, weights_path);
    j["log"] = rel_out(ctx, log_path);
    write_summary(ctx, j);
    std::cout << "distill: alpha " << fmt_g(dc.alpha) << ", val rmse "
              << (j.contains("final_val_rmse") ? fmt_g(j["final_val_rmse"].get<double>())
                                               : std::string("n/a"))
              << " m/s -> " << weights_path << "\n";
}

void cmd_sweep(const RunContext& ctx, const std::string& teacher_flag) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::string hash = fmt_hex16(dataset_hash(ds.windows));
    const TeacherArtifact teacher = load_teacher(ctx, teacher_flag);
    const std::vector<double> alphas = parse_alpha_grid(ctx.cfg.get_string("distill.alphas"));

    const nn::MlpSpec student = student_from_config(ctx.cfg, ds.windows.steps);
    const nn::OptimizerSpec opt = optimizer_from_config(ctx.cfg, "student");
    const distill::SweepResult sweep =
        distill::alpha_sweep(ds, teacher.spec, teacher.weights, student, opt, alphas, ctx.seed,
                             ctx.cfg.get_bool("distill.cache_teacher"));

    const std::string table_path = out_path(ctx, "alpha_sweep.csv");
    distill::write_alpha_table(table_path, sweep);
    const std::string best_path = out_path(ctx, "kdnn_best.dcfn");
    nn::save_weights(best_path, nn::NetworkSpec{student}, sweep.best_weights);
    const std::string baseline_path = out_path(ctx, "student_baseline.dcfn");
    nn::save_weights(baseline_path, nn::NetworkSpec{student}, sweep.student_weights);

    write_manifest(ctx, {"teacher " + teacher.path, "dataset_hash " + hash});
    json rows = json::array();
    for (const distill::AlphaRow& r : sweep.rows)
        rows.push_back(json{{"alpha", r.alpha},
                            {"rmse", r.rmse},
                            {"diff_vs_student", r.diff_vs_student}});
    json j;
    j["teacher"] = teacher.path;
    j["dataset_hash"] = hash;
    j["alphas"] = rows;
    j["student_rmse"] = sweep.student_rmse;
    j["best_alpha"] = sweep.best_alpha;
    j["best_rmse"] = sweep.best_rmse;
    j["table"] = rel_out(ctx, table_path);
    j["best_weights"] = rel_out(ctx, best_path);
    j["student_weights"] = rel_out(ctx, baseline_path);
    write_summary(ctx, j);
    std::cout << "sweep: best alpha " << fmt_g(sweep.best_alpha) << " (test rmse "
              << fmt_g(sweep.best_rmse) << " m/s vs student " << fmt_g(sweep.student_rmse)
              << ") -> " << table_path << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct StepModel {
    std::string name;
    bool physics = false;                 // per-pair parameterization
    eval::StepPredictor network;          // when !physics
};

std::size_t horizon_from_config(const RunContext& ctx) {
    const long h = ctx.cfg.get_int("eval.horizon");
    if (h < 0) throw ConfigError("eval.horizon must be >= 0");
    return h == 0 ? SIZE_MAX : static_cast<std::size_t>(h);
}

void cmd_evaluate(const RunContext& ctx, const ModelFlags& flags) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::string csv = resolve_input_csv(ctx);
    const PipelineResult pipe = rebuild_and_check(ctx, ds, csv);
    const double dt = ds.windows.dt;

    const std::vector<ModelFile> nets = collect_models(ctx, flags);
    const auto segments = best_segments(ds.windows, pipe.filtered);
    const auto params = pair_params(ctx, ds.windows, segments);

    // One-step predictors; the physics baseline always participates.
    std::vector<eval::NamedPredictor> predictors;
    for (const ModelFile& mf : nets)
        predictors.push_back(
            {mf.name, eval::make_network_predictor(mf.net.spec, mf.net.weights, ds.norm)});
    predictors.push_back({"gipps", eval::make_gipps_predictor(params, dt)});

    eval::EvalReport report = eval::evaluate_models(predictors, ds.windows, ds.split.test);
    report.dataset_hash = fmt_hex16(dataset_hash(ds.windows));

    // Closed-loop safety: minimum TTC per test pair per model, plus the
    // observed trajectory's own minimum for reference.
    const std::size_t horizon = horizon_from_config(ctx);
    const int steps = ds.windows.steps;
    std::vector<StepModel> step_models;
    for (const ModelFile& mf : nets) {
        step_models.push_back(
            {mf.name, false, eval::make_network_step(mf.net.spec, mf.net.weights, ds.norm, steps)});
    }
    step_models.push_back({"gipps", true, {}});

    std::vector<std::size_t> test_pairs;
    for (std::size_t pi = 0; pi < ds.windows.pair_ids.size(); ++pi) {
        if (ds.split.pair_split[pi] == 2 && segments[pi] != nullptr &&
            segments[pi]->points.size() > static_cast<std::size_t>(steps)) {
            test_pairs.push_back(pi);
        }
    }

    std::vector<eval::MinTtcRow> ttc_rows(test_pairs.size() * (step_models.size() + 1));
    parallel_for(test_pairs.size(), ctx.threads, [&](std::size_t k) {
        const std::size_t pi = test_pairs[k];
        const TrajectoryPair& pair = *segments[pi];
        const std::size_t base = k * (step_models.size() + 1);
        for (std::size_t m = 0; m < step_models.size(); ++m) {
            const StepModel& sm = step_models[m];
            const eval::StepPredictor fn =
                sm.physics ? eval::make_gipps_step(params[pi], dt) : sm.network;
            const eval::ClosedLoopResult r =
                eval::closed_loop_rollout(fn, pair, steps, horizon, dt);
            ttc_rows[base + m] = {sm.name, pair.pair_id, pair.cls, r.min_ttc, r.collision};
        }
        ttc_rows[base + step_models.size()] = {
            "observed", pair.pair_id, pair.cls,
            eval::observed_min_ttc(pair, static_cast<std::size_t>(steps)), false};
    });
    // Regroup model-major so the CSV reads as one block per model.
    std::vector<eval::MinTtcRow> ordered;
    ordered.reserve(ttc_rows.size());
    for (std::size_t m = 0; m <= step_models.size(); ++m)
        for (std::size_t k = 0; k < test_pairs.size(); ++k)
            ordered.push_back(std::move(ttc_rows[k * (step_models.size() + 1) + m]));
    report.min_ttc_rows = std::move(ordered);

    const std::string mh =
        write_manifest(ctx, {"input " + csv, "dataset_hash " + report.dataset_hash});
    const std::string report_path = out_path(ctx, "eval_report_" + mh + ".json");
    const std::string class_path = out_path(ctx, "rmse_by_class_" + mh + ".csv");
    const std::string pair_path = out_path(ctx, "rmse_by_pair_" + mh + ".csv");
    const std::string ttc_path = out_path(ctx, "min_ttc_" + mh + ".csv");
    eval::write_eval_report_json(report_path, report);
    eval::write_class_rmse_csv(class_path, report);
    eval::write_pair_rmse_csv(pair_path, report);
    eval::write_min_ttc_csv(ttc_path, report);

    std::vector<std::string> profile_paths;
    if (ctx.cfg.get_bool("eval.export_profiles")) {
        WindowSet test_set;
        test_set.steps = ds.windows.steps;
        test_set.dt = ds.windows.dt;
        test_set.history = ds.windows.history;
        test_set.pair_ids = ds.windows.pair_ids;
        test_set.pair_classes = ds.windows.pair_classes;
        for (std::size_t i : ds.split.test) test_set.windows.push_back(ds.windows.windows[i]);
        profile_paths =
            eval::speed_profile_export(predictors, test_set, out_path(ctx, "profiles_" + mh));
    }

    json rmse = json::object();
    for (std::size_t m = 0; m < report.model_names.size(); ++m)
        rmse[report.model_names[m]] = report.overall_rmse[m];
    json collisions = json::object();
    for (const StepModel& sm : step_models) collisions[sm.name] = 0;
    for (const eval::MinTtcRow& r : report.min_ttc_rows) {
        if (r.collision) collisions[r.model] = collisions[r.model].get<int>() + 1;
    }
    json j;
    j["input"] = csv;
    j["dataset_hash"] = report.dataset_hash;
    j["manifest_hash"] = mh;
    j["models"] = report.model_names;
    j["overall_rmse"] = rmse;
    j["test_windows"] = ds.split.test.size();
    j["test_pairs"] = test_pairs.size();
    j["collisions"] = collisions;
    j["outputs"] = {rel_out(ctx, report_path), rel_out(ctx, class_path), rel_out(ctx, pair_path),
                    rel_out(ctx, ttc_path)};
    j["profiles"] = json::array();
    for (const std::string& p : profile_paths) j["profiles"].push_back(rel_out(ctx, p));
    j["warnings"] = report.warnings;
    write_summary(ctx, j);

    std::cout << "evaluate: " << ds.split.test.size() << " test windows, " << test_pairs.size()
              << " test pairs";
    for (std::size_t m = 0; m < report.model_names.size(); ++m)
        std::cout << (m == 0 ? " | rmse " : ", ") << report.model_names[m] << " "
                  << fmt_g(report.overall_rmse[m]);
    std::cout << " -> " << report_path << "\n";
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

void cmd_rollout(const RunContext& ctx, const std::string& model, const std::string& weights_flag,
                 long limit) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::string csv = resolve_input_csv(ctx);
    const PipelineResult pipe = rebuild_and_check(ctx, ds, csv);
    const double dt = ds.windows.dt;
    const int steps = ds.windows.steps;
    const std::size_t horizon = horizon_from_config(ctx);

    const auto segments = best_segments(ds.windows, pipe.filtered);
    std::vector<gipps::GippsParams> params;
    eval::StepPredictor network;
    std::string weights_path;
    if (model == "gipps") {
        params = pair_params(ctx, ds.windows, segments);
    } else {
        const bool recurrent = model == "teacher";
        std::vector<std::string> defaults;
        if (model == "teacher") defaults = {"teacher.dcfn"};
        if (model == "student") defaults = {"student.dcfn"};
        if (model == "kdnn") defaults = {"kdnn_best.dcfn", "kdnn.dcfn"};
        auto mf = load_model(ctx, model, weights_flag, defaults, recurrent);
        if (!mf.has_value())
            throw DataError("missing dependency artifact: " + out_path(ctx, defaults.front()));
        weights_path = mf->path;
        network = eval::make_network_step(mf->net.spec, mf->net.weights, ds.norm, steps);
    }

    std::vector<std::size_t> test_pairs;
    for (std::size_t pi = 0; pi < ds.windows.pair_ids.size(); ++pi) {
        if (ds.split.pair_split[pi] == 2 && segments[pi] != nullptr &&
            segments[pi]->points.size() > static_cast<std::size_t>(steps)) {
            test_pairs.push_back(pi);
        }
    }
    if (limit > 0 && test_pairs.size() > static_cast<std::size_t>(limit))
        test_pairs.resize(static_cast<std::size_t>(limit));
    if (test_pairs.empty()) throw DataError("no test pairs long enough for a closed-loop rollout");

    const std::string dir = out_path(ctx, "rollout_" + sanitize_component(model));
    fs::create_directories(dir);

    struct RowSummary {
        std::string pair_id;
        PairClass cls = PairClass::HDV_HDV;
        std::size_t sim_steps = 0;
        double min_ttc = 0.0;
        bool collision = false;
        double observed_min_ttc = 0.0;
    };
    std::vector<RowSummary> rows(test_pairs.size());

    parallel_for(test_pairs.size(), ctx.threads, [&](std::size_t k) {
        const std::size_t pi = test_pairs[k];
        const TrajectoryPair& pair = *segments[pi];
        const eval::StepPredictor fn =
            model == "gipps" ? eval::make_gipps_step(params[pi], dt) : network;
        const eval::ClosedLoopResult r = eval::closed_loop_rollout(fn, pair, steps, horizon, dt);

        const std::string path = dir + "/" + sanitize_component(pair.pair_id) + ".csv";
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw DataError(path + ": cannot open for writing");
        f << "t,foll_speed,foll_pos,spacing,ttc\n";
        for (std::size_t i = 0; i < r.t.size(); ++i) {
            f << fmt_g(r.t[i]) << ',' << fmt_g(r.foll_speed[i]) << ',' << fmt_g(r.foll_pos[i])
              << ',' << fmt_g(r.spacing[i]) << ',' << fmt_g(r.ttc[i]) << '\n';
        }
        if (!f) throw DataError(path + ": write failed");

        rows[k] = {pair.pair_id,
                   pair.cls,
                   r.t.size(),
                   r.min_ttc,
                   r.collision,
                   eval::observed_min_ttc(pair, static_cast<std::size_t>(steps))};
    });

    const std::string sum_path = dir + "/summary.csv";
    std::ofstream sf(sum_path, std::ios::trunc);
    if (!sf) throw DataError(sum_path + ": cannot open for writing");
    sf << "pair_id,pair_type,sim_steps,min_ttc,collision,observed_min_ttc\n";
    std::size_t collisions = 0;
    for (const RowSummary& r : rows) {
        sf << r.pair_id << ',' << to_string(r.cls) << ',' << r.sim_steps << ',' << fmt_g(r.min_ttc)
           << ',' << (r.collision ? 1 : 0) << ',' << fmt_g(r.observed_min_ttc) << '\n';
        collisions += r.collision ? 1 : 0;
    }
    if (!sf) throw DataError(sum_path + ": write failed");
    sf.close();

    std::vector<std::string> extras = {"input " + csv, "model " + model,
                                       "dataset_hash " + fmt_hex16(dataset_hash(ds.windows))};
    if (!weights_path.empty()) extras.push_back("weights " + weights_path);
    write_manifest(ctx, extras);

    json j;
    j["model"] = model;
    j["input"] = csv;
    j["pairs"] = test_pairs.size();
    j["collisions"] = collisions;
    j["directory"] = rel_out(ctx, dir);
    if (!weights_path.empty()) j["weights"] = weights_path;
    write_summary(ctx, j);
    std::cout << "rollout " << model << ": " << test_pairs.size() << " pairs, " << collisions
              << " collisions -> " << dir << "\n";
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

void cmd_bench(const RunContext& ctx, const ModelFlags& flags) {
    Dataset ds = load_dataset_artifact(ctx);
    const std::vector<ModelFile> nets = collect_models(ctx, flags);
    if (nets.empty()) {
        throw DataError("missing dependency artifact: " + out_path(ctx, "teacher.dcfn") +
                        " (no trained network found; run train/distill first)");
    }

    const long batch_cfg = ctx.cfg.get_int("bench.batch");
    const long reps = ctx.cfg.get_int("bench.repetitions");
    if (batch_cfg < 1) throw ConfigError("bench.batch must be >= 1");
    if (reps < 1) throw ConfigError("bench.repetitions must be >= 1");
    const std::size_t n_windows = ds.windows.windows.size();
    if (n_windows == 0) throw DataError(dataset_path(ctx) + ": dataset holds no windows");
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(batch_cfg), n_windows);

    std::vector<std::size_t> idx(batch);
    for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
    const NormalizedData nd = normalize_windows(ds.windows, idx, ds.norm);

    std::vector<eval::MeteringResult> metered;
    for (const ModelFile& mf : nets) {
        eval::MeteringResult m = eval::compute_metering(mf.net.spec, mf.net.weights, nd,
                                                        ds.windows.steps, static_cast<int>(reps));
        m.model = mf.name;
        metered.push_back(m);
    }

    // Analytic counts are deterministic and live apart from the wall-clock
    // measurements, which legitimately vary between runs.
    const std::string macs_path = out_path(ctx, "bench_macs.csv");
    {
        std::ofstream f(macs_path, std::ios::trunc);
        if (!f) throw DataError(macs_path + ": cannot open for writing");
        f << "model,macs_per_sample,parameters\n";
        for (const ModelFile& mf : nets)
            f << mf.name << ',' << model_macs(mf.net.spec, ds.windows.steps) << ','
              << mf.net.weights.data.size() << '\n';
        if (!f) throw DataError(macs_path + ": write failed");
    }
    const std::string timing_path = out_path(ctx, "bench_timing.csv");
    {
        eval::EvalReport wrap;
        wrap.metering = metered;
        eval::write_metering_csv(timing_path, wrap);
    }

    write_manifest(ctx, {"dataset_hash " + fmt_hex16(dataset_hash(ds.windows))});
    json macs = json::object();
    for (const ModelFile& mf : nets) macs[mf.name] = model_macs(mf.net.spec, ds.windows.steps);
    json j;
    j["batch"] = batch;
    j["repetitions"] = reps;
    j["macs_per_sample"] = macs;
    if (macs.contains("teacher") && macs.contains("student")) {
        j["mac_ratio_teacher_vs_student"] =
            static_cast<double>(macs["teacher"].get<std::uint64_t>()) /
            static_cast<double>(macs["student"].get<std::uint64_t>());
    }
    j["macs_csv"] = rel_out(ctx, macs_path);
    j["timing_csv"] = rel_out(ctx, timing_path);
    write_summary(ctx, j);

    for (const eval::MeteringResult& m : metered) {
        std::cout << "bench " << m.model << ": " << m.macs_per_sample << " MACs/sample, median "
                  << fmt_g(m.wall_median_us) << " us/batch of " << m.batch << " ("
                  << fmt_g(m.us_per_10k) << " us per 10k)\n";
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"car-following knowledge-distillation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    app.add_option("--config", g.config_path, "configuration file (key=value lines)");
    g.out_opt = app.add_option("--out", g.out, "output directory (run.out)");
    g.seed_opt = app.add_option("--seed", g.seed, "root seed (run.seed)");
    g.threads_opt = app.add_option("--threads", g.threads, "worker cap (run.threads)");

    // Flags that shadow configuration keys write through the same validation
    // and show up in the run manifest.
    const auto opt_override = [](std::vector<Override>& ov, CLI::Option* opt,
                                 const std::string& key, const std::string& value,
                                 const std::string& flag) {
        if (opt != nullptr && opt->count() > 0) ov.push_back({key, value, flag});
    };

    // --- synth ---
    auto* sc_synth = app.add_subcommand("synth", "generate a synthetic paired-trajectory CSV");
    long long synth_pairs = 0;
    auto* synth_pairs_opt =
        sc_synth->add_option("--pairs", synth_pairs, "pairs per class (synth.pairs_per_class)");
    sc_synth->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, synth_pairs_opt, "synth.pairs_per_class", std::to_string(synth_pairs),
                     "--pairs");
        cmd_synth(make_context(g, "synth", ov));
    });

    std::string input_path;
    std::string dataset_flag;
    const auto add_input = [&](CLI::App* sc) {
        return sc->add_option("--input", input_path, "trajectory CSV (data.csv)");
    };
    const auto add_dataset = [&](CLI::App* sc) {
        return sc->add_option("--dataset", dataset_flag, "window dataset path (data.dataset)");
    };

    // --- ingest ---
    auto* sc_ingest =
        app.add_subcommand("ingest", "window, normalize and split a trajectory CSV");
    auto* ingest_input = add_input(sc_ingest);
    auto* ingest_dataset = add_dataset(sc_ingest);
    sc_ingest->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, ingest_input, "data.csv", input_path, "--input");
        opt_override(ov, ingest_dataset, "data.dataset", dataset_flag, "--dataset");
        cmd_ingest(make_context(g, "ingest", ov));
    });

    // --- analyze ---
    auto* sc_analyze =
        app.add_subcommand("analyze", "descriptive statistics for a trajectory CSV");
    auto* analyze_input = add_input(sc_analyze);
    sc_analyze->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, analyze_input, "data.csv", input_path, "--input");
        cmd_analyze(make_context(g, "analyze", ov));
    });

    // --- train ---
    auto* sc_train = app.add_subcommand("train", "train the teacher or the plain student");
    std::string train_model;
    sc_train->add_option("--model", train_model, "teacher or student")
        ->required()
        ->check(CLI::IsMember({"teacher", "student"}));
    auto* train_dataset = add_dataset(sc_train);
    sc_train->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, train_dataset, "data.dataset", dataset_flag, "--dataset");
        cmd_train(make_context(g, "train_" + train_model, ov), train_model);
    });

    // --- distill ---
    auto* sc_distill =
        app.add_subcommand("distill", "train the student against the frozen teacher");
    std::string teacher_flag;
    double alpha_flag = 0.0;
    sc_distill->add_option("--teacher", teacher_flag, "teacher weights file");
    auto* distill_alpha =
        sc_distill->add_option("--alpha", alpha_flag, "composite loss weight (distill.alpha)");
    auto* distill_dataset = add_dataset(sc_distill);
    sc_distill->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, distill_alpha, "distill.alpha", fmt_g(alpha_flag, 17), "--alpha");
        opt_override(ov, distill_dataset, "data.dataset", dataset_flag, "--dataset");
        cmd_distill(make_context(g, "distill", ov), teacher_flag);
    });

    // --- sweep ---
    auto* sc_sweep = app.add_subcommand("sweep", "alpha sweep against the frozen teacher");
    std::string alphas_flag;
    auto* sweep_teacher = sc_sweep->add_option("--teacher", teacher_flag, "teacher weights file");
    auto* sweep_alphas =
        sc_sweep->add_option("--alphas", alphas_flag, "grid lo:hi:step or list (distill.alphas)");
    auto* sweep_dataset = add_dataset(sc_sweep);
    (void)sweep_teacher;
    sc_sweep->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, sweep_alphas, "distill.alphas", alphas_flag, "--alphas");
        opt_override(ov, sweep_dataset, "data.dataset", dataset_flag, "--dataset");
        cmd_sweep(make_context(g, "sweep", ov), teacher_flag);
    });

    // --- evaluate ---
    auto* sc_eval =
        app.add_subcommand("evaluate", "one-step and closed-loop comparison of all models");
    ModelFlags mflags;
    const auto add_model_flags = [&](CLI::App* sc) {
        sc->add_option("--teacher", mflags.teacher, "teacher weights file");
        sc->add_option("--student", mflags.student, "student weights file");
        sc->add_option("--kdnn", mflags.kdnn, "distilled student weights file");
    };
    add_model_flags(sc_eval);
    auto* eval_input = add_input(sc_eval);
    auto* eval_dataset = add_dataset(sc_eval);
    long long horizon_flag = 0;
    auto* eval_horizon =
        sc_eval->add_option("--horizon", horizon_flag, "closed-loop steps (eval.horizon)");
    bool profiles_flag = false;
    auto* eval_profiles = sc_eval->add_flag("--profiles", profiles_flag,
                                            "export per-pair speed series (eval.export_profiles)");
    sc_eval->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, eval_input, "data.csv", input_path, "--input");
        opt_override(ov, eval_dataset, "data.dataset", dataset_flag, "--dataset");
        opt_override(ov, eval_horizon, "eval.horizon", std::to_string(horizon_flag), "--horizon");
        opt_override(ov, eval_profiles, "eval.export_profiles", "true", "--profiles");
        cmd_evaluate(make_context(g, "evaluate", ov), mflags);
    });

    // --- rollout ---
    auto* sc_rollout =
        app.add_subcommand("rollout", "export closed-loop series for one model");
    std::string rollout_model;
    sc_rollout->add_option("--model", rollout_model, "teacher, student, kdnn or gipps")
        ->required()
        ->check(CLI::IsMember({"teacher", "student", "kdnn", "gipps"}));
    std::string rollout_weights;
    sc_rollout->add_option("--weights", rollout_weights, "weights file (overrides the default)");
    long long rollout_limit = 0;
    sc_rollout->add_option("--limit", rollout_limit, "max test pairs to export (0 = all)");
    auto* rollout_input = add_input(sc_rollout);
    auto* rollout_dataset = add_dataset(sc_rollout);
    auto* rollout_horizon =
        sc_rollout->add_option("--horizon", horizon_flag, "closed-loop steps (eval.horizon)");
    sc_rollout->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, rollout_input, "data.csv", input_path, "--input");
        opt_override(ov, rollout_dataset, "data.dataset", dataset_flag, "--dataset");
        opt_override(ov, rollout_horizon, "eval.horizon", std::to_string(horizon_flag),
                     "--horizon");
        cmd_rollout(make_context(g, "rollout_" + rollout_model, ov), rollout_model,
                    rollout_weights, rollout_limit);
    });

    // --- bench ---
    auto* sc_bench = app.add_subcommand("bench", "meter inference cost of the trained models");
    add_model_flags(sc_bench);
    auto* bench_dataset = add_dataset(sc_bench);
    long long bench_batch = 0;
    auto* bench_batch_opt =
        sc_bench->add_option("--batch", bench_batch, "windows per pass (bench.batch)");
    long long bench_reps = 0;
    auto* bench_reps_opt = sc_bench->add_option("--repetitions", bench_reps,
                                                "timed passes per model (bench.repetitions)");
    sc_bench->callback([&] {
        std::vector<Override> ov;
        opt_override(ov, bench_dataset, "data.dataset", dataset_flag, "--dataset");
        opt_override(ov, bench_batch_opt, "bench.batch", std::to_string(bench_batch), "--batch");
        opt_override(ov, bench_reps_opt, "bench.repetitions", std::to_string(bench_reps),
                     "--repetitions");
        cmd_bench(make_context(g, "bench", ov), mflags);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const dcf::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const dcf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dcf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

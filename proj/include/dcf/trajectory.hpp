#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dcf/common.hpp"

namespace dcf {

/// Follower-lead naming: HDV_AV is a human-driven follower behind an
/// autonomous lead. AV-AV pairs are rejected at ingestion.
enum class PairClass : std::uint8_t { HDV_HDV = 0, HDV_AV = 1, AV_HDV = 2 };

constexpr int kNumClasses = 3;
constexpr int kChannels = 3;  // spacing, lead speed, speed difference

std::string to_string(PairClass c);
std::optional<PairClass> parse_pair_class(std::string_view s);

struct TrajectoryPoint {
    double t = 0.0;          // seconds
    double lead_pos = 0.0;   // m
    double foll_pos = 0.0;   // m
    double lead_speed = 0.0; // m/s
    double foll_speed = 0.0; // m/s
    double lead_accel = 0.0; // m/s^2
    double foll_accel = 0.0; // m/s^2
    double lead_jerk = 0.0;  // m/s^3
    double foll_jerk = 0.0;  // m/s^3
    double spacing = 0.0;    // lead_pos - foll_pos, >= 0
    double speed_diff = 0.0; // foll_speed - lead_speed; positive means closing
};

struct TrajectoryPair {
    std::string pair_id;
    PairClass cls = PairClass::HDV_HDV;
    std::vector<TrajectoryPoint> points;
    bool lead_accel_present = false;  // accel came from the source file
    bool foll_accel_present = false;
};

/// Column-name map for the canonical CSV input. Any processed export of
/// paired trajectories can be adapted by renaming here. Accel columns are
/// optional; when absent they are derived by finite differences.
struct CsvSchema {
    std::string pair_id = "pair_id";
    std::string pair_type = "pair_type";
    std::string t = "t";
    std::string lead_pos = "lead_pos";
    std::string foll_pos = "foll_pos";
    std::string lead_speed = "lead_speed";
    std::string foll_speed = "foll_speed";
    std::string lead_accel = "lead_accel";
    std::string foll_accel = "foll_accel";
};

struct LoadReport {
    std::array<std::size_t, kNumClasses> pairs_per_class{};
    std::size_t rows = 0;
};

/// Reads the CSV at `path`, groups rows into time-sorted pairs and checks
/// the uniform-timestep contract (dt within 1e-6). Throws DataError with
/// the offending line number or pair id.
std::vector<TrajectoryPair> load_pairs(const std::string& path, const CsvSchema& schema,
                                       double dt = 0.1, LoadReport* report = nullptr);

/// Writes pairs in the canonical CSV schema, byte-stable for fixed inputs.
void write_pairs_csv(const std::string& path, const std::vector<TrajectoryPair>& pairs,
                     const CsvSchema& schema = {});

/// Fills spacing and speed difference for every point and, where the source
/// had no accel columns, accel by central differences of speed (one-sided at
/// the ends). Jerk is always differenced from accel. Needs >= 3 points.
[[nodiscard]] TrajectoryPair derive_kinematics(TrajectoryPair pair, double dt = 0.1);

struct FilterReport {
    std::size_t pairs_in = 0;
    std::size_t points_removed = 0;
    std::size_t segments_dropped = 0;  // contiguous runs shorter than min_points
    std::size_t segments_out = 0;
    std::size_t pairs_retained = 0;    // distinct pair ids with at least one segment
};

/// Removes points with spacing >= max_spacing and splits each pair into
/// maximal contiguous segments. Segments shorter than min_points are
/// dropped. Segment pairs keep the original pair_id.
std::vector<TrajectoryPair> filter_spacing(const std::vector<TrajectoryPair>& pairs,
                                           double max_spacing = 50.0, double dt = 0.1,
                                           std::size_t min_points = 11,
                                           FilterReport* report = nullptr);

/// One supervised sample: `steps` contiguous timesteps of
/// (spacing, lead speed, speed difference) and the follower speed one step
/// after the last feature timestamp.
struct Window {
    std::vector<double> features;  // steps * kChannels, step-major
    double target = 0.0;           // follower speed at t_end + dt, m/s
    double t_end = 0.0;            // timestamp of the last feature step
    int pair = -1;                 // index into WindowSet::pair_ids
    PairClass cls = PairClass::HDV_HDV;
};

struct WindowSet {
    int steps = 10;
    double dt = 0.1;
    double history = 1.0;
    std::vector<std::string> pair_ids;
    std::vector<PairClass> pair_classes;  // parallel to pair_ids
    std::vector<Window> windows;          // sorted by (pair_id, t_end)

    const double* feat(std::size_t w) const { return windows[w].features.data(); }
};

/// Sliding windows with stride one step. history must be an integer
/// multiple of dt. Windows never span a timestamp gap.
WindowSet make_windows(const std::vector<TrajectoryPair>& pairs, double history = 1.0,
                       double dt = 0.1);

/// Per-channel min-max ranges fitted on training windows only. The sigmoid
/// output head requires targets in [0,1], hence min-max rather than
/// standardization.
struct NormalizationSpec {
    std::array<double, kChannels> feat_min{};
    std::array<double, kChannels> feat_max{};
    double target_min = 0.0;
    double target_max = 1.0;

    double apply_feature(int channel, double x) const {
        return (x - feat_min[channel]) / (feat_max[channel] - feat_min[channel]);
    }
    double invert_feature(int channel, double u) const {
        return feat_min[channel] + u * (feat_max[channel] - feat_min[channel]);
    }
    double apply_target(double y) const {
        return (y - target_min) / (target_max - target_min);
    }
    double invert_target(double u) const {
        return target_min + u * (target_max - target_min);
    }
};

extern const std::array<std::string, kChannels + 1> kChannelNames;

/// Throws DataError naming the channel if any channel is constant.
NormalizationSpec fit_normalizer(const WindowSet& set, const std::vector<std::size_t>& subset);

/// Dense normalized copies ready for the network code.
struct NormalizedData {
    std::size_t n = 0;
    int steps = 0;
    std::vector<double> features;  // n * steps * kChannels
    std::vector<double> targets;   // n
};

NormalizedData normalize_windows(const WindowSet& set, const std::vector<std::size_t>& subset,
                                 const NormalizationSpec& norm);

/// Pair-level split: windows of one pair never straddle splits. Pairs are
/// apportioned 60/20/20 by window mass within each class.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::vector<std::uint8_t> pair_split;  // per pair index: 0 train, 1 val, 2 test
};

DatasetSplit split_dataset(const WindowSet& set, std::uint64_t seed);

struct Dataset {
    WindowSet windows;
    NormalizationSpec norm;
    DatasetSplit split;
};

/// Fingerprint of the window payload (features, targets, pair table).
std::uint64_t dataset_hash(const WindowSet& set);

/// Binary window file ("DCFW1", little-endian 64-bit floats) plus a text
/// sidecar at path + ".meta" carrying the NormalizationSpec and hash.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace dcf

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dcf/trajectory.hpp"

namespace dcf::stats {

/// Spacing bins over (edges[i], edges[i+1]]. Values at or below the first
/// edge or above the last fall outside every bin.
struct SpacingBins {
    std::vector<double> edges;

    int count() const { return static_cast<int>(edges.size()) - 1; }
    double mid(int bin) const { return 0.5 * (edges[bin] + edges[bin + 1]); }
    int bin_of(double v) const;
    void validate() const;  // strictly increasing, >= 2 edges
};

struct CellStd {
    std::size_t n = 0;
    std::optional<double> stddev;  // sample std (n-1); null when n < 2
};

struct VariabilityTable {
    SpacingBins bins;
    std::vector<std::vector<CellStd>> cells;  // [class][bin]
};

/// Sample standard deviation of follower speed per (pair class, spacing bin).
VariabilityTable speed_variability(const std::vector<TrajectoryPair>& pairs,
                                   const SpacingBins& bins);

/// Fisher-Pearson skewness m3 / m2^1.5 with population central moments.
/// Throws DataError on n < 3 or zero variance.
double skewness(std::span<const double> xs);

/// Excess kurtosis m4 / m2^2 - 3 with population central moments.
/// Throws DataError on n < 4 or zero variance.
double kurtosis(std::span<const double> xs);

struct AnovaResult {
    double F = 0.0;
    double p = 1.0;
    int df_between = 0;
    int df_within = 0;
};

/// One-way ANOVA across groups. Needs >= 2 groups, each with n >= 2 and
/// total n > group count. All-equal data yields F = 0, p = 1.
AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

/// Time-to-collision: spacing / closing speed when the follower is closing
/// (speed_diff > 0), +infinity otherwise. Negative spacing is an error.
double ttc(double spacing, double speed_diff);

/// Per-cell moment summary of one point variable (follower speed difference
/// by default; follower accel also supported for the aggressiveness view).
struct GroupSummary {
    PairClass cls = PairClass::HDV_HDV;
    int bin = 0;
    std::size_t n = 0;
    std::optional<double> mean;
    std::optional<double> stddev;    // sample (n-1); null when n < 2
    std::optional<double> skewness;  // null when n < 3 or degenerate
    std::optional<double> kurtosis;  // excess; null when n < 4 or degenerate
};

std::vector<GroupSummary> moment_summaries(
    const std::vector<TrajectoryPair>& pairs, const SpacingBins& bins,
    const std::function<double(const TrajectoryPoint&)>& variable);

/// One row of the spacing-category summary table: mean follower speed, mean
/// follower accel and mean finite TTC per (category, class).
struct CategoryCell {
    int category = 0;
    PairClass cls = PairClass::HDV_HDV;
    std::size_t n = 0;
    std::optional<double> mean_speed;
    std::optional<double> mean_accel;
    std::optional<double> mean_ttc;  // over finite TTC values only
    std::size_t n_finite_ttc = 0;
};

std::vector<CategoryCell> summarize_categories(const std::vector<TrajectoryPair>& pairs,
                                         const SpacingBins& categories);

/// Upper-tail p of the F distribution via the regularized incomplete beta.
double f_upper_tail_p(double F, int df1, int df2);

/// I_x(a, b), exposed for the test oracles.
double reg_inc_beta(double a, double b, double x);

}  // namespace dcf::stats

#include "dcf/stats.hpp"

#include <cmath>
#include <limits>

namespace dcf::stats {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;  // population central moments
    double m3 = 0.0;
    double m4 = 0.0;
};

Moments central_moments(std::span<const double> xs) {
    Moments m;
    m.n = xs.size();
    if (m.n == 0) return m;
    double s = 0.0;
    for (double x : xs) s += x;
    m.mean = s / static_cast<double>(m.n);
    double s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (double x : xs) {
        double d = x - m.mean;
        double d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    double n = static_cast<double>(m.n);
    m.m2 = s2 / n;
    m.m3 = s3 / n;
    m.m4 = s4 / n;
    return m;
}

double betacf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

int SpacingBins::bin_of(double v) const {
    for (int i = 0; i + 1 < static_cast<int>(edges.size()); ++i) {
        if (v > edges[i] && v <= edges[i + 1]) return i;
    }
    return -1;
}

void SpacingBins::validate() const {
    if (edges.size() < 2) throw ConfigError("spacing bins need at least 2 edges");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) {
            throw ConfigError("spacing bin edges must be strictly increasing");
        }
    }
}

VariabilityTable speed_variability(const std::vector<TrajectoryPair>& pairs,
                                   const SpacingBins& bins) {
    bins.validate();
    VariabilityTable table;
    table.bins = bins;
    std::vector<std::vector<std::vector<double>>> values(
        kNumClasses, std::vector<std::vector<double>>(bins.count()));
    for (const auto& pair : pairs) {
        for (const auto& p : pair.points) {
            int b = bins.bin_of(p.spacing);
            if (b >= 0) values[static_cast<int>(pair.cls)][b].push_back(p.foll_speed);
        }
    }
    table.cells.assign(kNumClasses, std::vector<CellStd>(bins.count()));
    for (int c = 0; c < kNumClasses; ++c) {
        for (int b = 0; b < bins.count(); ++b) {
            const auto& xs = values[c][b];
            CellStd cell;
            cell.n = xs.size();
            if (xs.size() >= 2) {
                double mean = 0.0;
                for (double x : xs) mean += x;
                mean /= static_cast<double>(xs.size());
                double ss = 0.0;
                for (double x : xs) ss += (x - mean) * (x - mean);
                cell.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
            }
            table.cells[c][b] = cell;
        }
    }
    return table;
}

double skewness(std::span<const double> xs) {
    if (xs.size() < 3) throw DataError("skewness needs n >= 3");
    Moments m = central_moments(xs);
    if (m.m2 <= 0.0) throw DataError("skewness: degenerate sample (zero variance)");
    return m.m3 / std::pow(m.m2, 1.5);
}

double kurtosis(std::span<const double> xs) {
    if (xs.size() < 4) throw DataError("kurtosis needs n >= 4");
    Moments m = central_moments(xs);
    if (m.m2 <= 0.0) throw DataError("kurtosis: degenerate sample (zero variance)");
    return m.m4 / (m.m2 * m.m2) - 3.0;
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw DataError("one_way_anova needs >= 2 groups");
    std::size_t total_n = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw DataError("one_way_anova: every group needs n >= 2");
        total_n += g.size();
    }
    const int k = static_cast<int>(groups.size());
    if (total_n <= static_cast<std::size_t>(k)) {
        throw DataError("one_way_anova: total n must exceed group count");
    }

    double grand_sum = 0.0;
    for (const auto& g : groups) {
        for (double x : g) grand_sum += x;
    }
    const double grand_mean = grand_sum / static_cast<double>(total_n);

    double ssb = 0.0, ssw = 0.0;
    for (const auto& g : groups) {
        double mean = 0.0;
        for (double x : g) mean += x;
        mean /= static_cast<double>(g.size());
        ssb += static_cast<double>(g.size()) * (mean - grand_mean) * (mean - grand_mean);
        for (double x : g) ssw += (x - mean) * (x - mean);
    }

    AnovaResult r;
    r.df_between = k - 1;
    r.df_within = static_cast<int>(total_n) - k;
    if (ssw == 0.0 && ssb == 0.0) {
        r.F = 0.0;
        r.p = 1.0;
        return r;
    }
    if (ssw == 0.0) {
        r.F = kInf;
        r.p = 0.0;
        return r;
    }
    r.F = (ssb / r.df_between) / (ssw / r.df_within);
    r.p = f_upper_tail_p(r.F, r.df_between, r.df_within);
    return r;
}

double ttc(double spacing, double speed_diff) {
    if (spacing < 0.0) throw DataError("ttc: negative spacing");
    if (speed_diff > 0.0) return spacing / speed_diff;
    return kInf;
}

std::vector<GroupSummary> moment_summaries(
    const std::vector<TrajectoryPair>& pairs, const SpacingBins& bins,
    const std::function<double(const TrajectoryPoint&)>& variable) {
    bins.validate();
    std::vector<std::vector<std::vector<double>>> values(
        kNumClasses, std::vector<std::vector<double>>(bins.count()));
    for (const auto& pair : pairs) {
        for (const auto& p : pair.points) {
            int b = bins.bin_of(p.spacing);
            if (b >= 0) values[static_cast<int>(pair.cls)][b].push_back(variable(p));
        }
    }
    std::vector<GroupSummary> out;
    for (int c = 0; c < kNumClasses; ++c) {
        for (int b = 0; b < bins.count(); ++b) {
            const auto& xs = values[c][b];
            GroupSummary s;
            s.cls = static_cast<PairClass>(c);
            s.bin = b;
            s.n = xs.size();
            if (!xs.empty()) {
                Moments m = central_moments(xs);
                s.mean = m.mean;
                if (xs.size() >= 2) {
                    double ss = m.m2 * static_cast<double>(xs.size());
                    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
                }
                if (xs.size() >= 3 && m.m2 > 0.0) s.skewness = m.m3 / std::pow(m.m2, 1.5);
                if (xs.size() >= 4 && m.m2 > 0.0) s.kurtosis = m.m4 / (m.m2 * m.m2) - 3.0;
            }
            out.push_back(s);
        }
    }
    return out;
}

std::vector<CategoryCell> summarize_categories(const std::vector<TrajectoryPair>& pairs,
                                         const SpacingBins& categories) {
    categories.validate();
    struct Acc {
        std::size_t n = 0;
        double speed = 0.0, accel = 0.0, ttc_sum = 0.0;
        std::size_t n_ttc = 0;
    };
    std::vector<std::vector<Acc>> acc(kNumClasses, std::vector<Acc>(categories.count()));
    for (const auto& pair : pairs) {
        for (const auto& p : pair.points) {
            int b = categories.bin_of(p.spacing);
            if (b < 0) continue;
            Acc& a = acc[static_cast<int>(pair.cls)][b];
            a.n++;
            a.speed += p.foll_speed;
            a.accel += p.foll_accel;
            double t = ttc(p.spacing, p.speed_diff);
            if (std::isfinite(t)) {
                a.ttc_sum += t;
                a.n_ttc++;
            }
        }
    }
    std::vector<CategoryCell> out;
    for (int b = 0; b < categories.count(); ++b) {
        for (int c = 0; c < kNumClasses; ++c) {
            const Acc& a = acc[c][b];
            CategoryCell cell;
            cell.category = b;
            cell.cls = static_cast<PairClass>(c);
            cell.n = a.n;
            cell.n_finite_ttc = a.n_ttc;
            if (a.n > 0) {
                cell.mean_speed = a.speed / static_cast<double>(a.n);
                cell.mean_accel = a.accel / static_cast<double>(a.n);
            }
            if (a.n_ttc > 0) cell.mean_ttc = a.ttc_sum / static_cast<double>(a.n_ttc);
            out.push_back(cell);
        }
    }
    return out;
}

double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return bt * betacf(a, b, x) / a;
    }
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double f_upper_tail_p(double F, int df1, int df2) {
    if (!(F >= 0.0)) throw DataError("f_upper_tail_p: F must be >= 0");
    if (std::isinf(F)) return 0.0;
    const double d1 = df1, d2 = df2;
    return reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F));
}

}  // namespace dcf::stats

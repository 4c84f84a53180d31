#include "dcf/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace dcf {

namespace {

constexpr double kTimeTol = 1e-6;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        std::size_t a = f.find_first_not_of(" \t");
        std::size_t b = f.find_last_not_of(" \t");
        f = (a == std::string::npos) ? std::string{} : f.substr(a, b - a + 1);
    }
    return out;
}

double parse_number(const std::string& s, std::size_t line_no, const std::string& col) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + s +
                        "' in column " + col);
    }
    return v;
}

}  // namespace

const std::array<std::string, kChannels + 1> kChannelNames = {"spacing", "lead_speed",
                                                              "speed_diff", "target"};

std::string to_string(PairClass c) {
    switch (c) {
        case PairClass::HDV_HDV: return "HDV-HDV";
        case PairClass::HDV_AV: return "HDV-AV";
        case PairClass::AV_HDV: return "AV-HDV";
    }
    return "?";
}

std::optional<PairClass> parse_pair_class(std::string_view s) {
    if (s == "HDV-HDV") return PairClass::HDV_HDV;
    if (s == "HDV-AV") return PairClass::HDV_AV;
    if (s == "AV-HDV") return PairClass::AV_HDV;
    return std::nullopt;
}

std::vector<TrajectoryPair> load_pairs(const std::string& path, const CsvSchema& schema,
                                       double dt, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
    auto header = split_csv_line(line);

    auto col_index = [&](const std::string& name, bool required) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            if (required)
                throw DataError("'" + path + "': header missing required column '" + name + "'");
            return -1;
        }
        return static_cast<int>(it - header.begin());
    };

    const int c_id = col_index(schema.pair_id, true);
    const int c_type = col_index(schema.pair_type, true);
    const int c_t = col_index(schema.t, true);
    const int c_lp = col_index(schema.lead_pos, true);
    const int c_fp = col_index(schema.foll_pos, true);
    const int c_lv = col_index(schema.lead_speed, true);
    const int c_fv = col_index(schema.foll_speed, true);
    const int c_la = col_index(schema.lead_accel, false);
    const int c_fa = col_index(schema.foll_accel, false);

    std::map<std::string, TrajectoryPair> by_id;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        const std::string& id = fields[c_id];
        const std::string& type_str = fields[c_type];
        if (type_str == "AV-AV") {
            throw DataError("line " + std::to_string(line_no) +
                            ": AV-AV pairs are not supported (pair '" + id + "')");
        }
        auto cls = parse_pair_class(type_str);
        if (!cls) {
            throw DataError("line " + std::to_string(line_no) + ": unknown pair type '" +
                            type_str + "'");
        }

        TrajectoryPoint p;
        p.t = parse_number(fields[c_t], line_no, schema.t);
        p.lead_pos = parse_number(fields[c_lp], line_no, schema.lead_pos);
        p.foll_pos = parse_number(fields[c_fp], line_no, schema.foll_pos);
        p.lead_speed = parse_number(fields[c_lv], line_no, schema.lead_speed);
        p.foll_speed = parse_number(fields[c_fv], line_no, schema.foll_speed);
        if (p.lead_speed < 0.0 || p.foll_speed < 0.0) {
            throw DataError("line " + std::to_string(line_no) + ": negative speed");
        }
        if (p.lead_pos < p.foll_pos) {
            throw DataError("line " + std::to_string(line_no) +
                            ": lead behind follower (negative spacing)");
        }
        if (c_la >= 0) p.lead_accel = parse_number(fields[c_la], line_no, schema.lead_accel);
        if (c_fa >= 0) p.foll_accel = parse_number(fields[c_fa], line_no, schema.foll_accel);

        auto [it, inserted] = by_id.try_emplace(id);
        TrajectoryPair& pair = it->second;
        if (inserted) {
            pair.pair_id = id;
            pair.cls = *cls;
            pair.lead_accel_present = c_la >= 0;
            pair.foll_accel_present = c_fa >= 0;
        } else if (pair.cls != *cls) {
            throw DataError("line " + std::to_string(line_no) + ": pair '" + id +
                            "' changes type mid-file");
        }
        pair.points.push_back(p);
        ++rows;
    }

    std::vector<TrajectoryPair> pairs;
    pairs.reserve(by_id.size());
    LoadReport rep;
    rep.rows = rows;
    for (auto& [id, pair] : by_id) {
        std::sort(pair.points.begin(), pair.points.end(),
                  [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.t < b.t; });
        for (std::size_t i = 1; i < pair.points.size(); ++i) {
            double gap = pair.points[i].t - pair.points[i - 1].t;
            if (std::abs(gap - dt) > kTimeTol) {
                throw DataError("pair '" + id + "': non-uniform timestep (" + fmt_g(gap) +
                                " s between t=" + fmt_g(pair.points[i - 1].t) + " and t=" +
                                fmt_g(pair.points[i].t) + ", expected " + fmt_g(dt) + ")");
            }
        }
        rep.pairs_per_class[static_cast<int>(pair.cls)]++;
        pairs.push_back(std::move(pair));
    }
    if (report) *report = rep;
    return pairs;
}

void write_pairs_csv(const std::string& path, const std::vector<TrajectoryPair>& pairs,
                     const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << schema.pair_id << ',' << schema.pair_type << ',' << schema.t << ',' << schema.lead_pos
        << ',' << schema.foll_pos << ',' << schema.lead_speed << ',' << schema.foll_speed << '\n';
    for (const auto& pair : pairs) {
        for (const auto& p : pair.points) {
            out << pair.pair_id << ',' << to_string(pair.cls) << ',' << fmt_g(p.t) << ','
                << fmt_g(p.lead_pos) << ',' << fmt_g(p.foll_pos) << ',' << fmt_g(p.lead_speed)
                << ',' << fmt_g(p.foll_speed) << '\n';
        }
    }
}

TrajectoryPair derive_kinematics(TrajectoryPair pair, double dt) {
    auto& pts = pair.points;
    if (pts.size() < 3) {
        throw DataError("pair '" + pair.pair_id + "': need at least 3 points to difference, got " +
                        std::to_string(pts.size()));
    }
    const std::size_t n = pts.size();
    for (auto& p : pts) {
        p.spacing = p.lead_pos - p.foll_pos;
        p.speed_diff = p.foll_speed - p.lead_speed;
    }

    auto central_diff = [&](auto get, auto set) {
        std::vector<double> d(n);
        d[0] = (get(pts[1]) - get(pts[0])) / dt;
        d[n - 1] = (get(pts[n - 1]) - get(pts[n - 2])) / dt;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            d[i] = (get(pts[i + 1]) - get(pts[i - 1])) / (2.0 * dt);
        }
        for (std::size_t i = 0; i < n; ++i) set(pts[i], d[i]);
    };

    if (!pair.lead_accel_present) {
        central_diff([](const TrajectoryPoint& p) { return p.lead_speed; },
                     [](TrajectoryPoint& p, double v) { p.lead_accel = v; });
    }
    if (!pair.foll_accel_present) {
        central_diff([](const TrajectoryPoint& p) { return p.foll_speed; },
                     [](TrajectoryPoint& p, double v) { p.foll_accel = v; });
    }
    central_diff([](const TrajectoryPoint& p) { return p.lead_accel; },
                 [](TrajectoryPoint& p, double v) { p.lead_jerk = v; });
    central_diff([](const TrajectoryPoint& p) { return p.foll_accel; },
                 [](TrajectoryPoint& p, double v) { p.foll_jerk = v; });
    return pair;
}

std::vector<TrajectoryPair> filter_spacing(const std::vector<TrajectoryPair>& pairs,
                                           double max_spacing, double dt,
                                           std::size_t min_points, FilterReport* report) {
    FilterReport rep;
    rep.pairs_in = pairs.size();
    std::vector<TrajectoryPair> out;
    for (const auto& pair : pairs) {
        bool retained = false;
        TrajectoryPair seg;
        auto flush = [&] {
            if (seg.points.size() >= min_points) {
                rep.segments_out++;
                retained = true;
                out.push_back(std::move(seg));
            } else if (!seg.points.empty()) {
                rep.segments_dropped++;
            }
            seg = TrajectoryPair{};
        };
        for (std::size_t i = 0; i < pair.points.size(); ++i) {
            const auto& p = pair.points[i];
            if (p.spacing >= max_spacing) {
                rep.points_removed++;
                flush();
                continue;
            }
            // a timestamp gap in the source also breaks the segment
            if (!seg.points.empty() && std::abs(p.t - seg.points.back().t - dt) > kTimeTol) {
                flush();
            }
            if (seg.points.empty()) {
                seg.pair_id = pair.pair_id;
                seg.cls = pair.cls;
                seg.lead_accel_present = pair.lead_accel_present;
                seg.foll_accel_present = pair.foll_accel_present;
            }
            seg.points.push_back(p);
        }
        flush();
        if (retained) rep.pairs_retained++;
    }
    if (report) *report = rep;
    return out;
}

WindowSet make_windows(const std::vector<TrajectoryPair>& pairs, double history, double dt) {
    double steps_f = history / dt;
    int steps = static_cast<int>(std::lround(steps_f));
    if (steps < 1 || std::abs(steps_f - steps) > 1e-9) {
        throw ConfigError("history (" + fmt_g(history) + " s) must be an integer multiple of dt (" +
                          fmt_g(dt) + " s)");
    }

    WindowSet set;
    set.steps = steps;
    set.dt = dt;
    set.history = history;

    std::map<std::string, int> id_index;
    for (const auto& pair : pairs) {
        auto it = id_index.find(pair.pair_id);
        int pi;
        if (it == id_index.end()) {
            pi = static_cast<int>(set.pair_ids.size());
            id_index.emplace(pair.pair_id, pi);
            set.pair_ids.push_back(pair.pair_id);
            set.pair_classes.push_back(pair.cls);
        } else {
            pi = it->second;
        }

        const auto& pts = pair.points;
        // maximal contiguous runs; windows never span a gap
        std::size_t run_start = 0;
        for (std::size_t i = 1; i <= pts.size(); ++i) {
            bool brk = (i == pts.size()) || std::abs(pts[i].t - pts[i - 1].t - dt) > kTimeTol;
            if (!brk) continue;
            std::size_t run_len = i - run_start;
            if (run_len >= static_cast<std::size_t>(steps) + 1) {
                for (std::size_t w = run_start; w + steps < i; ++w) {
                    Window win;
                    win.features.resize(static_cast<std::size_t>(steps) * kChannels);
                    for (int k = 0; k < steps; ++k) {
                        const auto& p = pts[w + k];
                        win.features[k * kChannels + 0] = p.spacing;
                        win.features[k * kChannels + 1] = p.lead_speed;
                        win.features[k * kChannels + 2] = p.speed_diff;
                    }
                    win.target = pts[w + steps].foll_speed;
                    win.t_end = pts[w + steps - 1].t;
                    win.pair = pi;
                    win.cls = pair.cls;
                    set.windows.push_back(std::move(win));
                }
            }
            run_start = i;
        }
    }

    std::sort(set.windows.begin(), set.windows.end(), [&](const Window& a, const Window& b) {
        if (set.pair_ids[a.pair] != set.pair_ids[b.pair])
            return set.pair_ids[a.pair] < set.pair_ids[b.pair];
        return a.t_end < b.t_end;
    });
    return set;
}

NormalizationSpec fit_normalizer(const WindowSet& set, const std::vector<std::size_t>& subset) {
    if (subset.empty()) throw DataError("fit_normalizer: empty training set");
    NormalizationSpec norm;
    for (int c = 0; c < kChannels; ++c) {
        norm.feat_min[c] = std::numeric_limits<double>::infinity();
        norm.feat_max[c] = -std::numeric_limits<double>::infinity();
    }
    norm.target_min = std::numeric_limits<double>::infinity();
    norm.target_max = -std::numeric_limits<double>::infinity();

    for (std::size_t wi : subset) {
        const Window& w = set.windows.at(wi);
        for (int k = 0; k < set.steps; ++k) {
            for (int c = 0; c < kChannels; ++c) {
                double v = w.features[k * kChannels + c];
                norm.feat_min[c] = std::min(norm.feat_min[c], v);
                norm.feat_max[c] = std::max(norm.feat_max[c], v);
            }
        }
        norm.target_min = std::min(norm.target_min, w.target);
        norm.target_max = std::max(norm.target_max, w.target);
    }

    for (int c = 0; c < kChannels; ++c) {
        if (!(norm.feat_max[c] > norm.feat_min[c])) {
            throw DataError("fit_normalizer: channel '" + kChannelNames[c] +
                            "' is constant (min=max=" + fmt_g(norm.feat_min[c]) + ")");
        }
    }
    if (!(norm.target_max > norm.target_min)) {
        throw DataError("fit_normalizer: channel 'target' is constant (min=max=" +
                        fmt_g(norm.target_min) + ")");
    }
    return norm;
}

NormalizedData normalize_windows(const WindowSet& set, const std::vector<std::size_t>& subset,
                                 const NormalizationSpec& norm) {
    NormalizedData d;
    d.n = subset.size();
    d.steps = set.steps;
    d.features.resize(d.n * static_cast<std::size_t>(set.steps) * kChannels);
    d.targets.resize(d.n);
    std::size_t row = 0;
    for (std::size_t wi : subset) {
        const Window& w = set.windows.at(wi);
        double* dst = d.features.data() + row * set.steps * kChannels;
        for (int k = 0; k < set.steps; ++k) {
            for (int c = 0; c < kChannels; ++c) {
                dst[k * kChannels + c] = norm.apply_feature(c, w.features[k * kChannels + c]);
            }
        }
        d.targets[row] = norm.apply_target(w.target);
        ++row;
    }
    return d;
}

DatasetSplit split_dataset(const WindowSet& set, std::uint64_t seed) {
    const std::size_t n_pairs = set.pair_ids.size();
    std::vector<std::size_t> windows_per_pair(n_pairs, 0);
    for (const auto& w : set.windows) windows_per_pair[w.pair]++;

    DatasetSplit split;
    split.pair_split.assign(n_pairs, 0);

    constexpr double kTargets[3] = {0.6, 0.2, 0.2};
    for (int cls = 0; cls < kNumClasses; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t pi = 0; pi < n_pairs; ++pi) {
            if (static_cast<int>(set.pair_classes[pi]) == cls && windows_per_pair[pi] > 0)
                members.push_back(pi);
        }
        if (members.empty()) continue;
        if (members.size() < 3) {
            throw DataError("split_dataset: class " +
                            to_string(static_cast<PairClass>(cls)) + " has only " +
                            std::to_string(members.size()) + " pairs (need >= 3)");
        }
        Rng rng(stage_seed(seed, "split", static_cast<std::uint64_t>(cls)));
        rng.shuffle(members);

        // One pair to each split first so no split misses a class, then
        // sequential apportionment by window mass against the 60/20/20 quotas.
        double assigned[3] = {0.0, 0.0, 0.0};
        double total = 0.0;
        for (std::size_t k = 0; k < members.size(); ++k) {
            std::size_t pi = members[k];
            double mass = static_cast<double>(windows_per_pair[pi]);
            total += mass;
            int s;
            if (k < 3) {
                s = static_cast<int>(k);
            } else {
                s = 0;
                double best = -std::numeric_limits<double>::infinity();
                for (int cand = 0; cand < 3; ++cand) {
                    double deficit = kTargets[cand] * total - assigned[cand];
                    if (deficit > best) {
                        best = deficit;
                        s = cand;
                    }
                }
            }
            assigned[s] += mass;
            split.pair_split[pi] = static_cast<std::uint8_t>(s);
        }
    }

    for (std::size_t wi = 0; wi < set.windows.size(); ++wi) {
        switch (split.pair_split[set.windows[wi].pair]) {
            case 0: split.train.push_back(wi); break;
            case 1: split.validation.push_back(wi); break;
            default: split.test.push_back(wi); break;
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Binary dataset file
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(buf, v);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("dataset file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint64_t dataset_hash(const WindowSet& set) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t pi = 0; pi < set.pair_ids.size(); ++pi) {
        h = fnv1a(set.pair_ids[pi], h);
        std::uint8_t c = static_cast<std::uint8_t>(set.pair_classes[pi]);
        h = fnv1a_bytes(&c, 1, h);
    }
    for (const auto& w : set.windows) {
        h = fnv1a_bytes(w.features.data(), w.features.size() * sizeof(double), h);
        h = fnv1a_bytes(&w.target, sizeof(double), h);
    }
    return h;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    const WindowSet& set = ds.windows;
    const std::size_t n_pairs = set.pair_ids.size();
    std::vector<std::vector<std::size_t>> by_pair(n_pairs);
    for (std::size_t wi = 0; wi < set.windows.size(); ++wi) {
        by_pair[set.windows[wi].pair].push_back(wi);
    }

    std::string buf;
    buf.reserve(64 + set.windows.size() * (set.steps * kChannels + 2) * 8);
    buf += "DCFW1";
    put_f64(buf, set.dt);
    put_f64(buf, set.history);
    put_u32(buf, kChannels);
    put_u32(buf, static_cast<std::uint32_t>(set.steps));
    put_u64(buf, n_pairs);
    for (std::size_t pi = 0; pi < n_pairs; ++pi) {
        put_u32(buf, static_cast<std::uint32_t>(set.pair_ids[pi].size()));
        buf += set.pair_ids[pi];
        buf.push_back(static_cast<char>(set.pair_classes[pi]));
        std::uint8_t sp = pi < ds.split.pair_split.size() ? ds.split.pair_split[pi] : 0;
        buf.push_back(static_cast<char>(sp));
        put_u64(buf, by_pair[pi].size());
    }
    put_u64(buf, set.windows.size());
    for (std::size_t pi = 0; pi < n_pairs; ++pi) {
        for (std::size_t wi : by_pair[pi]) {
            const Window& w = set.windows[wi];
            put_f64(buf, w.t_end);
            for (double v : w.features) put_f64(buf, v);
            put_f64(buf, w.target);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to '" + path + "'");

    std::ofstream meta(path + ".meta");
    if (!meta) throw DataError("cannot write '" + path + ".meta'");
    meta << "format = DCFW1\n";
    meta << "dt = " << fmt_g(set.dt, 17) << "\n";
    meta << "history = " << fmt_g(set.history, 17) << "\n";
    meta << "channels = " << kChannels << "\n";
    meta << "steps = " << set.steps << "\n";
    meta << "pairs = " << n_pairs << "\n";
    meta << "windows = " << set.windows.size() << "\n";
    meta << "hash = " << fmt_hex16(dataset_hash(set)) << "\n";
    for (int c = 0; c < kChannels; ++c) {
        meta << "norm." << kChannelNames[c] << ".min = " << fmt_g(ds.norm.feat_min[c], 17) << "\n";
        meta << "norm." << kChannelNames[c] << ".max = " << fmt_g(ds.norm.feat_max[c], 17) << "\n";
    }
    meta << "norm.target.min = " << fmt_g(ds.norm.target_min, 17) << "\n";
    meta << "norm.target.max = " << fmt_g(ds.norm.target_max, 17) << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();
    Reader r(buf);
    if (r.bytes(5) != "DCFW1") throw DataError("'" + path + "' is not a DCFW1 dataset");

    Dataset ds;
    WindowSet& set = ds.windows;
    set.dt = r.f64();
    set.history = r.f64();
    std::uint32_t channels = r.u32();
    if (channels != kChannels) {
        throw DataError("'" + path + "': unsupported channel count " + std::to_string(channels));
    }
    set.steps = static_cast<int>(r.u32());
    std::uint64_t n_pairs = r.u64();
    std::vector<std::uint64_t> counts(n_pairs);
    for (std::uint64_t pi = 0; pi < n_pairs; ++pi) {
        std::uint32_t len = r.u32();
        set.pair_ids.push_back(r.bytes(len));
        std::uint8_t cls = static_cast<std::uint8_t>(r.bytes(1)[0]);
        if (cls >= kNumClasses) throw DataError("'" + path + "': bad class byte");
        set.pair_classes.push_back(static_cast<PairClass>(cls));
        std::uint8_t sp = static_cast<std::uint8_t>(r.bytes(1)[0]);
        if (sp > 2) throw DataError("'" + path + "': bad split byte");
        ds.split.pair_split.push_back(sp);
        counts[pi] = r.u64();
    }
    std::uint64_t n_windows = r.u64();
    set.windows.reserve(n_windows);
    for (std::uint64_t pi = 0; pi < n_pairs; ++pi) {
        for (std::uint64_t k = 0; k < counts[pi]; ++k) {
            Window w;
            w.pair = static_cast<int>(pi);
            w.cls = set.pair_classes[pi];
            w.t_end = r.f64();
            w.features.resize(static_cast<std::size_t>(set.steps) * kChannels);
            for (auto& v : w.features) v = r.f64();
            w.target = r.f64();
            set.windows.push_back(std::move(w));
        }
    }
    if (set.windows.size() != n_windows) throw DataError("'" + path + "': window count mismatch");

    // windows are stored grouped by pair in pair-table order; restore the
    // canonical (pair_id, t_end) ordering
    std::sort(set.windows.begin(), set.windows.end(), [&](const Window& a, const Window& b) {
        if (set.pair_ids[a.pair] != set.pair_ids[b.pair])
            return set.pair_ids[a.pair] < set.pair_ids[b.pair];
        return a.t_end < b.t_end;
    });
    for (std::size_t wi = 0; wi < set.windows.size(); ++wi) {
        switch (ds.split.pair_split[set.windows[wi].pair]) {
            case 0: ds.split.train.push_back(wi); break;
            case 1: ds.split.validation.push_back(wi); break;
            default: ds.split.test.push_back(wi); break;
        }
    }

    // sidecar
    std::ifstream meta(path + ".meta");
    if (!meta) throw DataError("missing sidecar '" + path + ".meta'");
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            std::size_t a = s.find_first_not_of(" \t");
            std::size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> double {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError("sidecar missing key '" + key + "'");
        return std::strtod(it->second.c_str(), nullptr);
    };
    for (int c = 0; c < kChannels; ++c) {
        ds.norm.feat_min[c] = get("norm." + kChannelNames[c] + ".min");
        ds.norm.feat_max[c] = get("norm." + kChannelNames[c] + ".max");
        if (!(ds.norm.feat_max[c] > ds.norm.feat_min[c])) {
            throw DataError("sidecar: degenerate range for '" + kChannelNames[c] + "'");
        }
    }
    ds.norm.target_min = get("norm.target.min");
    ds.norm.target_max = get("norm.target.max");
    if (!(ds.norm.target_max > ds.norm.target_min)) {
        throw DataError("sidecar: degenerate range for 'target'");
    }
    return ds;
}

}  // namespace dcf

#include "dcf/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "dcf/common.hpp"
#include "dcf/synth.hpp"

extern char** environ;

namespace dcf::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string env_name(const std::string& key) {
    std::string out = "DCF_";
    for (char c : key)
        out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return out;
}

std::string class_token(int c) {
    switch (c) {
        case 0: return "hdv_hdv";
        case 1: return "hdv_av";
        default: return "av_hdv";
    }
}

std::vector<KeyInfo> build_registry() {
    std::vector<KeyInfo> keys = {
        {"data.csv", "", "input trajectory CSV for ingest/analyze"},
        {"data.dataset", "", "window dataset path; empty means <out>/dataset.dcfw"},
        {"data.dt", "0.1", "sampling interval, s"},
        {"data.history", "1.0", "feature window length, s"},
        {"data.max_spacing", "50", "car-following spacing cutoff, m"},
        {"data.min_points", "11", "minimum contiguous segment length kept by the filter"},

        {"synth.pairs_per_class", "50", "generated pairs per class"},

        {"stats.variability_edges", "5,15,25,35,45", "spacing bin edges for speed variability, m"},
        {"stats.category_edges", "0,10,15,30", "spacing category edges for the ANOVA table, m"},

        {"student.hidden", "60,60", "student hidden layer widths"},
        {"student.learning_rate", "0.01", "student learning rate"},
        {"student.batch_size", "100", "student batch size"},
        {"student.epochs", "5", "student training epochs"},

        {"teacher.layers", "475,61", "teacher recurrent layer widths"},
        {"teacher.dropout", "0.3", "teacher inter-layer dropout rate"},
        {"teacher.projection", "0", "optional ReLU projection width before the head (0 = off)"},
        {"teacher.learning_rate", "0.0016", "teacher learning rate"},
        {"teacher.batch_size", "161", "teacher batch size"},
        {"teacher.epochs", "10", "teacher training epochs"},

        {"optimizer.kind", "adam", "adam or sgd"},
        {"optimizer.beta1", "0.9", "Adam first-moment decay"},
        {"optimizer.beta2", "0.999", "Adam second-moment decay"},
        {"optimizer.epsilon", "1e-8", "Adam epsilon"},

        {"distill.alpha", "0.5", "composite loss weight on observed data"},
        {"distill.alphas", "0.1:0.9:0.1", "sweep grid: lo:hi:step or comma list"},
        {"distill.cache_teacher", "true", "precompute teacher predictions once per run"},

        {"gipps.a_max", "1.7", "desired acceleration, m/s^2"},
        {"gipps.b", "-3", "desired braking, m/s^2 (negative)"},
        {"gipps.b_hat", "-3.5", "assumed lead braking, m/s^2 (negative)"},
        {"gipps.v", "13.9", "desired speed, m/s"},
        {"gipps.s_eff", "6.5", "effective lead size + margin, m"},
        {"gipps.tau", "1.0", "reaction time, s"},
        {"gipps.fit", "true", "fit parameters per pair before evaluating"},

        {"eval.horizon", "0", "closed-loop steps after warm-up; 0 = to the end of the pair"},
        {"eval.export_profiles", "false", "write per-pair speed series CSVs"},

        {"bench.batch", "2000", "windows per metering pass"},
        {"bench.repetitions", "5", "timed repetitions per model"},

        {"run.seed", "42", "root seed; all stage seeds derive from it"},
        {"run.threads", "1", "worker cap for parallel-safe stages"},
        {"run.out", "out", "output directory"},
    };

    // Scenario presets, one block per pair class, defaults straight from the
    // built-in presets.
    const auto presets = synth::default_presets();
    for (int c = 0; c < 3; ++c) {
        const synth::ScenarioPreset& p = presets[c];
        const std::string base = "synth." + class_token(c) + ".";
        const auto num = [](double v) { return fmt_g(v, 17); };
        keys.push_back({base + "a_max", num(p.mean.a_max), "preset mean desired acceleration"});
        keys.push_back({base + "b", num(p.mean.b), "preset mean desired braking"});
        keys.push_back({base + "b_hat", num(p.mean.b_hat), "preset mean assumed lead braking"});
        keys.push_back({base + "v", num(p.mean.V), "preset mean desired speed"});
        keys.push_back({base + "s_eff", num(p.mean.s_eff), "preset mean effective lead size"});
        keys.push_back({base + "tau", num(p.mean.tau), "preset follower reaction time, s"});
        keys.push_back({base + "jitter", num(p.jitter), "relative parameter jitter"});
        keys.push_back({base + "drive_var", num(p.drive_var), "follower drive-state wander"});
        keys.push_back({base + "noise_std", num(p.noise_std), "follower speed noise, m/s"});
        keys.push_back({base + "base_speed", num(p.base_speed), "lead cruise speed, m/s"});
        keys.push_back({base + "speed_amp", num(p.speed_amp), "lead oscillation amplitude, m/s"});
        keys.push_back({base + "stop_prob", num(p.stop_prob), "probability of a lead full stop"});
        keys.push_back({base + "min_duration", num(p.min_duration), "scenario duration lower bound, s"});
        keys.push_back({base + "max_duration", num(p.max_duration), "scenario duration upper bound, s"});
    }
    return keys;
}

}  // namespace

const std::vector<KeyInfo>& registry() {
    static const std::vector<KeyInfo> keys = build_registry();
    return keys;
}

Config::Config() {
    for (const KeyInfo& k : registry()) defaults_[k.key] = k.def;
}

Config Config::load(const std::string& path) {
    Config cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError(path + ": cannot open config file");
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                    path + ":" + std::to_string(lineno));
        }
    }

    // DCF_ environment overrides, applied on top of the file.
    for (char** e = environ; e && *e; ++e) {
        const std::string entry(*e);
        if (entry.rfind("DCF_", 0) != 0) continue;
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        const std::string name = entry.substr(0, eq);
        const std::string value = entry.substr(eq + 1);
        bool known = false;
        for (const KeyInfo& k : registry()) {
            if (env_name(k.key) == name) {
                cfg.set(k.key, value, name);
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError(name + ": unknown configuration variable");
    }
    return cfg;
}

void Config::set(const std::string& key, const std::string& value, const std::string& origin) {
    if (defaults_.find(key) == defaults_.end())
        throw ConfigError(origin + ": unknown configuration key '" + key + "'");
    values_[key] = value;
}

bool Config::is_set(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    auto def = defaults_.find(key);
    if (def == defaults_.end())
        throw ConfigError("unknown configuration key '" + key + "'");
    return def->second;
}

double Config::get_double(const std::string& key) const {
    const std::string raw = get_string(key);
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    if (end == raw.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected a number, got '" + raw + "'");
    return v;
}

long Config::get_int(const std::string& key) const {
    const std::string raw = get_string(key);
    char* end = nullptr;
    const long v = std::strtol(raw.c_str(), &end, 10);
    if (end == raw.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected an integer, got '" + raw + "'");
    return v;
}

bool Config::get_bool(const std::string& key) const {
    std::string raw = get_string(key);
    std::transform(raw.begin(), raw.end(), raw.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
    const std::string raw = get_string(key);
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        std::size_t comma = raw.find(',', pos);
        if (comma == std::string::npos) comma = raw.size();
        const std::string item = trim(raw.substr(pos, comma - pos));
        if (!item.empty()) {
            char* end = nullptr;
            const double v = std::strtod(item.c_str(), &end);
            if (end == item.c_str() || *end != '\0')
                throw ConfigError("config key '" + key + "': bad list item '" + item + "'");
            out.push_back(v);
        }
        pos = comma + 1;
    }
    return out;
}

std::vector<int> Config::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_doubles(key)) {
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ConfigError("config key '" + key + "': expected integers");
        out.push_back(i);
    }
    return out;
}

std::string Config::snapshot() const {
    std::string out;
    for (const auto& [key, def] : defaults_) {  // std::map: sorted
        auto it = values_.find(key);
        out += key;
        out += " = ";
        out += (it != values_.end() ? it->second : def);
        out += '\n';
    }
    return out;
}

void Config::write_snapshot(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f << snapshot();
    if (!f) throw DataError(path + ": write failed");
}

}  // namespace dcf::config

#pragma once

#include <map>
#include <string>
#include <vector>

namespace dcf::config {

struct KeyInfo {
    std::string key;
    std::string def;  // default value, as written in a config file
    const char* doc;
};

/// Every key a config file, DCF_ environment variable, or CLI override may
/// set. Unknown keys are rejected outright.
const std::vector<KeyInfo>& registry();

/// Flat key=value configuration with dotted section prefixes
/// (`student.epochs = 5`). '#' starts a comment; blank lines are ignored.
/// Environment variables override file values: DCF_ plus the key upper-cased
/// with dots replaced by underscores (DCF_STUDENT_EPOCHS=7).
class Config {
public:
    /// Defaults only.
    Config();

    /// Defaults, then the file (if path non-empty), then DCF_ environment
    /// overrides.
    static Config load(const std::string& path);

    /// Validates the key against the registry. `origin` names the source for
    /// error messages ("--seed", "config.txt:12", "DCF_RUN_SEED").
    void set(const std::string& key, const std::string& value, const std::string& origin);

    bool is_set(const std::string& key) const;  // explicitly set, not defaulted

    std::string get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;  // comma list
    std::vector<int> get_ints(const std::string& key) const;

    /// Every registry key with its effective value, sorted, one per line —
    /// the reproducibility snapshot written into each run directory.
    std::string snapshot() const;
    void write_snapshot(const std::string& path) const;

private:
    std::map<std::string, std::string> values_;    // explicit settings only
    std::map<std::string, std::string> defaults_;  // full registry
};

}  // namespace dcf::config

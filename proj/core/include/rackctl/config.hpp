#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rackctl {

// INI-style key/value configuration with [section] headers.
//
//   [thermo]
//   air_density = 1.19
//   supply_fraction_preset = uniform
//
// Lines starting with '#' or ';' are comments. Values keep everything after
// the first '=' (trimmed), so comma-separated lists are plain values.
// Lookups use "section.key" paths; error messages carry the same path.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& path) const;

    std::string get_string(const std::string& path) const;
    std::string get_string(const std::string& path, const std::string& fallback) const;
    double get_double(const std::string& path) const;
    double get_double(const std::string& path, double fallback) const;
    long long get_int(const std::string& path) const;
    long long get_int(const std::string& path, long long fallback) const;
    bool get_bool(const std::string& path) const;
    bool get_bool(const std::string& path, bool fallback) const;
    std::vector<double> get_double_list(const std::string& path) const;
    std::vector<double> get_double_list(const std::string& path, const std::vector<double>& fallback) const;

    // Command-line overrides: later sources win.
    void set(const std::string& path, const std::string& value);

    // Keys in "section.key" order, for serialization and hashing.
    std::vector<std::pair<std::string, std::string>> items() const;

    // Render back to the file format (sorted, normalized).
    std::string to_string() const;

    const std::string& origin() const { return origin_; }

private:
    std::string lookup(const std::string& path) const;

    std::map<std::string, std::string> values_; // "section.key" -> raw value
    std::string origin_;
};

// FNV-1a 64-bit hash of a byte string, hex encoded. Used for run manifests.
std::string fnv1a_hex(const std::string& bytes);

} // namespace rackctl

#include "rackctl/config.hpp"

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rackctl/errors.hpp"

namespace rackctl {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
}

Config Config::from_string(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        std::string path = section.empty() ? key : section + "." + key;
        cfg.values_[path] = value;
    }
    return cfg;
}

bool Config::has(const std::string& path) const {
    return values_.count(path) != 0;
}

std::string Config::lookup(const std::string& path) const {
    auto it = values_.find(path);
    if (it == values_.end())
        throw ConfigError("missing config key: " + path + " (from " + (origin_.empty() ? "<empty>" : origin_) + ")");
    return it->second;
}

std::string Config::get_string(const std::string& path) const { return lookup(path); }

std::string Config::get_string(const std::string& path, const std::string& fallback) const {
    auto it = values_.find(path);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& path) const {
    const std::string raw = lookup(path);
    try {
        size_t pos = 0;
        double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + path + ": not a number: '" + raw + "'");
    }
}

double Config::get_double(const std::string& path, double fallback) const {
    return has(path) ? get_double(path) : fallback;
}

long long Config::get_int(const std::string& path) const {
    const std::string raw = lookup(path);
    try {
        size_t pos = 0;
        long long v = std::stoll(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + path + ": not an integer: '" + raw + "'");
    }
}

long long Config::get_int(const std::string& path, long long fallback) const {
    return has(path) ? get_int(path) : fallback;
}

bool Config::get_bool(const std::string& path) const {
    std::string raw = lookup(path);
    for (auto& c : raw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("config key " + path + ": not a boolean: '" + raw + "'");
}

bool Config::get_bool(const std::string& path, bool fallback) const {
    return has(path) ? get_bool(path) : fallback;
}

std::vector<double> Config::get_double_list(const std::string& path) const {
    const std::string raw = lookup(path);
    std::vector<double> out;
    std::istringstream in(raw);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty())
            throw ConfigError("config key " + path + ": empty list element");
        try {
            size_t pos = 0;
            out.push_back(std::stod(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("config key " + path + ": not a number: '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError("config key " + path + ": empty list");
    return out;
}

std::vector<double> Config::get_double_list(const std::string& path, const std::vector<double>& fallback) const {
    return has(path) ? get_double_list(path) : fallback;
}

void Config::set(const std::string& path, const std::string& value) {
    values_[path] = value;
}

std::vector<std::pair<std::string, std::string>> Config::items() const {
    return {values_.begin(), values_.end()};
}

std::string Config::to_string() const {
    std::string out;
    std::string current_section;
    bool first = true;
    for (const auto& [path, value] : values_) {
        auto dot = path.rfind('.');
        std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
        std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
        if (section != current_section || first) {
            if (!first) out += "\n";
            out += "[" + section + "]\n";
            current_section = section;
            first = false;
        }
        out += key + " = " + value + "\n";
    }
    return out;
}

std::string fnv1a_hex(const std::string& bytes) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace rackctl

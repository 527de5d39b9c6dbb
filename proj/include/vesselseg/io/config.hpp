#pragma once

// Flat key=value configuration. '#' starts a comment; blank lines are
// ignored; whitespace around keys and values is trimmed.

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "vesselseg/core/errors.hpp"

namespace vesselseg::io {

class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "config") {
        Config c;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (c.values_.count(key))
                throw FormatError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            c.values_[key] = trim(line.substr(eq + 1));
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw FormatError("config: cannot open '" + path + "'");
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw FormatError("config: key '" + key + "' expects a number, got '" + it->second + "'");
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        long long v = 0;
        const auto& s = it->second;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw FormatError("config: key '" + key + "' expects an integer, got '" + s + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const auto& s = it->second;
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw FormatError("config: key '" + key + "' expects a boolean, got '" + s + "'");
    }

    /// Throws on keys outside `known`, naming the first offender.
    void require_known(const std::set<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (!known.count(k)) throw FormatError("config: unknown key '" + k + "'");
    }

private:
    std::map<std::string, std::string> values_;

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
};

} // namespace vesselseg::io

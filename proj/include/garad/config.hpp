#pragma once

#include "garad/core.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace garad {

/// Flat key=value configuration with [section] headers; keys are stored as
/// "section.key". '#' starts a comment, blank lines are skipped.
class Config {
public:
    Config() = default;

    static Config parse(std::istream& in, const std::string& origin = "<stream>") {
        Config cfg;
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path);
        return parse(f, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as number");
        }
    }

    int get_int(const std::string& key, int def) const {
        const double v = get_double(key, def);
        const int i = static_cast<int>(std::llround(v));
        if (std::abs(v - i) > 1e-9) throw ConfigError("config key '" + key + "': expected integer");
        return i;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (it->second == "1" || it->second == "true" || it->second == "on") return true;
        if (it->second == "0" || it->second == "false" || it->second == "off") return false;
        throw ConfigError("config key '" + key + "': expected boolean, got '" + it->second + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stoi(trim(tok)));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': cannot parse '" + tok + "' as integer");
            }
        }
        return out;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Rejects keys in `section` that are not in the allowed list.
    void validate_section(const std::string& section, const std::vector<std::string>& allowed) const {
        for (const auto& [key, value] : values_) {
            const auto dot = key.find('.');
            if (dot == std::string::npos || key.substr(0, dot) != section) continue;
            const std::string name = key.substr(dot + 1);
            bool ok = false;
            for (const auto& a : allowed)
                if (a == name) {
                    ok = true;
                    break;
                }
            if (!ok) throw ConfigError("unknown config key '" + key + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace garad

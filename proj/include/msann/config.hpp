#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msann/common.hpp"

namespace msann {

// Ordered "key = value" text config. '#' starts a comment; blank lines are
// skipped. Serialization preserves insertion order so configs round-trip.
class KvConfig {
public:
    static KvConfig parse_text(const std::string& text) {
        KvConfig cfg;
        std::istringstream stream(text);
        std::string line;
        int lineno = 0;
        while (std::getline(stream, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (trim(line).empty()) continue;
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + " lacks '=': " + line);
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
            cfg.set(key, value);
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str());
    }

    std::string serialize() const {
        std::ostringstream out;
        for (const auto& key : order_) out << key << " = " << values_.at(key) << "\n";
        return out.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write config file: " + path);
        out << serialize();
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) order_.push_back(key);
        values_[key] = value;
    }
    void set(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }
    void set(const std::string& key, double v) {
        std::ostringstream os;
        os << v;
        set(key, os.str());
    }
    void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? values_.at(key) : fallback;
    }

    std::int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        return has(key) ? to_int(key, values_.at(key)) : fallback;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? to_double(key, values_.at(key)) : fallback;
    }

    bool get_bool(const std::string& key) const { return to_bool(key, get_string(key)); }
    bool get_bool(const std::string& key, bool fallback) const {
        return has(key) ? to_bool(key, values_.at(key)) : fallback;
    }

    std::vector<std::int64_t> get_int_list(const std::string& key) const {
        std::vector<std::int64_t> out;
        std::istringstream stream(get_string(key));
        std::string item;
        while (std::getline(stream, item, ','))
            if (!trim(item).empty()) out.push_back(to_int(key, trim(item)));
        return out;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        std::vector<double> out;
        std::istringstream stream(get_string(key));
        std::string item;
        while (std::getline(stream, item, ','))
            if (!trim(item).empty()) out.push_back(to_double(key, trim(item)));
        return out;
    }

    const std::vector<std::string>& keys() const { return order_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
    static std::int64_t to_int(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const std::int64_t x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
        }
    }
    static double to_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
        }
    }
    static bool to_bool(const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
    }

    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

}  // namespace msann

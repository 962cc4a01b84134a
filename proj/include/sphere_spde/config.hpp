#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sphere_spde/error.hpp"

// Flat key-value experiment configuration.
//
//   # comment to end of line
//   key = value
//   alpha = 1, 2, 3        (lists are comma separated)
//
// Keys are identifiers (letters, digits, underscore; case-sensitive) and may
// appear once. Every lookup records
// the value actually used (given or default); the canonical form of those
// effective values is hashed so that artifacts can name the configuration
// that produced them.

namespace sphere_spde {

class Config {
public:
    Config() = default;

    [[nodiscard]] static Config parse(std::istream& in, const std::string& source = "<config>")
    {
        Config cfg;
        cfg.source_ = source;
        std::string line;
        int number = 0;
        while (std::getline(in, line)) {
            ++number;
            if (const auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const std::string text = trim(line);
            if (text.empty()) {
                continue;
            }
            const auto eq = text.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(cfg.where(number) + "expected 'key = value'");
            }
            const std::string key = trim(text.substr(0, eq));
            const std::string value = trim(text.substr(eq + 1));
            if (!valid_key(key)) {
                throw ConfigError(cfg.where(number) + "invalid key '" + key + "'");
            }
            if (value.empty()) {
                throw ConfigError(cfg.where(number) + "empty value for '" + key + "'");
            }
            if (cfg.entries_.count(key) != 0) {
                throw ConfigError(cfg.where(number) + "duplicate key '" + key + "' (first on line " +
                                  std::to_string(cfg.entries_.at(key).line) + ")");
            }
            cfg.entries_[key] = {value, number};
        }
        return cfg;
    }

    [[nodiscard]] static Config parse_string(const std::string& text, const std::string& source = "<string>")
    {
        std::istringstream in(text);
        return parse(in, source);
    }

    [[nodiscard]] static Config load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot open config file '" + path + "'");
        }
        return parse(in, path);
    }

    [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }

    /// Replaces or adds a value, as a command-line override does.
    void set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

    [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback)
    {
        const std::string v = raw(key).value_or(fallback);
        effective_[key] = v;
        return v;
    }

    [[nodiscard]] std::string get_choice(const std::string& key, const std::string& fallback,
                                         const std::vector<std::string>& allowed)
    {
        const std::string v = get_string(key, fallback);
        for (const auto& a : allowed) {
            if (v == a) {
                return v;
            }
        }
        std::string list;
        for (const auto& a : allowed) {
            list += (list.empty() ? "" : ", ") + a;
        }
        throw ConfigError(where(key) + "'" + key + "' must be one of {" + list + "}, got '" + v + "'");
    }

    [[nodiscard]] double get_double(const std::string& key, double fallback)
    {
        const auto text = raw(key);
        const double v = text ? to_double(key, *text) : fallback;
        effective_[key] = format(v);
        return v;
    }

    [[nodiscard]] std::int64_t get_int(const std::string& key, std::int64_t fallback)
    {
        const auto text = raw(key);
        const std::int64_t v = text ? to_int(key, *text) : fallback;
        effective_[key] = std::to_string(v);
        return v;
    }

    [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback)
    {
        const auto text = raw(key);
        std::uint64_t v = fallback;
        if (text) {
            const auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), v);
            if (ec != std::errc() || ptr != text->data() + text->size()) {
                throw ConfigError(where(key) + "'" + key + "' must be an unsigned 64-bit integer");
            }
        }
        effective_[key] = std::to_string(v);
        return v;
    }

    [[nodiscard]] bool get_bool(const std::string& key, bool fallback)
    {
        const auto text = raw(key);
        bool v = fallback;
        if (text) {
            if (*text == "true" || *text == "yes" || *text == "1") {
                v = true;
            } else if (*text == "false" || *text == "no" || *text == "0") {
                v = false;
            } else {
                throw ConfigError(where(key) + "'" + key + "' must be true or false");
            }
        }
        effective_[key] = v ? "true" : "false";
        return v;
    }

    [[nodiscard]] std::vector<std::string> get_string_list(const std::string& key,
                                                           const std::vector<std::string>& fallback)
    {
        const auto text = raw(key);
        std::vector<std::string> v = text ? split(*text) : fallback;
        std::string joined;
        for (const auto& s : v) {
            joined += (joined.empty() ? "" : ",") + s;
        }
        effective_[key] = joined;
        return v;
    }

    [[nodiscard]] std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback)
    {
        const auto text = raw(key);
        std::vector<double> v;
        if (text) {
            for (const auto& item : split(*text)) {
                v.push_back(to_double(key, item));
            }
        } else {
            v = fallback;
        }
        std::string joined;
        for (double d : v) {
            joined += (joined.empty() ? "" : ",") + format(d);
        }
        effective_[key] = joined;
        return v;
    }

    /// Keys present in the file but never looked up; a typo shows up here.
    [[nodiscard]] std::vector<std::string> unused_keys() const
    {
        std::vector<std::string> out;
        for (const auto& [key, entry] : entries_) {
            if (effective_.count(key) == 0) {
                out.push_back(key);
            }
        }
        return out;
    }

    void reject_unused() const
    {
        const auto unused = unused_keys();
        if (!unused.empty()) {
            std::string list;
            for (const auto& k : unused) {
                list += (list.empty() ? "" : ", ") + k;
            }
            throw ConfigError(source_ + ": unknown key(s): " + list);
        }
    }

    /// Sorted `key = value` lines of every value that was looked up.
    [[nodiscard]] std::string canonical() const
    {
        std::string out;
        for (const auto& [key, value] : effective_) {
            out += key + " = " + value + "\n";
        }
        return out;
    }

    /// FNV-1a over canonical(), as 16 hex digits.
    [[nodiscard]] std::string hash() const
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const unsigned char c : canonical()) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    [[nodiscard]] const std::string& source() const noexcept { return source_; }

    [[nodiscard]] std::string where(const std::string& key) const
    {
        const auto it = entries_.find(key);
        if (it == entries_.end() || it->second.line == 0) {
            return source_ + ": ";
        }
        return where(it->second.line);
    }

private:
    struct Entry {
        std::string value;
        int line = 0;
    };

    std::string source_ = "<config>";
    std::map<std::string, Entry> entries_;
    std::map<std::string, std::string> effective_;

    [[nodiscard]] std::string where(int line) const { return source_ + ":" + std::to_string(line) + ": "; }

    [[nodiscard]] std::optional<std::string> raw(const std::string& key) const
    {
        const auto it = entries_.find(key);
        if (it == entries_.end()) {
            return std::nullopt;
        }
        return it->second.value;
    }

    static std::string trim(std::string_view s)
    {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string_view::npos) {
            return {};
        }
        const auto last = s.find_last_not_of(" \t\r");
        return std::string(s.substr(first, last - first + 1));
    }

    static bool valid_key(const std::string& key)
    {
        const auto letter = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
        if (key.empty() || !letter(key[0])) {
            return false;
        }
        for (const char c : key) {
            if (!(letter(c) || (c >= '0' && c <= '9') || c == '_')) {
                return false;
            }
        }
        return true;
    }

    static std::vector<std::string> split(const std::string& text)
    {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(text);
        while (std::getline(in, item, ',')) {
            out.push_back(trim(item));
        }
        if (!text.empty() && text.back() == ',') {
            out.emplace_back();
        }
        return out;
    }

    [[nodiscard]] double to_double(const std::string& key, const std::string& text) const
    {
        // strtod accepts the same decimal/exponent syntax as the CSV output
        // and is locale-independent in the "C" locale the CLI runs in.
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (text.empty() || end != text.c_str() + text.size()) {
            throw ConfigError(where(key) + "'" + key + "': '" + text + "' is not a number");
        }
        return v;
    }

    [[nodiscard]] std::int64_t to_int(const std::string& key, const std::string& text) const
    {
        std::int64_t v = 0;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            throw ConfigError(where(key) + "'" + key + "': '" + text + "' is not an integer");
        }
        return v;
    }

    static std::string format(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
};

} // namespace sphere_spde

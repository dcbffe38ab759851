#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "iconq/common.hpp"

namespace iconq {

// Plain-text "key = value" configuration. '#' starts a comment, blank lines
// are ignored. Typed getters record which keys were read; validate() rejects
// keys that no getter ever declared, so typos fail loudly.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::string get_string(const std::string& key, const std::string& fallback);

    // Throws ConfigError if the file contains keys never declared by a getter.
    void validate() const;

    const std::map<std::string, std::string>& raw() const { return values_; }

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> declared_;

    const std::string* find(const std::string& key) const;
};

}  // namespace iconq

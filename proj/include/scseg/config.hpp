#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace scseg {

/// Flat `key = value` text config. `#` starts a comment, blank lines are
/// skipped, keys are unique (a repeat is an error). Typed getters throw
/// ConfigError naming the key when a value does not parse.
class Config {
public:
    static Config parse(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_real(const std::string& key, double fallback) const;
    std::size_t get_count(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_flag(const std::string& key, bool fallback) const;
    /// Comma-separated list of counts, e.g. "1,2,5".
    std::vector<std::size_t> get_counts(const std::string& key,
                                        std::vector<std::size_t> fallback) const;
    /// Comma-separated list of strings; entries are trimmed.
    std::vector<std::string> get_list(const std::string& key,
                                      std::vector<std::string> fallback) const;

    /// Sorted `key = value` lines; the canonical form feeds the config hash.
    std::string canonical() const;

    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    std::map<std::string, std::string> values_;
};

/// FNV-1a 64-bit over the canonical form, as 16 hex digits.
std::string config_hash(const Config& cfg);

} // namespace scseg

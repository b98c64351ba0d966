#pragma once

#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace esde::cli {

/// Malformed or unknown configuration input (exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `[section] key = value` configuration. Every lookup records the
/// resolved value; keys present in the file but never looked up are rejected
/// by `finish`.
class Config {
public:
    Config() = default;

    static Config load(const std::filesystem::path& path);
    static Config parse(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);
    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback);
    std::vector<std::string> get_words(const std::string& key,
                                       const std::vector<std::string>& fallback);

    /// Replaces (or adds) a value before resolution, e.g. a command-line override.
    void set(const std::string& key, const std::string& value);

    /// Throws ConfigError naming the first unused key and its line.
    void finish() const;

    /// Resolved configuration as INI text, sections and keys in sorted order.
    std::string resolved_text() const;

private:
    std::string raw(const std::string& key) const;
    [[noreturn]] void fail(const std::string& key, const std::string& message) const;
    void record(const std::string& key, const std::string& value);

    boost::property_tree::ptree tree_;
    std::map<std::string, int> lines_;
    std::set<std::string> used_;
    std::map<std::string, std::map<std::string, std::string>> resolved_;
    std::string origin_;
};

/// Shortest round-trip decimal form.
std::string format_double(double x);

} // namespace esde::cli

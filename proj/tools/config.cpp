#include "config.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace esde::cli {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c)) != 0) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) {
        return false;
    }
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && errno != ERANGE;
}

template <class T>
bool parse_integer(const std::string& s, T& out) {
    const char* first = s.data();
    const char* last = first + s.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        out += (i == 0 ? "" : " ") + words[i];
    }
    return out;
}

} // namespace

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, res.ptr};
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str(), path.string());
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, cfg.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }

    std::istringstream lines(text);
    std::string line;
    std::string section;
    int number = 0;
    while (std::getline(lines, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == ';' || t[0] == '#') {
            continue;
        }
        if (t[0] == '[') {
            section = trim(t.substr(1, t.find(']') - 1));
            continue;
        }
        const auto eq = t.find('=');
        if (eq != std::string::npos) {
            const std::string key = trim(t.substr(0, eq));
            cfg.lines_[section.empty() ? key : section + "." + key] = number;
        }
    }
    for (const auto& [name, node] : cfg.tree_) {
        if (node.empty()) {
            throw ConfigError(origin + ":" + std::to_string(cfg.lines_[name]) + ": key '" + name +
                              "' must belong to a [section]");
        }
    }
    return cfg;
}

bool Config::has(const std::string& key) const {
    return tree_.get_child_optional(key).has_value();
}

std::string Config::raw(const std::string& key) const {
    return trim(tree_.get<std::string>(key));
}

void Config::fail(const std::string& key, const std::string& message) const {
    const auto it = lines_.find(key);
    const std::string where =
        it != lines_.end() ? origin_ + ":" + std::to_string(it->second) : origin_;
    throw ConfigError(where + ": " + key + ": " + message);
}

void Config::record(const std::string& key, const std::string& value) {
    used_.insert(key);
    const auto dot = key.find('.');
    resolved_[key.substr(0, dot)][key.substr(dot + 1)] = value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) {
    const std::string value = has(key) ? raw(key) : fallback;
    record(key, value);
    return value;
}

double Config::get_double(const std::string& key, double fallback) {
    double value = fallback;
    if (has(key) && !parse_double(raw(key), value)) {
        fail(key, "expected a number, got '" + raw(key) + "'");
    }
    record(key, format_double(value));
    return value;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) {
    std::int64_t value = fallback;
    if (has(key) && !parse_integer(raw(key), value)) {
        fail(key, "expected an integer, got '" + raw(key) + "'");
    }
    record(key, std::to_string(value));
    return value;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) {
    std::uint64_t value = fallback;
    if (has(key) && !parse_integer(raw(key), value)) {
        fail(key, "expected a non-negative integer, got '" + raw(key) + "'");
    }
    record(key, std::to_string(value));
    return value;
}

bool Config::get_bool(const std::string& key, bool fallback) {
    bool value = fallback;
    if (has(key)) {
        const std::string s = raw(key);
        if (s == "true" || s == "1" || s == "yes") {
            value = true;
        } else if (s == "false" || s == "0" || s == "no") {
            value = false;
        } else {
            fail(key, "expected true or false, got '" + s + "'");
        }
    }
    record(key, value ? "true" : "false");
    return value;
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) {
    std::vector<double> value = fallback;
    if (has(key)) {
        value.clear();
        for (const auto& w : split_list(raw(key))) {
            double x = 0.0;
            if (!parse_double(w, x)) {
                fail(key, "expected a list of numbers, got '" + w + "'");
            }
            value.push_back(x);
        }
    }
    std::vector<std::string> words;
    for (double x : value) {
        words.push_back(format_double(x));
    }
    record(key, join(words));
    return value;
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) {
    std::vector<int> value = fallback;
    if (has(key)) {
        value.clear();
        for (const auto& w : split_list(raw(key))) {
            int x = 0;
            if (!parse_integer(w, x)) {
                fail(key, "expected a list of integers, got '" + w + "'");
            }
            value.push_back(x);
        }
    }
    std::vector<std::string> words;
    for (int x : value) {
        words.push_back(std::to_string(x));
    }
    record(key, join(words));
    return value;
}

std::vector<std::string> Config::get_words(const std::string& key,
                                           const std::vector<std::string>& fallback) {
    const std::vector<std::string> value = has(key) ? split_list(raw(key)) : fallback;
    record(key, join(value));
    return value;
}

void Config::set(const std::string& key, const std::string& value) {
    if (key.find('.') == std::string::npos) {
        throw ConfigError("override key '" + key + "' must name a section");
    }
    tree_.put(key, value);
}

void Config::finish() const {
    for (const auto& [section, node] : tree_) {
        for (const auto& [name, leaf] : node) {
            const std::string key = section + "." + name;
            if (used_.count(key) == 0) {
                const auto it = lines_.find(key);
                const std::string where =
                    it != lines_.end() ? origin_ + ":" + std::to_string(it->second) : origin_;
                throw ConfigError(where + ": unknown key '" + key + "'");
            }
        }
    }
}

std::string Config::resolved_text() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, keys] : resolved_) {
        out << (first ? "" : "\n") << "[" << section << "]\n";
        for (const auto& [name, value] : keys) {
            out << name << " = " << value << "\n";
        }
        first = false;
    }
    return out.str();
}

} // namespace esde::cli

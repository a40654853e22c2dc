#pragma once

// Plain-text nested key/value configuration.
//
//   # comment to end of line
//   key = value                  scalar, trimmed; "quoted" to keep # or spaces
//   key = [a, "b,c", d]          list; may span lines until the closing ]
//   name {                       nested section, closed by a line holding }
//     key = value
//   }
//
// Keys are [A-Za-z0-9_.-]+. Commas inside braces ({a,b}) do not split list
// items, so kernel-spec shorthands need quoting only when they contain a
// top-level comma (e.g. "matern:nu=3/2,sigma=1").

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "../errors.hpp"

namespace gpvct::io {

struct ConfigValue {
    std::vector<std::string> items;
    bool is_list = false;
    int line = 0;

    /// The single item of a scalar value.
    [[nodiscard]] const std::string& scalar(std::string_view key) const {
        if (is_list || items.size() != 1)
            throw ConfigError("line " + std::to_string(line) + ": '" + std::string(key) + "' expects a single value");
        return items.front();
    }
};

struct ConfigSection {
    std::string name;
    int line = 0;
    std::vector<std::pair<std::string, ConfigValue>> entries;
    std::vector<ConfigSection> sections;

    [[nodiscard]] const ConfigValue* find(std::string_view key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
};

namespace detail {

inline std::string_view trim_view(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Drop a trailing # comment outside double quotes.
inline std::string strip_comment(std::string_view line, int lineno) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        else if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
    }
    if (quoted) throw ConfigError("line " + std::to_string(lineno) + ": unterminated string");
    return std::string(line);
}

inline bool valid_key(std::string_view k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
    return true;
}

inline std::string unquote(std::string_view s, int lineno) {
    s = trim_view(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        auto inner = s.substr(1, s.size() - 2);
        if (inner.find('"') != std::string_view::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": stray quote in string");
        return std::string(inner);
    }
    if (s.find('"') != std::string_view::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": stray quote in value");
    return std::string(s);
}

inline std::vector<std::string> split_list(std::string_view body, int lineno) {
    std::vector<std::string> items;
    std::string cur;
    int depth = 0;
    bool quoted = false;
    auto flush = [&](bool final) {
        auto t = trim_view(cur);
        if (t.empty()) {
            if (!final || !items.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty list item");
        } else {
            items.push_back(unquote(t, lineno));
        }
        cur.clear();
    };
    for (char c : body) {
        if (c == '"') quoted = !quoted;
        if (!quoted) {
            if (c == '{') ++depth;
            if (c == '}') --depth;
            if (c == ',' && depth == 0) {
                flush(false);
                continue;
            }
        }
        cur += c;
    }
    if (!trim_view(cur).empty() || !items.empty()) flush(true);
    return items;
}

}  // namespace detail

/// Parse configuration text into a root section (name empty).
[[nodiscard]] inline ConfigSection parse_config(std::string_view text) {
    std::vector<std::string> lines;
    {
        std::string s(text);
        std::istringstream in(s);
        for (std::string l; std::getline(in, l);) lines.push_back(std::move(l));
    }
    std::vector<ConfigSection> stack(1);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const int lineno = static_cast<int>(i) + 1;
        auto here = [&] { return "line " + std::to_string(lineno) + ": "; };
        std::string cleaned = detail::strip_comment(lines[i], lineno);
        auto t = detail::trim_view(cleaned);
        if (t.empty()) continue;
        if (t == "}") {
            if (stack.size() == 1) throw ConfigError(here() + "unmatched '}'");
            ConfigSection done = std::move(stack.back());
            stack.pop_back();
            stack.back().sections.push_back(std::move(done));
            continue;
        }
        auto eq = t.find('=');
        if (t.back() == '{' && eq == std::string_view::npos) {
            auto name = detail::trim_view(t.substr(0, t.size() - 1));
            if (!detail::valid_key(name)) throw ConfigError(here() + "invalid section name '" + std::string(name) + "'");
            ConfigSection s;
            s.name = std::string(name);
            s.line = lineno;
            stack.push_back(std::move(s));
            continue;
        }
        if (eq == std::string_view::npos) throw ConfigError(here() + "expected 'key = value', got '" + std::string(t) + "'");
        auto key = detail::trim_view(t.substr(0, eq));
        if (!detail::valid_key(key)) throw ConfigError(here() + "invalid key '" + std::string(key) + "'");
        std::string value(detail::trim_view(t.substr(eq + 1)));
        ConfigValue v;
        v.line = lineno;
        if (!value.empty() && value.front() == '[') {
            // accumulate continuation lines until the bracket closes
            while (detail::trim_view(value).back() != ']') {
                if (++i >= lines.size()) throw ConfigError(here() + "unterminated list for '" + std::string(key) + "'");
                value += ' ';
                value += detail::trim_view(detail::strip_comment(lines[i], static_cast<int>(i) + 1));
            }
            auto body = detail::trim_view(value);
            v.is_list = true;
            v.items = detail::split_list(body.substr(1, body.size() - 2), lineno);
        } else {
            if (value.empty()) throw ConfigError(here() + "missing value for '" + std::string(key) + "'");
            v.items.push_back(detail::unquote(value, lineno));
        }
        if (stack.back().find(key)) throw ConfigError(here() + "duplicate key '" + std::string(key) + "'");
        stack.back().entries.emplace_back(std::string(key), std::move(v));
    }
    if (stack.size() != 1)
        throw ConfigError("section '" + stack.back().name + "' opened on line " + std::to_string(stack.back().line) +
                          " is never closed");
    return std::move(stack.front());
}

[[nodiscard]] inline ConfigSection load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace gpvct::io

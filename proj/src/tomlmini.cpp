#include "datum/core/tomlmini.hpp"

#include <cctype>
#include <fstream>

#include "datum/core/error.hpp"

namespace datum {

namespace {

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Cuts an unquoted '#' comment. Quotes in this dialect do not nest or escape
// anything except \" and \\.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_str && c == '\\') {
            ++i;
            continue;
        }
        if (c == '"') in_str = !in_str;
        if (c == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

nlohmann::json parse_scalar(const std::string& raw, int lineno);

nlohmann::json parse_value(const std::string& raw, int lineno) {
    std::string v = strip(raw);
    if (v.empty()) throw Error("config line " + std::to_string(lineno) + ": missing value");
    if (v.front() == '[') {
        if (v.back() != ']')
            throw Error("config line " + std::to_string(lineno) + ": unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string item;
        bool in_str = false;
        int depth = 0;
        for (std::size_t i = 0; i < body.size(); ++i) {
            char c = body[i];
            if (in_str && c == '\\') {
                item += c;
                item += body[++i];
                continue;
            }
            if (c == '"') in_str = !in_str;
            if (!in_str && c == '[') ++depth;
            if (!in_str && c == ']') --depth;
            if (c == ',' && !in_str && depth == 0) {
                arr.push_back(parse_value(item, lineno));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!strip(item).empty()) arr.push_back(parse_value(item, lineno));
        return arr;
    }
    return parse_scalar(v, lineno);
}

nlohmann::json parse_scalar(const std::string& v, int lineno) {
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw Error("config line " + std::to_string(lineno) + ": unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                char n = v[++i];
                if (n == 'n') out += '\n';
                else if (n == 't') out += '\t';
                else out += n;
            } else {
                out += v[i];
            }
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    bool fractional = v.find_first_of(".eE") != std::string::npos;
    // Hex/underscore forms are out of dialect; plain decimal only.
    try {
        std::size_t used = 0;
        if (!fractional) {
            long long n = std::stoll(v, &used);
            if (used == v.size()) return n;
        }
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw Error("config line " + std::to_string(lineno) + ": bad value '" + v + "'");
}

nlohmann::json* descend(nlohmann::json& root, const std::string& dotted, int lineno) {
    nlohmann::json* node = &root;
    std::size_t start = 0;
    while (true) {
        std::size_t dot = dotted.find('.', start);
        std::string part = strip(dotted.substr(start, dot - start));
        if (part.empty())
            throw Error("config line " + std::to_string(lineno) + ": empty table name part");
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null())
            throw Error("config line " + std::to_string(lineno) + ": '" + part +
                        "' is both a value and a table");
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return node;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        ++lineno;
        line = strip(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw Error("config line " + std::to_string(lineno) + ": unterminated table header");
            table = descend(root, line.substr(1, line.size() - 2), lineno);
            if (table->is_null()) *table = nlohmann::json::object();
            continue;
        }
        std::size_t eq = std::string::npos;
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '=' && !in_str) {
                eq = i;
                break;
            }
        }
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = strip(line.substr(0, eq));
        if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
        if (key.front() == '"') key = parse_scalar(key, lineno).get<std::string>();
        (*table)[key] = parse_value(line.substr(eq + 1), lineno);
    }
    return root;
}

nlohmann::json load_toml_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_toml(text);
}

}  // namespace datum

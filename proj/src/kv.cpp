#include "strata/kv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace strata::kv {

namespace {

void check_text(std::string_view s, std::string_view what) {
    if (s.find_first_of("\t\n\r") != std::string_view::npos) {
        throw std::invalid_argument(std::string(what) + " contains TAB or newline: " + std::string(s));
    }
}

}  // namespace

Record& Record::set(std::string key, std::string value) {
    check_text(key, "key");
    check_text(value, "value");
    if (key.find('=') != std::string::npos) throw std::invalid_argument("key contains '=': " + key);
    for (auto& [k, v] : fields_) {
        if (k == key) {
            v = std::move(value);
            return *this;
        }
    }
    fields_.emplace_back(std::move(key), std::move(value));
    return *this;
}

Record& Record::set(std::string key, double value) { return set(std::move(key), format_double(value)); }

Record& Record::set(std::string key, long long value) { return set(std::move(key), std::to_string(value)); }

bool Record::has(std::string_view key) const {
    for (const auto& [k, v] : fields_)
        if (k == key) return true;
    return false;
}

const std::string& Record::get(std::string_view key) const {
    for (const auto& [k, v] : fields_)
        if (k == key) return v;
    throw std::out_of_range("missing field '" + std::string(key) + "'");
}

std::string Record::get_or(std::string_view key, std::string fallback) const {
    for (const auto& [k, v] : fields_)
        if (k == key) return v;
    return fallback;
}

double Record::get_double(std::string_view key) const {
    const auto& s = get(key);
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("field '" + std::string(key) + "' is not a number: " + s);
    }
}

long long Record::get_int(std::string_view key) const {
    const auto& s = get(key);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("field '" + std::string(key) + "' is not an integer: " + s);
    }
    return v;
}

bool Record::get_bool(std::string_view key) const {
    const auto& s = get(key);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw std::invalid_argument("field '" + std::string(key) + "' is not a boolean: " + s);
}

std::string Record::to_line() const {
    std::string out;
    for (std::size_t i = 0; i < fields_.size(); ++i) {
        if (i) out += '\t';
        out += fields_[i].first;
        out += '=';
        out += fields_[i].second;
    }
    return out;
}

Record Record::parse(std::string_view line) {
    Record r;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::size_t start = 0;
    while (start <= line.size()) {
        auto end = line.find('\t', start);
        if (end == std::string_view::npos) end = line.size();
        auto field = line.substr(start, end - start);
        if (!field.empty()) {
            auto eq = field.find('=');
            if (eq == std::string_view::npos) {
                throw std::invalid_argument("malformed field (no '='): " + std::string(field));
            }
            r.set(std::string(field.substr(0, eq)), std::string(field.substr(eq + 1)));
        }
        start = end + 1;
    }
    return r;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, ptr);
}

std::vector<double> parse_doubles(std::string_view csv) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start < csv.size()) {
        auto end = csv.find(',', start);
        if (end == std::string_view::npos) end = csv.size();
        std::string tok(csv.substr(start, end - start));
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("bad number in list: " + tok);
        out.push_back(v);
        start = end + 1;
    }
    return out;
}

std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_double(values[i]);
    }
    return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

}  // namespace strata::kv

#pragma once

// Flat key=value text records.
//
// One record per line, fields separated by TAB, each field `key=value`.
// Values may contain spaces but never TAB or newline. Used by the dataset
// manifest, training logs, concept files and evaluation reports.

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace strata::kv {

/// Ordered list of fields; order is preserved on write so files are
/// byte-reproducible.
class Record {
public:
    Record& set(std::string key, std::string value);
    Record& set(std::string key, const char* value) { return set(std::move(key), std::string(value)); }
    Record& set(std::string key, double value);
    Record& set(std::string key, long long value);
    Record& set(std::string key, int value) { return set(std::move(key), static_cast<long long>(value)); }
    Record& set(std::string key, std::size_t value) { return set(std::move(key), static_cast<long long>(value)); }
    Record& set(std::string key, bool value) { return set(std::move(key), std::string(value ? "1" : "0")); }

    bool has(std::string_view key) const;
    const std::string& get(std::string_view key) const;
    std::string get_or(std::string_view key, std::string fallback) const;
    double get_double(std::string_view key) const;
    long long get_int(std::string_view key) const;
    bool get_bool(std::string_view key) const;

    const std::vector<std::pair<std::string, std::string>>& fields() const { return fields_; }

    std::string to_line() const;
    static Record parse(std::string_view line);

private:
    std::vector<std::pair<std::string, std::string>> fields_;
};

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double value);

std::vector<double> parse_doubles(std::string_view csv);
std::string join_doubles(const std::vector<double>& values);

/// Plain `key=value` per line config files; `#` starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace strata::kv

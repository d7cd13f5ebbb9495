#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace msshare {

/// Plain-text `key=value` configuration. Blank lines and `#` comments are ignored;
/// keys and values are trimmed. Later assignments override earlier ones.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(std::string_view key) const;
    void set(std::string key, std::string value);

    std::string get_string(std::string_view key, std::string_view fallback) const;
    std::string require_string(std::string_view key) const;
    long long get_int(std::string_view key, long long fallback) const;
    double get_double(std::string_view key, double fallback) const;
    /// Comma-separated list of numbers.
    std::vector<double> get_doubles(std::string_view key, std::vector<double> fallback) const;

    const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

private:
    std::map<std::string, std::string, std::less<>> entries_;
};

}  // namespace msshare

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faithlab/io.hpp"

namespace faithlab {

/// Parses the TOML subset used by run configs: [section] headers, key = value
/// with integers, floats, booleans, double-quoted strings and (possibly
/// multi-line) arrays of those, and # comments. Throws a config error with
/// the line number on malformed input.
json parse_toml(const std::string& text);

/// Inverse of parse_toml for the same subset; top-level keys first, then
/// sections, keys sorted.
std::string to_toml(const json& doc);

/// A validated run configuration: every known key present, unknown keys rejected.
class RunConfig {
public:
    /// Merges `raw` over the defaults; `base_dir` anchors relative paths.
    static RunConfig resolve(const json& raw, std::filesystem::path base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    static const json& defaults();

    const json& doc() const noexcept { return doc_; }
    json& doc() noexcept { return doc_; }

    std::uint64_t seed() const;
    std::string str(const std::string& section, const std::string& key) const;
    double num(const std::string& section, const std::string& key) const;
    std::size_t count(const std::string& section, const std::string& key) const;
    long integer(const std::string& section, const std::string& key) const;
    bool flag(const std::string& section, const std::string& key) const;
    std::vector<double> nums(const std::string& section, const std::string& key) const;
    std::vector<std::string> strs(const std::string& section, const std::string& key) const;
    /// A path value resolved against the config file's directory; empty stays empty.
    std::filesystem::path path(const std::string& section, const std::string& key) const;
    std::filesystem::path resolve_path(const std::filesystem::path& p) const;

    /// The resolved configuration as TOML, without the output location.
    std::string echo() const;

private:
    json doc_;
    std::filesystem::path base_dir_;
};

}  // namespace faithlab

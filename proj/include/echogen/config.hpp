// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace echogen {

/**
 * Declarative experiment configuration: an INI file with sections. Keys are
 * addressed as "section.key". Unset optional keys resolve to built-in
 * defaults; required keys have none.
 */
class ExperimentConfig {
public:
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_string(const std::string& text);

    /// Raw value as written (or set), without defaults.
    std::optional<std::string> raw(const std::string& key) const;
    /// Value with the default applied; throws ConfigError for unknown or missing keys.
    std::string get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<int64_t> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    void set(const std::string& key, const std::string& value);

    /// Every problem found (unknown keys, missing required keys, type and
    /// range errors); empty when valid.
    std::vector<std::string> validate() const;
    /// Throws ConfigError carrying the full list when validate() is not empty.
    void require_valid() const;

    /// Canonical INI text of all known keys with defaults applied.
    std::string resolved_text() const;
    /// Content hash of resolved_text().
    std::string hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// Known keys with their defaults (empty optional = required).
const std::map<std::string, std::optional<std::string>>& config_schema();

}  // namespace echogen

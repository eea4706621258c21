// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/labels.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "echogen/errors.hpp"

namespace echogen {

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) {
        throw ParameterError("label set must not be empty");
    }
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty() || n == kUnconditionalName) {
            throw ParameterError("invalid label name '" + n + "'");
        }
        if (!seen.insert(n).second) {
            throw ParameterError("duplicate label name '" + n + "'");
        }
    }
}

ClassLabel LabelSet::label(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
        throw ParameterError("label '" + name + "' is not in the configured set {" + to_string() + "}");
    }
    return {static_cast<int64_t>(it - names_.begin())};
}

ClassLabel LabelSet::label(int64_t index) const {
    if (index < 0 || index >= size()) {
        throw ParameterError("label index " + std::to_string(index) + " outside [0, " + std::to_string(size()) + ")");
    }
    return {index};
}

const std::string& LabelSet::name(ClassLabel l) const {
    static const std::string uncond = kUnconditionalName;
    if (is_unconditional(l)) {
        return uncond;
    }
    if (!contains(l)) {
        throw ParameterError("label index " + std::to_string(l.embedding_index) + " is not in the set");
    }
    return names_[static_cast<size_t>(l.embedding_index)];
}

std::string LabelSet::to_string() const {
    std::string out;
    for (size_t i = 0; i < names_.size(); ++i) {
        out += (i ? "," : "") + names_[i];
    }
    return out;
}

LabelSet LabelSet::parse(const std::string& comma_separated) {
    std::vector<std::string> names;
    std::stringstream ss(comma_separated);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        auto e = item.find_last_not_of(" \t");
        names.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
    }
    return LabelSet(std::move(names));
}

}  // namespace echogen

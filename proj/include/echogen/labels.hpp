// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace echogen {

/// Index into the label-embedding table. Dataset labels occupy [0, n) and the
/// unconditional token is always index n.
struct ClassLabel {
    int64_t embedding_index = 0;

    friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

/// The configured set of pathology labels plus the distinguished
/// UNCONDITIONAL token used for classifier-free guidance.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<std::string> names);

    /// Throws ParameterError for names outside the set (including "UNCONDITIONAL").
    ClassLabel label(const std::string& name) const;
    ClassLabel label(int64_t index) const;
    ClassLabel unconditional() const { return {static_cast<int64_t>(names_.size())}; }

    bool is_unconditional(ClassLabel l) const { return l.embedding_index == unconditional().embedding_index; }
    bool contains(ClassLabel l) const { return l.embedding_index >= 0 && l.embedding_index < size(); }

    const std::string& name(ClassLabel l) const;
    int64_t size() const { return static_cast<int64_t>(names_.size()); }
    /// Size of the embedding table (labels + unconditional token).
    int64_t embedding_count() const { return size() + 1; }
    const std::vector<std::string>& names() const { return names_; }

    std::string to_string() const;
    static LabelSet parse(const std::string& comma_separated);

    friend bool operator==(const LabelSet&, const LabelSet&) = default;

    static constexpr const char* kUnconditionalName = "UNCONDITIONAL";

private:
    std::vector<std::string> names_;
};

}  // namespace echogen

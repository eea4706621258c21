// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <torch/types.h>

namespace echogen {

/// Incremental 64-bit FNV-1a hasher used for content hashes of checkpoints,
/// configs and generated artifacts.
class ContentHasher {
public:
    ContentHasher& update(const void* data, size_t size);
    ContentHasher& update(std::string_view text);
    ContentHasher& update(uint64_t value);
    /// Hashes dtype, shape and the raw bytes of a contiguous CPU copy.
    ContentHasher& update(const torch::Tensor& tensor);

    uint64_t digest() const noexcept { return state_; }
    std::string hex() const;

private:
    uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(uint64_t value);

/// splitmix64 finalizer; used to derive independent child seeds.
uint64_t mix_seed(uint64_t value);

/// Seed for the k-th child of `base` (e.g. the k-th block of a chain).
uint64_t derive_seed(uint64_t base, uint64_t k);

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/hashing.hpp"

#include <cstdio>

#include "echogen/errors.hpp"

namespace echogen {

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error([&] {
          std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem(s))";
          for (const auto& p : problems) {
              msg += "\n  - " + p;
          }
          return msg;
      }()),
      problems_(std::move(problems)) {}

ContentHasher& ContentHasher::update(const void* data, size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        state_ ^= bytes[i];
        state_ *= 0x100000001b3ULL;
    }
    return *this;
}

ContentHasher& ContentHasher::update(std::string_view text) {
    update(static_cast<uint64_t>(text.size()));
    return update(text.data(), text.size());
}

ContentHasher& ContentHasher::update(uint64_t value) {
    return update(&value, sizeof(value));
}

ContentHasher& ContentHasher::update(const torch::Tensor& tensor) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    update(std::string_view(c10::toString(t.scalar_type())));
    update(static_cast<uint64_t>(t.dim()));
    for (auto s : t.sizes()) {
        update(static_cast<uint64_t>(s));
    }
    return update(t.data_ptr(), t.numel() * t.element_size());
}

std::string ContentHasher::hex() const {
    return to_hex(state_);
}

std::string to_hex(uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t k) {
    return mix_seed(mix_seed(base) ^ mix_seed(k + 0x632be59bd9b4e019ULL));
}

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include <torch/nn/module.h>

#include "echogen/diffusion.hpp"
#include "json.hpp"

namespace echogen {

/// Content hash over every named parameter and buffer of a module.
std::string module_hash(const torch::nn::Module& module);

/**
 * Writes module weights, named extra tensors and a JSON metadata block to one
 * file. The metadata gains a "content_hash" entry covering weights, extras and
 * metadata; the hash is returned.
 */
std::string save_checkpoint(const std::string& path, const torch::nn::Module& module, nlohmann::json meta,
                            const std::map<std::string, torch::Tensor>& extras = {});

struct CheckpointContents {
    nlohmann::json meta;
    std::map<std::string, torch::Tensor> extras;
};

/// Loads weights into `module` (which must already have the right
/// architecture), verifies the content hash and returns metadata and extras.
/// Throws CheckpointError on any inconsistency.
CheckpointContents load_checkpoint(const std::string& path, torch::nn::Module& module);

/// Reads only the metadata block (no weights).
nlohmann::json read_checkpoint_meta(const std::string& path);

/// Exact (bit-preserving) JSON form of a schedule, used in checkpoint metadata.
nlohmann::json schedule_to_json(const diffusion::NoiseSchedule& schedule);
diffusion::NoiseSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace echogen

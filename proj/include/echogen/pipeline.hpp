// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "echogen/autoregressive.hpp"
#include "echogen/classifier.hpp"
#include "echogen/codec.hpp"
#include "echogen/config.hpp"
#include "echogen/data.hpp"
#include "echogen/lidm.hpp"
#include "echogen/lvdm.hpp"
#include "echogen/privacy.hpp"
#include "json.hpp"

namespace echogen {

inline const std::vector<std::string> kSubcommands{"gen-toy-data", "train-codec", "train-lidm", "train-reid",
                                                   "train-lvdm",   "sample",      "evaluate",   "study"};

/// Resolved configuration plus the artifact tree it writes to:
/// <artifacts>/<config-hash>/<stage>/.
struct RunContext {
    ExperimentConfig config;
    std::filesystem::path artifacts;
    std::string hash;

    RunContext(ExperimentConfig config, std::filesystem::path artifacts);
    std::filesystem::path run_dir() const { return artifacts / hash; }
    std::filesystem::path stage_dir(const std::string& stage) const { return run_dir() / stage; }

    std::filesystem::path dataset_root() const;
    /// Explicit "<section>.checkpoint" or the file the producing stage writes.
    std::filesystem::path checkpoint(const std::string& section) const;
    diffusion::NoiseSchedule schedule() const;
    ToyGeneratorConfig toy_config() const;
};

/// Dataset read from the configured root (toy generator layout).
struct LoadedData {
    LabelSet labels;
    DatasetManifest manifest;
    VideoSet train, val, test;
};
LoadedData load_dataset(const RunContext& ctx);

/// Every trained model needed for generation.
struct Models {
    LatentCodec codec;
    Lidm lidm;
    Lvdm lvdm;
    PrivacyFilter privacy;
};
Models load_models(const RunContext& ctx);

struct GenerationRequest {
    ClassLabel label;
    double guidance = 1.0;       // LVDM
    double lidm_guidance = 1.0;  // LIDM
    int64_t blocks = 1;
    uint64_t seed = 0;
    int64_t max_attempts = 8;
};

struct GeneratedVideo {
    LongVideo latent;
    Video pixels;
    LatentFrame z_heart;
    std::vector<PrivacyDecision> decisions;
    nlohmann::json manifest;
};

/// Replaces the LIDM draw for attempt k (used to force memorized frames).
using InitialFrameOverride = std::function<LatentFrame(int64_t attempt, uint64_t seed)>;

/**
 * LIDM -> privacy filter -> LVDM chain -> decode. The LIDM seed of attempt k
 * is derive_seed(derive_seed(seed, 0), k); the chain uses derive_seed(seed, 1).
 * Throws PrivacyExhaustedError when every attempt is rejected.
 */
GeneratedVideo generate_video(const Models& models, const GenerationRequest& request,
                              const InitialFrameOverride& override_initial = {});

/// Labelled synthetic video set (count per class, one block each).
VideoSet generate_synthetic_set(const Models& models, int64_t per_class, double guidance, uint64_t seed);

// Stage entry points. Each writes into a temporary directory that replaces
// stage_dir(stage) only on success and returns a JSON summary.
nlohmann::json run_gen_toy_data(const RunContext& ctx);
nlohmann::json run_train_codec(const RunContext& ctx);
nlohmann::json run_train_lidm(const RunContext& ctx);
nlohmann::json run_train_reid(const RunContext& ctx);
nlohmann::json run_train_lvdm(const RunContext& ctx);
nlohmann::json run_sample(const RunContext& ctx, const InitialFrameOverride& override_initial = {});
nlohmann::json run_evaluate(const RunContext& ctx);
nlohmann::json run_study(const RunContext& ctx);

/// Dispatches by subcommand name; failures are rethrown as StageError.
nlohmann::json run_stage(const std::string& subcommand, const RunContext& ctx);

/// Re-runs `sample` from artifacts/<hash>/config.ini into sample.replay and
/// compares the video hashes with the recorded manifests.
struct ReplayResult {
    bool identical = false;
    std::vector<std::string> recorded, replayed;
};
ReplayResult replay_sample(const std::filesystem::path& artifacts, const std::string& hash);

/// Hash of a tensor's bytes (as recorded in generation manifests).
std::string tensor_hash(const torch::Tensor& t);

}  // namespace echogen

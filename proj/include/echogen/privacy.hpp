// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/nn.h>

#include "echogen/data.hpp"
#include "echogen/errors.hpp"
#include "echogen/training.hpp"
#include "json.hpp"

namespace echogen {

struct ReidConfig {
    int64_t embed_dim = 128;
    int64_t steps = 500;
    int64_t videos_per_batch = 16;
    int64_t frames_per_video = 4;
    double learning_rate = 1e-3;
    double temperature = 0.1;
    uint64_t seed = 5;
};

/// Small convolutional re-identification embedder producing unit-norm vectors.
struct ReidEmbedderImpl : torch::nn::Module {
    explicit ReidEmbedderImpl(int64_t embed_dim);
    /// Pixels [N, 3, 112, 112] in [0, 1] -> unit-norm embeddings [N, e].
    torch::Tensor forward(const torch::Tensor& pixels);

    int64_t embed_dim;
    torch::nn::Sequential features{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ReidEmbedder);

/// Supervised contrastive loss with `groups` as the class of each embedding row.
torch::Tensor supcon_loss(const torch::Tensor& embeddings, const torch::Tensor& groups, double temperature);

struct ReidTrainingResult {
    ReidEmbedder embedder;
    std::vector<double> loss_trace;
};

/**
 * Trains the embedder so frames of the same video are positives. frames are
 * uint8 gray [N, 112, 112]; video_ids [N]. Throws DataError with fewer than two
 * distinct videos.
 */
ReidTrainingResult train_reid(const torch::Tensor& frames, const std::vector<int64_t>& video_ids,
                              const ReidConfig& config);

/// Embeds uint8 gray [N, H, W] or float pixels [N, 3, H, W] in chunks.
torch::Tensor embed_frames(const ReidEmbedder& embedder, const torch::Tensor& frames);

/// Mean cosine similarity of same-video pairs and of cross-video pairs.
std::pair<double, double> same_cross_similarity(const torch::Tensor& embeddings, const std::vector<int64_t>& video_ids);

struct PrivacyDecision {
    bool accepted = true;
    double max_similarity = -1.0;
    int64_t nearest_row = -1;
    std::string nearest_source;
    int64_t attempt = 0;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
};

/// Embeddings of every real training frame with provenance and threshold.
struct PrivacyIndex {
    torch::Tensor embeddings;          // [N, e], unit rows
    std::vector<std::string> sources;  // one per row
    double threshold = 1.0;

    int64_t size() const { return embeddings.defined() ? embeddings.size(0) : 0; }
    /// Max cosine similarity and arg-max row for each query embedding [Q, e].
    std::pair<torch::Tensor, torch::Tensor> nearest(const torch::Tensor& queries) const;
    /// Reject iff max similarity > threshold (ties accept).
    PrivacyDecision decide(const torch::Tensor& query_embedding) const;
};

/// Throws DataError on an empty corpus.
PrivacyIndex build_index(const ReidEmbedder& embedder, const torch::Tensor& frames,
                         const std::vector<std::string>& sources);

/// (1 - target_fpr) quantile (linear interpolation) of max similarities.
double quantile_threshold(std::vector<double> max_similarities, double target_fpr);

/// Calibrates index.threshold from held-out real frames and returns it.
double calibrate_threshold(PrivacyIndex& index, const ReidEmbedder& embedder, const torch::Tensor& held_out_frames,
                           double target_fpr);

class PrivacyExhaustedError : public Error {
public:
    PrivacyExhaustedError(const std::string& what, std::vector<PrivacyDecision> decisions)
        : Error(what), decisions_(std::move(decisions)) {}
    const std::vector<PrivacyDecision>& decisions() const { return decisions_; }

private:
    std::vector<PrivacyDecision> decisions_;
};

/// Embedder + calibrated index, persisted together in one file.
class PrivacyFilter {
public:
    PrivacyFilter(ReidEmbedder embedder, PrivacyIndex index);

    PrivacyDecision check(const PixelFrame& frame) const;
    PrivacyDecision check_pixels(const torch::Tensor& pixels) const;

    struct Accepted {
        PixelFrame frame;
        int64_t attempts = 0;
        std::vector<PrivacyDecision> decisions;
    };
    /**
     * Calls sampler(attempt) for attempt = 0, 1, ... until a frame is accepted.
     * Throws PrivacyExhaustedError carrying every decision after max_attempts.
     */
    Accepted filter_until_accept(const std::function<PixelFrame(int64_t attempt)>& sampler,
                                 int64_t max_attempts) const;

    const ReidEmbedder& embedder() const { return embedder_; }
    const PrivacyIndex& index() const { return index_; }
    PrivacyIndex& index() { return index_; }
    std::string hash() const;

    std::string save(const std::string& path) const;
    static PrivacyFilter load(const std::string& path);

private:
    ReidEmbedder embedder_;
    PrivacyIndex index_;
};

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <torch/nn.h>

#include "echogen/codec.hpp"
#include "echogen/diffusion.hpp"
#include "echogen/labels.hpp"
#include "echogen/nn_blocks.hpp"
#include "echogen/training.hpp"

namespace echogen {

inline constexpr int64_t kBlockFrames = 64;

/// Concatenates the anchor latent to every frame along channels:
/// noisy [B, F, d, s, s] (or [F, d, s, s]) and anchor [B, d, s, s] (or [d, s, s])
/// -> [B, F, 2d, s, s] (or [F, 2d, s, s]).
torch::Tensor build_conditioned_input(const torch::Tensor& noisy, const torch::Tensor& anchor);

struct VideoDenoiserConfig {
    int64_t latent_channels = 4;
    int64_t latent_size = 28;
    int64_t frames = kBlockFrames;
    int64_t channels = 32;
    int64_t inner_channels = 48;
    int64_t label_dim = 128;
    int64_t time_dim = 128;

    nlohmann::json to_json() const;
    static VideoDenoiserConfig from_json(const nlohmann::json& j);
};

/**
 * Factorized spatio-temporal UNet. Each frame goes through the 2D residual and
 * cross-attention path; temporal convolutions mix frames at both levels and
 * temporal attention runs at the coarse level.
 */
struct VideoDenoiserImpl : torch::nn::Module {
    VideoDenoiserImpl(const VideoDenoiserConfig& config, int64_t embedding_count);
    /// x [B, F, d, s, s], anchor [B, d, s, s] -> v [B, F, d, s, s].
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& anchor, const torch::Tensor& timesteps,
                          const torch::Tensor& labels);

    VideoDenoiserConfig config;
    torch::nn::Embedding label_embedding{nullptr};
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d patch_in{nullptr}, down{nullptr}, up{nullptr};
    nn::ResBlock res_hi1{nullptr}, res_lo1{nullptr}, res_lo2{nullptr}, res_hi2{nullptr};
    nn::TemporalConv tconv_hi1{nullptr}, tconv_lo{nullptr}, tconv_hi2{nullptr};
    nn::TemporalAttention tattn_lo{nullptr};
    nn::CrossAttention attn_hi{nullptr}, attn_lo{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::ConvTranspose2d patch_out{nullptr};
};
TORCH_MODULE(VideoDenoiser);

struct LvdmConfig {
    VideoDenoiserConfig net;
    OptimConfig opt{.steps = 1500, .batch_size = 4, .learning_rate = 1e-3};
    int64_t sample_stride = 20;
    /// Control experiment: pair each clip with another clip's first frame.
    bool shuffle_anchors = false;
};

/// Trained anchor- and label-conditioned latent video diffusion model.
class Lvdm {
public:
    Lvdm(VideoDenoiser net, LabelSet labels, diffusion::NoiseSchedule schedule, std::string codec_id,
         int64_t sample_stride);

    /// Denoiser with the anchors [B, d, s, s] bound.
    diffusion::Denoiser denoiser(const torch::Tensor& anchors) const;

    /**
     * 64-frame block whose frame 0 is replaced by the anchor after the final
     * step, so it equals the anchor bit-exactly. Throws CodecMismatchError for
     * anchors from another codec and ShapeError for incompatible anchors.
     */
    LatentVideo sample_block(const LatentFrame& anchor, ClassLabel label, const diffusion::GuidanceConfig& guidance,
                             uint64_t seed) const;
    /// Batched blocks [B, F, d, s, s] from anchors [B, d, s, s]; frame 0 clamped.
    torch::Tensor sample_batch(const torch::Tensor& anchors, const std::vector<ClassLabel>& labels,
                               const diffusion::GuidanceConfig& guidance, uint64_t seed) const;

    const LabelSet& labels() const { return labels_; }
    const std::string& codec_id() const { return codec_id_; }
    const diffusion::NoiseSchedule& sampling_schedule() const { return sampling_; }
    const diffusion::NoiseSchedule& training_schedule() const { return schedule_; }
    int64_t frames() const { return net_->config.frames; }
    VideoDenoiser net() const { return net_; }
    std::string hash() const;

    std::string save(const std::string& path) const;
    static Lvdm load(const std::string& path);

private:
    VideoDenoiser net_;
    LabelSet labels_;
    diffusion::NoiseSchedule schedule_;
    diffusion::NoiseSchedule sampling_;
    std::string codec_id_;
    int64_t sample_stride_;
};

struct LvdmTrainingResult {
    Lvdm model;
    TrainingTrace trace;
};

/**
 * Trains on clips [N, 64, d, s, s] with their labels; the anchor of each clip
 * is its own first frame. Throws ShapeError for clips of any other length.
 */
LvdmTrainingResult train_lvdm(const torch::Tensor& clips, const std::vector<int64_t>& labels,
                              const LabelSet& label_set, const diffusion::NoiseSchedule& schedule,
                              const diffusion::GuidanceConfig& guidance, const LvdmConfig& config,
                              const std::string& codec_id);

}  // namespace echogen

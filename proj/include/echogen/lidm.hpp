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

struct ImageDenoiserConfig {
    int64_t latent_channels = 4;
    int64_t latent_size = 28;
    int64_t channels = 48;        // at s/2
    int64_t inner_channels = 64;  // at s/4
    int64_t label_dim = 128;
    int64_t time_dim = 128;

    nlohmann::json to_json() const;
    static ImageDenoiserConfig from_json(const nlohmann::json& j);
};

/**
 * Two-resolution residual UNet over latent frames. The input is patchified
 * 2x2 before the first level; every level has a cross-attention block
 * attending to a single learned label token. Index `labels` == label count is
 * the learned unconditional embedding.
 */
struct ImageDenoiserImpl : torch::nn::Module {
    ImageDenoiserImpl(const ImageDenoiserConfig& config, int64_t embedding_count);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& timesteps, const torch::Tensor& labels);

    ImageDenoiserConfig config;
    torch::nn::Embedding label_embedding{nullptr};
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d patch_in{nullptr}, down{nullptr}, up{nullptr};
    nn::ResBlock res_hi1{nullptr}, res_lo1{nullptr}, res_lo2{nullptr}, res_hi2{nullptr};
    nn::CrossAttention attn_hi1{nullptr}, attn_lo{nullptr}, attn_hi2{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::ConvTranspose2d patch_out{nullptr};
};
TORCH_MODULE(ImageDenoiser);

struct LidmConfig {
    ImageDenoiserConfig net;
    OptimConfig opt{.steps = 3000, .batch_size = 64, .learning_rate = 1e-3};
    int64_t sample_stride = 20;  // respacing of the training schedule at sampling time
};

/// Trained class-conditioned latent image diffusion model.
class Lidm {
public:
    Lidm(ImageDenoiser net, LabelSet labels, diffusion::NoiseSchedule schedule, std::string codec_id,
         int64_t sample_stride);

    /// Denoiser closure for the generic sampler and loss.
    diffusion::Denoiser denoiser() const;
    /// The respaced schedule used for sampling.
    const diffusion::NoiseSchedule& sampling_schedule() const { return sampling_; }
    const diffusion::NoiseSchedule& training_schedule() const { return schedule_; }
    const LabelSet& labels() const { return labels_; }
    const std::string& codec_id() const { return codec_id_; }
    ImageDenoiser net() const { return net_; }
    std::string hash() const;

    /// z_heart for `label`. Throws ParameterError for UNCONDITIONAL unless w == 0.
    LatentFrame sample_initial_frame(ClassLabel label, const diffusion::GuidanceConfig& guidance, uint64_t seed) const;
    /// Batched variant: latents [N, d, s, s], one draw per label from one seed.
    torch::Tensor sample_batch(const std::vector<ClassLabel>& labels, const diffusion::GuidanceConfig& guidance,
                               uint64_t seed) const;

    std::string save(const std::string& path) const;
    static Lidm load(const std::string& path);

private:
    ImageDenoiser net_;
    LabelSet labels_;
    diffusion::NoiseSchedule schedule_;
    diffusion::NoiseSchedule sampling_;
    std::string codec_id_;
    int64_t sample_stride_;
};

struct LidmTrainingResult {
    Lidm model;
    TrainingTrace trace;
};

/**
 * Trains the image denoiser on latents [N, d, s, s] with label indices [N].
 * Throws ParameterError if any label is outside the configured set (the
 * unconditional index included).
 */
LidmTrainingResult train_lidm(const torch::Tensor& latents, const std::vector<int64_t>& labels,
                              const LabelSet& label_set, const diffusion::NoiseSchedule& schedule,
                              const diffusion::GuidanceConfig& guidance, const LidmConfig& config,
                              const std::string& codec_id);

/// Checks every label index against the set; shared by the trainers.
void require_dataset_labels(const std::vector<int64_t>& labels, const LabelSet& label_set);

}  // namespace echogen

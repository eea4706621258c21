// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/nn.h>

#include "echogen/data.hpp"
#include "echogen/labels.hpp"

namespace echogen {

/// d-channel spatial latent of one frame, bound to the codec that produced it.
struct LatentFrame {
    torch::Tensor data;  // [d, s, s]
    std::string codec_id;
    std::optional<ClassLabel> label;
};

/// Ordered latent frames [F, d, s, s] sharing one codec.
struct LatentVideo {
    torch::Tensor frames;
    std::string codec_id;
    int64_t fps = kTargetFps;
    std::optional<ClassLabel> label;

    int64_t length() const { return frames.defined() ? frames.size(0) : 0; }
    LatentFrame frame(int64_t i) const { return {frames[i], codec_id, label}; }
};

struct CodecConfig {
    int64_t latent_channels = 4;
    int64_t steps = 1200;
    int64_t batch_size = 16;
    double learning_rate = 1e-3;
    double kl_weight = 1e-6;
    double holdout_fraction = 0.05;
    int64_t min_frames = 1000;
    int64_t patience = 400;  // steps without improvement before declaring divergence
    uint64_t seed = 11;
};

/// Convolutional VAE with two stride-2 stages (112 -> 28).
struct VaeImpl : torch::nn::Module {
    explicit VaeImpl(int64_t latent_channels);
    /// Returns (mean, logvar), each [N, d, 28, 28].
    std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& pixels);
    torch::Tensor decode(const torch::Tensor& latents);

    torch::nn::Sequential encoder{nullptr}, decoder{nullptr};
    int64_t latent_channels;
};
TORCH_MODULE(Vae);

/**
 * Maps pixel frames to scaled latents and back. Either a trained VAE (with a
 * per-channel shift/scale computed from the training latents) or the exact
 * identity codec used in tests.
 */
class LatentCodec {
public:
    static LatentCodec identity();
    static LatentCodec load(const std::string& path);

    /// Writes weights, d, s, shift/scale and the content hash; returns the hash.
    std::string save(const std::string& path) const;

    /// Deterministic posterior-mean encoding of frames [N, 3, 112, 112].
    torch::Tensor encode(const torch::Tensor& pixels) const;
    /// Decoding of latents [N, d, s, s] to frames clamped to [0, 1].
    torch::Tensor decode(const torch::Tensor& latents) const;

    LatentFrame encode(const PixelFrame& frame) const;
    /// Throws CodecMismatchError if the latent is bound to another codec.
    PixelFrame decode(const LatentFrame& latent) const;

    /// Encodes a whole pixel video in chunks.
    LatentVideo encode_video(const Video& video) const;

    const std::string& id() const { return id_; }
    bool is_identity() const { return !vae_; }
    int64_t latent_channels() const { return channels_; }
    int64_t latent_size() const { return size_; }
    const torch::Tensor& shift() const { return shift_; }
    const torch::Tensor& scale() const { return scale_; }

private:
    friend struct CodecTrainer;
    Vae vae_{nullptr};
    torch::Tensor shift_;
    torch::Tensor scale_;
    int64_t channels_ = 3;
    int64_t size_ = kFrameSize;
    std::string id_;

    void refresh_id();
};

struct CodecTrainingResult {
    LatentCodec codec;
    std::vector<double> loss_trace;
    double holdout_psnr = 0.0;
};

/**
 * Trains the VAE with a reconstruction + KL objective on frames
 * (uint8 gray [N, 112, 112] or float [N, 3, 112, 112]), then fits the latent
 * shift/scale. Throws DataError below config.min_frames and TrainingError when
 * the loss stops improving for `patience` steps or becomes non-finite.
 */
CodecTrainingResult train_codec(const torch::Tensor& frames, const CodecConfig& config);

/// Peak signal-to-noise ratio in dB for signals in [0, 1] (infinity when equal).
double psnr(const torch::Tensor& a, const torch::Tensor& b);

/// Collects frames (uint8 gray [N, 112, 112]) from every video of a set.
torch::Tensor gather_frames(const VideoSet& videos, int64_t stride = 1);

}  // namespace echogen

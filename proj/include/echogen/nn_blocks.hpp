// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/nn.h>

namespace echogen::nn {

/// Sinusoidal embedding of integer timesteps [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim, double max_period = 10000.0);

/// GroupNorm with the largest group count <= 8 dividing `channels`.
torch::nn::GroupNorm group_norm(int64_t channels);

/// Residual conv block with an additive timestep-embedding projection.
/// Works on [N, C, H, W]; `emb` is [N, E].
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t emb_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear emb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/**
 * Cross-attention from spatial features (queries) to a short sequence of
 * context tokens (keys/values), with a residual connection. x is [N, C, H, W],
 * context is [N, L, Dctx].
 */
struct CrossAttentionImpl : torch::nn::Module {
    CrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads = 4);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

    int64_t heads;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(CrossAttention);

/// Multi-head scaled dot-product attention over [N, L, C] inputs.
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, int64_t heads);

/// Depthwise-separable style temporal convolution along the frame axis with a
/// residual connection. x is [B*F, C, H, W] with `frames` consecutive entries
/// per video.
struct TemporalConvImpl : torch::nn::Module {
    TemporalConvImpl(int64_t channels, int64_t kernel = 3);
    torch::Tensor forward(const torch::Tensor& x, int64_t frames);

    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv1d conv{nullptr};
};
TORCH_MODULE(TemporalConv);

/// Self-attention across frames at every spatial location, residual.
/// x is [B*F, C, H, W].
struct TemporalAttentionImpl : torch::nn::Module {
    TemporalAttentionImpl(int64_t channels, int64_t max_frames, int64_t heads = 4);
    torch::Tensor forward(const torch::Tensor& x, int64_t frames);

    int64_t heads;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Linear qkv{nullptr}, to_out{nullptr};
    torch::Tensor frame_pos;
};
TORCH_MODULE(TemporalAttention);

/// Zero-initialises weights and bias so a residual branch starts as identity.
void zero_init(torch::nn::Module& module);

}  // namespace echogen::nn

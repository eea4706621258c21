// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/nn_blocks.hpp"

#include <cmath>

#include <torch/torch.h>

namespace echogen::nn {

namespace F = torch::nn::functional;

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim, double max_period) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(max_period) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
    auto args = timesteps.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2) {
        emb = torch::cat({emb, torch::zeros({emb.size(0), 1})}, 1);
    }
    return emb;
}

torch::nn::GroupNorm group_norm(int64_t channels) {
    int64_t groups = 8;
    while (channels % groups) --groups;
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels));
}

void zero_init(torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    for (auto& p : module.parameters()) {
        p.zero_();
    }
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t emb_dim) {
    norm1 = register_module("norm1", group_norm(in_channels));
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    emb_proj = register_module("emb_proj", torch::nn::Linear(emb_dim, out_channels));
    norm2 = register_module("norm2", group_norm(out_channels));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    zero_init(*conv2);
    if (in_channels != out_channels) {
        skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1(F::silu(norm1(x)));
    h = h + emb_proj(F::silu(emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(F::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, int64_t heads) {
    const int64_t n = q.size(0), lq = q.size(1), lk = k.size(1), c = q.size(2);
    const int64_t hd = c / heads;
    auto split = [&](const torch::Tensor& t, int64_t len) { return t.reshape({n, len, heads, hd}).transpose(1, 2); };
    auto qh = split(q, lq), kh = split(k, lk), vh = split(v, lk);
    auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
    auto out = torch::matmul(torch::softmax(scores, -1), vh);
    return out.transpose(1, 2).reshape({n, lq, c});
}

CrossAttentionImpl::CrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads_) : heads(heads_) {
    while (channels % heads) --heads;
    norm = register_module("norm", group_norm(channels));
    to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
    to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, channels).bias(false)));
    to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, channels).bias(false)));
    to_out = register_module("to_out", torch::nn::Linear(channels, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    auto tokens = norm(x).flatten(2).transpose(1, 2);  // [N, HW, C]
    auto out = attention(to_q(tokens), to_k(context), to_v(context), heads);
    out = to_out(out).transpose(1, 2).reshape({n, c, h, w});
    return x + out;
}

TemporalConvImpl::TemporalConvImpl(int64_t channels, int64_t kernel) {
    norm = register_module("norm", group_norm(channels));
    conv = register_module(
        "conv", torch::nn::Conv1d(torch::nn::Conv1dOptions(channels, channels, kernel).padding(kernel / 2)));
    zero_init(*conv);
}

torch::Tensor TemporalConvImpl::forward(const torch::Tensor& x, int64_t frames) {
    const int64_t bf = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const int64_t b = bf / frames;
    // [B, F, C, H, W] -> [B*H*W, C, F]
    auto seq = F::silu(norm(x)).reshape({b, frames, c, h, w}).permute({0, 3, 4, 2, 1}).reshape({b * h * w, c, frames});
    auto out = conv(seq).reshape({b, h, w, c, frames}).permute({0, 4, 3, 1, 2}).reshape({bf, c, h, w});
    return x + out;
}

TemporalAttentionImpl::TemporalAttentionImpl(int64_t channels, int64_t max_frames, int64_t heads_) : heads(heads_) {
    while (channels % heads) --heads;
    norm = register_module("norm", group_norm(channels));
    qkv = register_module("qkv", torch::nn::Linear(torch::nn::LinearOptions(channels, 3 * channels).bias(false)));
    to_out = register_module("to_out", torch::nn::Linear(channels, channels));
    zero_init(*to_out);
    frame_pos = register_buffer("frame_pos", timestep_embedding(torch::arange(max_frames), channels));
}

torch::Tensor TemporalAttentionImpl::forward(const torch::Tensor& x, int64_t frames) {
    const int64_t bf = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const int64_t b = bf / frames;
    auto seq = norm(x).reshape({b, frames, c, h, w}).permute({0, 3, 4, 1, 2}).reshape({b * h * w, frames, c});
    seq = seq + frame_pos.slice(0, 0, frames).unsqueeze(0);
    auto parts = qkv(seq).chunk(3, -1);
    auto out = to_out(attention(parts[0], parts[1], parts[2], heads));
    out = out.reshape({b, h, w, frames, c}).permute({0, 3, 4, 1, 2}).reshape({bf, c, h, w});
    return x + out;
}

}  // namespace echogen::nn

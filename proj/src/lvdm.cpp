// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/lvdm.hpp"

#include <torch/torch.h>

#include "echogen/checkpoint.hpp"
#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"
#include "echogen/lidm.hpp"

namespace echogen {

namespace F = torch::nn::functional;

torch::Tensor build_conditioned_input(const torch::Tensor& noisy, const torch::Tensor& anchor) {
    if (noisy.dim() == 4) {
        if (anchor.dim() != 3) throw ShapeError("anchor must be [d, s, s] for an unbatched video");
        return build_conditioned_input(noisy.unsqueeze(0), anchor.unsqueeze(0))[0];
    }
    if (noisy.dim() != 5 || anchor.dim() != 4 || anchor.size(0) != noisy.size(0) ||
        anchor.size(1) != noisy.size(2) || anchor.size(2) != noisy.size(3) || anchor.size(3) != noisy.size(4)) {
        throw ShapeError("anchor is not spatially compatible with the video frames");
    }
    auto expanded = anchor.to(noisy.dtype()).unsqueeze(1).expand({noisy.size(0), noisy.size(1), anchor.size(1),
                                                                  anchor.size(2), anchor.size(3)});
    return torch::cat({noisy, expanded}, 2);
}

nlohmann::json VideoDenoiserConfig::to_json() const {
    return {{"latent_channels", latent_channels}, {"latent_size", latent_size}, {"frames", frames},
            {"channels", channels},               {"inner_channels", inner_channels},
            {"label_dim", label_dim},             {"time_dim", time_dim}};
}

VideoDenoiserConfig VideoDenoiserConfig::from_json(const nlohmann::json& j) {
    VideoDenoiserConfig c;
    c.latent_channels = j.at("latent_channels");
    c.latent_size = j.at("latent_size");
    c.frames = j.at("frames");
    c.channels = j.at("channels");
    c.inner_channels = j.at("inner_channels");
    c.label_dim = j.at("label_dim");
    c.time_dim = j.at("time_dim");
    return c;
}

VideoDenoiserImpl::VideoDenoiserImpl(const VideoDenoiserConfig& cfg, int64_t embedding_count) : config(cfg) {
    if (cfg.latent_size % 4 != 0) throw ParameterError("latent size must be divisible by 4");
    const int64_t c = cfg.channels, c2 = cfg.inner_channels, e = cfg.time_dim;
    label_embedding = register_module("label_embedding", torch::nn::Embedding(embedding_count, cfg.label_dim));
    time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(e, e), torch::nn::SiLU(),
                                                                 torch::nn::Linear(e, e)));
    patch_in = register_module(
        "patch_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * cfg.latent_channels, c, 2).stride(2)));
    res_hi1 = register_module("res_hi1", nn::ResBlock(c, c, e));
    tconv_hi1 = register_module("tconv_hi1", nn::TemporalConv(c));
    attn_hi = register_module("attn_hi", nn::CrossAttention(c, cfg.label_dim));
    down = register_module("down", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c2, 3).stride(2).padding(1)));
    res_lo1 = register_module("res_lo1", nn::ResBlock(c2, c2, e));
    tattn_lo = register_module("tattn_lo", nn::TemporalAttention(c2, cfg.frames));
    attn_lo = register_module("attn_lo", nn::CrossAttention(c2, cfg.label_dim));
    res_lo2 = register_module("res_lo2", nn::ResBlock(c2, c2, e));
    tconv_lo = register_module("tconv_lo", nn::TemporalConv(c2));
    up = register_module("up", torch::nn::Conv2d(torch::nn::Conv2dOptions(c2, c, 3).padding(1)));
    res_hi2 = register_module("res_hi2", nn::ResBlock(2 * c, c, e));
    tconv_hi2 = register_module("tconv_hi2", nn::TemporalConv(c));
    norm_out = register_module("norm_out", nn::group_norm(c));
    patch_out = register_module(
        "patch_out",
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(c, cfg.latent_channels, 2).stride(2)));
    nn::zero_init(*patch_out);
}

torch::Tensor VideoDenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& anchor,
                                         const torch::Tensor& timesteps, const torch::Tensor& labels) {
    const int64_t b = x.size(0), f = x.size(1), d = x.size(2), s = x.size(3);
    auto h = build_conditioned_input(x, anchor).reshape({b * f, 2 * d, s, s});
    auto emb = time_mlp->forward(nn::timestep_embedding(timesteps, config.time_dim)).repeat_interleave(f, 0);
    auto ctx = label_embedding(labels.to(torch::kLong)).unsqueeze(1).repeat_interleave(f, 0);

    h = patch_in(h);
    h = attn_hi(tconv_hi1(res_hi1(h, emb), f), ctx);
    auto skip = h;
    auto l = down(h);
    l = attn_lo(tattn_lo(res_lo1(l, emb), f), ctx);
    l = tconv_lo(res_lo2(l, emb), f);
    auto u = up(F::interpolate(l, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                      .mode(torch::kNearest)));
    h = tconv_hi2(res_hi2(torch::cat({u, skip}, 1), emb), f);
    return patch_out(F::silu(norm_out(h))).reshape({b, f, d, s, s});
}

Lvdm::Lvdm(VideoDenoiser net, LabelSet labels, diffusion::NoiseSchedule schedule, std::string codec_id,
           int64_t sample_stride)
    : net_(std::move(net)),
      labels_(std::move(labels)),
      schedule_(std::move(schedule)),
      sampling_(diffusion::respace(schedule_, sample_stride)),
      codec_id_(std::move(codec_id)),
      sample_stride_(sample_stride) {
    net_->eval();
}

diffusion::Denoiser Lvdm::denoiser(const torch::Tensor& anchors) const {
    auto net = net_;
    return [net, anchors](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& y) {
        // The guided sampler may stack conditional and unconditional halves.
        auto a = anchors.size(0) == x.size(0) ? anchors : anchors.repeat({x.size(0) / anchors.size(0), 1, 1, 1});
        return net.ptr()->forward(x, a, t, y);
    };
}

torch::Tensor Lvdm::sample_batch(const torch::Tensor& anchors, const std::vector<ClassLabel>& labels,
                                 const diffusion::GuidanceConfig& guidance, uint64_t seed) const {
    guidance.validate();
    const auto& c = net_->config;
    if (anchors.dim() != 4 || anchors.size(1) != c.latent_channels || anchors.size(2) != c.latent_size ||
        anchors.size(3) != c.latent_size || anchors.size(0) != static_cast<int64_t>(labels.size())) {
        throw ShapeError("anchors must be [B, d, s, s] matching the video model and one label per anchor");
    }
    std::vector<int64_t> idx;
    for (auto l : labels) {
        if (labels_.is_unconditional(l) ? guidance.scale != 0.0 : !labels_.contains(l)) {
            throw ParameterError("invalid label index " + std::to_string(l.embedding_index) + " for block sampling");
        }
        idx.push_back(l.embedding_index);
    }
    auto a = anchors.to(torch::kFloat32).contiguous();
    auto condition = diffusion::Condition::make(idx, labels_.unconditional().embedding_index);
    auto video = diffusion::sample(denoiser(a), {a.size(0), c.frames, c.latent_channels, c.latent_size, c.latent_size},
                                   condition, guidance, sampling_, seed);
    video.select(1, 0).copy_(a);
    return video;
}

LatentVideo Lvdm::sample_block(const LatentFrame& anchor, ClassLabel label, const diffusion::GuidanceConfig& guidance,
                               uint64_t seed) const {
    if (anchor.codec_id != codec_id_) {
        throw CodecMismatchError("anchor from codec '" + anchor.codec_id + "' but the video model expects '" +
                                 codec_id_ + "'");
    }
    if (anchor.data.dim() != 3) throw ShapeError("anchor latent must be [d, s, s]");
    auto block = sample_batch(anchor.data.unsqueeze(0), {label}, guidance, seed)[0];
    return {block, codec_id_, kTargetFps, label};
}

std::string Lvdm::hash() const {
    ContentHasher h;
    h.update(module_hash(*net_)).update(labels_.to_string()).update(schedule_.to_kv()).update(codec_id_);
    h.update(static_cast<uint64_t>(sample_stride_));
    return h.hex();
}

std::string Lvdm::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "lvdm"},
                        {"net", net_->config.to_json()},
                        {"labels", labels_.to_string()},
                        {"schedule", schedule_to_json(schedule_)},
                        {"codec_id", codec_id_},
                        {"sample_stride", sample_stride_}};
    return save_checkpoint(path, *net_, meta);
}

Lvdm Lvdm::load(const std::string& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "lvdm") throw CheckpointError(path + " is not an LVDM checkpoint");
    auto labels = LabelSet::parse(meta.at("labels").get<std::string>());
    VideoDenoiser net(VideoDenoiserConfig::from_json(meta.at("net")), labels.embedding_count());
    load_checkpoint(path, *net);
    return Lvdm(net, labels, schedule_from_json(meta.at("schedule")), meta.at("codec_id").get<std::string>(),
                meta.at("sample_stride").get<int64_t>());
}

LvdmTrainingResult train_lvdm(const torch::Tensor& clips, const std::vector<int64_t>& labels,
                              const LabelSet& label_set, const diffusion::NoiseSchedule& schedule,
                              const diffusion::GuidanceConfig& guidance, const LvdmConfig& config,
                              const std::string& codec_id) {
    guidance.validate();
    if (!clips.defined() || clips.dim() != 5 || clips.size(0) == 0) {
        throw DataError("LVDM training needs clips [N, F, d, s, s] with N >= 1");
    }
    if (clips.size(1) != config.net.frames) {
        throw ShapeError("training clips must have exactly " + std::to_string(config.net.frames) + " frames, got " +
                         std::to_string(clips.size(1)));
    }
    if (static_cast<int64_t>(labels.size()) != clips.size(0)) throw ShapeError("one label per clip");
    require_dataset_labels(labels, label_set);
    auto net_cfg = config.net;
    net_cfg.latent_channels = clips.size(2);
    net_cfg.latent_size = clips.size(3);

    torch::manual_seed(config.opt.seed);
    VideoDenoiser net(net_cfg, label_set.embedding_count());
    const bool shuffle = config.shuffle_anchors;
    DenoiserFactory factory = [&net, shuffle](const torch::Tensor& x0) -> diffusion::Denoiser {
        auto anchors = x0.select(1, 0);
        if (shuffle && anchors.size(0) > 1) anchors = anchors.roll(1, 0);
        return [&net, anchors](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& y) {
            return net->forward(x, anchors, t, y);
        };
    };
    auto trace = train_diffusion(*net, factory, clips.to(torch::kFloat32).contiguous(),
                                 torch::tensor(labels, torch::kLong), label_set.unconditional().embedding_index,
                                 schedule, guidance.conditional_dropout_p, config.opt, "LVDM");
    return {Lvdm(net, label_set, schedule, codec_id, config.sample_stride), std::move(trace)};
}

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/lidm.hpp"

#include <torch/torch.h>

#include "echogen/checkpoint.hpp"
#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace F = torch::nn::functional;

nlohmann::json ImageDenoiserConfig::to_json() const {
    return {{"latent_channels", latent_channels}, {"latent_size", latent_size}, {"channels", channels},
            {"inner_channels", inner_channels},   {"label_dim", label_dim},     {"time_dim", time_dim}};
}

ImageDenoiserConfig ImageDenoiserConfig::from_json(const nlohmann::json& j) {
    ImageDenoiserConfig c;
    c.latent_channels = j.at("latent_channels");
    c.latent_size = j.at("latent_size");
    c.channels = j.at("channels");
    c.inner_channels = j.at("inner_channels");
    c.label_dim = j.at("label_dim");
    c.time_dim = j.at("time_dim");
    return c;
}

ImageDenoiserImpl::ImageDenoiserImpl(const ImageDenoiserConfig& cfg, int64_t embedding_count) : config(cfg) {
    if (cfg.latent_size % 4 != 0) throw ParameterError("latent size must be divisible by 4");
    const int64_t c = cfg.channels, c2 = cfg.inner_channels, e = cfg.time_dim;
    label_embedding = register_module("label_embedding", torch::nn::Embedding(embedding_count, cfg.label_dim));
    time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(e, e), torch::nn::SiLU(),
                                                                 torch::nn::Linear(e, e)));
    patch_in = register_module(
        "patch_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, c, 2).stride(2)));
    res_hi1 = register_module("res_hi1", nn::ResBlock(c, c, e));
    attn_hi1 = register_module("attn_hi1", nn::CrossAttention(c, cfg.label_dim));
    down = register_module("down", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c2, 3).stride(2).padding(1)));
    res_lo1 = register_module("res_lo1", nn::ResBlock(c2, c2, e));
    attn_lo = register_module("attn_lo", nn::CrossAttention(c2, cfg.label_dim));
    res_lo2 = register_module("res_lo2", nn::ResBlock(c2, c2, e));
    up = register_module("up", torch::nn::Conv2d(torch::nn::Conv2dOptions(c2, c, 3).padding(1)));
    res_hi2 = register_module("res_hi2", nn::ResBlock(2 * c, c, e));
    attn_hi2 = register_module("attn_hi2", nn::CrossAttention(c, cfg.label_dim));
    norm_out = register_module("norm_out", nn::group_norm(c));
    patch_out = register_module(
        "patch_out",
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(c, cfg.latent_channels, 2).stride(2)));
    nn::zero_init(*patch_out);
}

torch::Tensor ImageDenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& timesteps,
                                         const torch::Tensor& labels) {
    auto emb = time_mlp->forward(nn::timestep_embedding(timesteps, config.time_dim));
    auto ctx = label_embedding(labels.to(torch::kLong)).unsqueeze(1);
    auto h = patch_in(x);
    h = attn_hi1(res_hi1(h, emb), ctx);
    auto skip = h;
    auto l = down(h);
    l = res_lo2(attn_lo(res_lo1(l, emb), ctx), emb);
    auto u = up(F::interpolate(l, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                      .mode(torch::kNearest)));
    h = attn_hi2(res_hi2(torch::cat({u, skip}, 1), emb), ctx);
    return patch_out(F::silu(norm_out(h)));
}

void require_dataset_labels(const std::vector<int64_t>& labels, const LabelSet& label_set) {
    for (auto l : labels) {
        if (!label_set.contains(ClassLabel{l})) {
            throw ParameterError("label index " + std::to_string(l) + " is outside the configured label set " +
                                 label_set.to_string());
        }
    }
}

Lidm::Lidm(ImageDenoiser net, LabelSet labels, diffusion::NoiseSchedule schedule, std::string codec_id,
           int64_t sample_stride)
    : net_(std::move(net)),
      labels_(std::move(labels)),
      schedule_(std::move(schedule)),
      sampling_(diffusion::respace(schedule_, sample_stride)),
      codec_id_(std::move(codec_id)),
      sample_stride_(sample_stride) {
    net_->eval();
}

diffusion::Denoiser Lidm::denoiser() const {
    auto net = net_;
    return [net](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& y) {
        return net.ptr()->forward(x, t, y);
    };
}

std::string Lidm::hash() const {
    ContentHasher h;
    h.update(module_hash(*net_)).update(labels_.to_string()).update(schedule_.to_kv()).update(codec_id_);
    h.update(static_cast<uint64_t>(sample_stride_));
    return h.hex();
}

torch::Tensor Lidm::sample_batch(const std::vector<ClassLabel>& labels, const diffusion::GuidanceConfig& guidance,
                                 uint64_t seed) const {
    guidance.validate();
    std::vector<int64_t> idx;
    for (auto l : labels) {
        if (labels_.is_unconditional(l)) {
            if (guidance.scale != 0.0) {
                throw ParameterError("UNCONDITIONAL can only be sampled with guidance scale 0");
            }
        } else if (!labels_.contains(l)) {
            throw ParameterError("label index " + std::to_string(l.embedding_index) + " is not in the label set");
        }
        idx.push_back(l.embedding_index);
    }
    const auto& c = net_->config;
    auto condition = diffusion::Condition::make(idx, labels_.unconditional().embedding_index);
    return diffusion::sample(denoiser(), {static_cast<int64_t>(idx.size()), c.latent_channels, c.latent_size, c.latent_size},
                             condition, guidance, sampling_, seed);
}

LatentFrame Lidm::sample_initial_frame(ClassLabel label, const diffusion::GuidanceConfig& guidance,
                                       uint64_t seed) const {
    return {sample_batch({label}, guidance, seed)[0], codec_id_, label};
}

std::string Lidm::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "lidm"},
                        {"net", net_->config.to_json()},
                        {"labels", labels_.to_string()},
                        {"schedule", schedule_to_json(schedule_)},
                        {"codec_id", codec_id_},
                        {"sample_stride", sample_stride_}};
    return save_checkpoint(path, *net_, meta);
}

Lidm Lidm::load(const std::string& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "lidm") throw CheckpointError(path + " is not an LIDM checkpoint");
    auto labels = LabelSet::parse(meta.at("labels").get<std::string>());
    ImageDenoiser net(ImageDenoiserConfig::from_json(meta.at("net")), labels.embedding_count());
    load_checkpoint(path, *net);
    return Lidm(net, labels, schedule_from_json(meta.at("schedule")), meta.at("codec_id").get<std::string>(),
                meta.at("sample_stride").get<int64_t>());
}

LidmTrainingResult train_lidm(const torch::Tensor& latents, const std::vector<int64_t>& labels,
                              const LabelSet& label_set, const diffusion::NoiseSchedule& schedule,
                              const diffusion::GuidanceConfig& guidance, const LidmConfig& config,
                              const std::string& codec_id) {
    guidance.validate();
    if (!latents.defined() || latents.dim() != 4 || latents.size(0) == 0) {
        throw DataError("LIDM training needs latents [N, d, s, s] with N >= 1");
    }
    if (static_cast<int64_t>(labels.size()) != latents.size(0)) throw ShapeError("one label per latent frame");
    require_dataset_labels(labels, label_set);
    auto net_cfg = config.net;
    net_cfg.latent_channels = latents.size(1);
    net_cfg.latent_size = latents.size(2);

    torch::manual_seed(config.opt.seed);
    ImageDenoiser net(net_cfg, label_set.embedding_count());
    auto y = torch::tensor(labels, torch::kLong);
    auto x0 = latents.to(torch::kFloat32).contiguous();
    DenoiserFactory factory = [&net](const torch::Tensor&) -> diffusion::Denoiser {
        return [&net](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& l) {
            return net->forward(x, t, l);
        };
    };
    auto trace = train_diffusion(*net, factory, x0, y, label_set.unconditional().embedding_index, schedule,
                                 guidance.conditional_dropout_p, config.opt, "LIDM");
    return {Lidm(net, label_set, schedule, codec_id, config.sample_stride), std::move(trace)};
}

}  // namespace echogen

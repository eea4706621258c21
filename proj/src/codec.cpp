// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/codec.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <torch/torch.h>

#include "echogen/checkpoint.hpp"
#include "echogen/diffusion.hpp"
#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k == 4 ? 1 : k / 2));
}

torch::nn::ConvTranspose2d up(int64_t in, int64_t out) {
    return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

torch::Tensor to_float_frames(const torch::Tensor& frames) {
    if (frames.scalar_type() == torch::kUInt8) {
        auto f = frames.to(torch::kFloat32).div(255.0);
        if (f.dim() == 3) f = f.unsqueeze(1).expand({f.size(0), 3, f.size(1), f.size(2)});
        return f.contiguous();
    }
    return frames.to(torch::kFloat32);
}

void check_pixels(const torch::Tensor& pixels) {
    if (!pixels.defined() || pixels.dim() != 4 || pixels.size(1) != 3 || pixels.size(2) != kFrameSize ||
        pixels.size(3) != kFrameSize) {
        throw ShapeError("codec input must be [N, 3, 112, 112]");
    }
}

}  // namespace

VaeImpl::VaeImpl(int64_t d) : latent_channels(d) {
    encoder = register_module(
        "encoder", torch::nn::Sequential(conv(3, 32, 4, 2), torch::nn::SiLU(), conv(32, 48, 4, 2), torch::nn::SiLU(),
                                         conv(48, 48, 3), torch::nn::SiLU(), conv(48, 2 * d, 3)));
    decoder = register_module(
        "decoder", torch::nn::Sequential(conv(d, 48, 3), torch::nn::SiLU(), conv(48, 48, 3), torch::nn::SiLU(),
                                         up(48, 32), torch::nn::SiLU(), conv(32, 32, 3), torch::nn::SiLU(), up(32, 16),
                                         torch::nn::SiLU(), conv(16, 3, 3)));
}

std::pair<torch::Tensor, torch::Tensor> VaeImpl::encode(const torch::Tensor& pixels) {
    auto h = encoder->forward(pixels * 2.0 - 1.0);
    auto parts = h.chunk(2, 1);
    return {parts[0], parts[1].clamp(-20.0, 10.0)};
}

torch::Tensor VaeImpl::decode(const torch::Tensor& latents) {
    return decoder->forward(latents) * 0.5 + 0.5;
}

LatentCodec LatentCodec::identity() {
    LatentCodec c;
    c.channels_ = 3;
    c.size_ = kFrameSize;
    c.id_ = "identity";
    return c;
}

void LatentCodec::refresh_id() {
    if (!vae_) {
        id_ = "identity";
        return;
    }
    ContentHasher h;
    h.update(module_hash(*vae_)).update(shift_).update(scale_);
    id_ = h.hex();
}

std::string LatentCodec::save(const std::string& path) const {
    if (!vae_) throw CheckpointError("the identity codec has no checkpoint");
    nlohmann::json meta{{"kind", "vae-codec"},
                        {"latent_channels", channels_},
                        {"latent_size", size_},
                        {"codec_id", id_}};
    return save_checkpoint(path, *vae_, meta, {{"shift", shift_}, {"scale", scale_}});
}

LatentCodec LatentCodec::load(const std::string& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "vae-codec") throw CheckpointError(path + " is not a codec checkpoint");
    LatentCodec c;
    c.channels_ = meta.at("latent_channels").get<int64_t>();
    c.size_ = meta.at("latent_size").get<int64_t>();
    c.vae_ = Vae(c.channels_);
    auto contents = load_checkpoint(path, *c.vae_);
    c.vae_->eval();
    c.shift_ = contents.extras.at("shift");
    c.scale_ = contents.extras.at("scale");
    c.refresh_id();
    if (c.id_ != meta.value("codec_id", "")) throw CheckpointError("codec id mismatch in " + path);
    return c;
}

torch::Tensor LatentCodec::encode(const torch::Tensor& pixels) const {
    check_pixels(pixels);
    if (!vae_) return pixels.to(torch::kFloat32).clone();
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < pixels.size(0); i += 64) {
        auto mean = vae_.ptr()->encode(pixels.slice(0, i, i + 64).to(torch::kFloat32)).first;
        out.push_back((mean - shift_.view({1, -1, 1, 1})) * scale_.view({1, -1, 1, 1}));
    }
    return torch::cat(out);
}

torch::Tensor LatentCodec::decode(const torch::Tensor& latents) const {
    if (!latents.defined() || latents.dim() != 4 || latents.size(1) != channels_ || latents.size(2) != size_ ||
        latents.size(3) != size_) {
        std::ostringstream os;
        os << "codec expects latents [N, " << channels_ << ", " << size_ << ", " << size_ << "]";
        throw ShapeError(os.str());
    }
    if (!vae_) return latents.to(torch::kFloat32).clamp(0.0, 1.0);
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < latents.size(0); i += 64) {
        auto z = latents.slice(0, i, i + 64).to(torch::kFloat32) / scale_.view({1, -1, 1, 1}) + shift_.view({1, -1, 1, 1});
        out.push_back(vae_.ptr()->decode(z).clamp(0.0, 1.0));
    }
    return torch::cat(out);
}

LatentFrame LatentCodec::encode(const PixelFrame& frame) const {
    frame.validate();
    return {encode(frame.data.unsqueeze(0))[0], id_, std::nullopt};
}

PixelFrame LatentCodec::decode(const LatentFrame& latent) const {
    if (latent.codec_id != id_) {
        throw CodecMismatchError("latent bound to codec '" + latent.codec_id + "' decoded with codec '" + id_ + "'");
    }
    return {decode(latent.data.unsqueeze(0))[0]};
}

LatentVideo LatentCodec::encode_video(const Video& video) const {
    return {encode(video.pixels().contiguous()), id_, video.fps, std::nullopt};
}

struct CodecTrainer {
    static CodecTrainingResult run(const torch::Tensor& frames_in, const CodecConfig& config) {
        if (!frames_in.defined() || frames_in.size(0) < config.min_frames) {
            throw DataError("codec training needs at least " + std::to_string(config.min_frames) + " frames, got " +
                            std::to_string(frames_in.defined() ? frames_in.size(0) : 0));
        }
        torch::manual_seed(config.seed);
        auto gen = diffusion::make_generator(config.seed);
        const int64_t n = frames_in.size(0);
        auto perm = torch::randperm(n, gen, torch::kLong);
        const auto n_hold = std::max<int64_t>(1, static_cast<int64_t>(config.holdout_fraction * static_cast<double>(n)));
        auto hold_idx = perm.slice(0, 0, n_hold);
        auto train_idx = perm.slice(0, n_hold);
        const int64_t n_train = train_idx.size(0);

        LatentCodec codec;
        codec.channels_ = config.latent_channels;
        codec.size_ = kFrameSize / 4;
        codec.vae_ = Vae(config.latent_channels);
        auto& vae = codec.vae_;
        torch::optim::Adam opt(vae->parameters(), torch::optim::AdamOptions(config.learning_rate));

        CodecTrainingResult result{codec, {}, 0.0};
        double best = std::numeric_limits<double>::infinity();
        double ema = -1.0;
        int64_t since_best = 0;
        for (int64_t step = 0; step < config.steps; ++step) {
            // Cosine decay keeps late steps from undoing fine detail.
            const double lr = config.learning_rate * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                                           static_cast<double>(config.steps)));
            for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);

            auto idx = train_idx.index_select(0, torch::randint(0, n_train, {config.batch_size}, gen, torch::kLong));
            auto x = to_float_frames(frames_in.index_select(0, idx));
            auto [mean, logvar] = vae->encode(x);
            auto z = mean + torch::exp(0.5 * logvar) * torch::randn(mean.sizes(), gen);
            auto recon = vae->decode(z);
            auto rec_loss = F::mse_loss(recon, x);
            auto kl = 0.5 * (mean.square() + logvar.exp() - 1.0 - logvar).mean();
            auto loss = rec_loss + config.kl_weight * kl;
            opt.zero_grad();
            loss.backward();
            opt.step();

            const double l = loss.item<double>();
            if (!std::isfinite(l)) {
                throw TrainingError("codec training diverged at step " + std::to_string(step) + " (non-finite loss)");
            }
            result.loss_trace.push_back(l);
            ema = ema < 0.0 ? l : 0.98 * ema + 0.02 * l;
            if (ema < best * 0.999) {
                best = ema;
                since_best = 0;
            } else if (++since_best > config.patience) {
                std::ostringstream os;
                os << "codec training stalled: no improvement for " << config.patience << " steps (step " << step
                   << ", best smoothed loss " << best << ", current " << ema << ")";
                throw TrainingError(os.str());
            }
        }
        vae->eval();

        // Per-channel latent normalisation from the training frames.
        torch::NoGradGuard no_grad;
        std::vector<torch::Tensor> means;
        for (int64_t i = 0; i < n_train; i += 128) {
            auto x = to_float_frames(frames_in.index_select(0, train_idx.slice(0, i, i + 128)));
            means.push_back(vae->encode(x).first);
        }
        auto all = torch::cat(means);
        codec.shift_ = all.mean({0, 2, 3});
        codec.scale_ = 1.0 / all.std({0, 2, 3}).clamp_min(1e-6);
        codec.refresh_id();

        auto hold = to_float_frames(frames_in.index_select(0, hold_idx));
        result.codec = codec;
        result.holdout_psnr = psnr(codec.decode(codec.encode(hold)), hold);
        return result;
    }
};

CodecTrainingResult train_codec(const torch::Tensor& frames, const CodecConfig& config) {
    return CodecTrainer::run(frames, config);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

torch::Tensor gather_frames(const VideoSet& videos, int64_t stride) {
    std::vector<torch::Tensor> frames;
    for (int64_t i = 0; i < videos.size(); ++i) {
        frames.push_back(videos.video(i).gray.slice(0, 0, std::nullopt, stride));
    }
    if (frames.empty()) throw DataError("no frames to gather");
    return torch::cat(frames).contiguous();
}

}  // namespace echogen

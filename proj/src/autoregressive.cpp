// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/autoregressive.hpp"

#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

uint64_t LongVideoPlan::block_seed(int64_t k) const { return derive_seed(base_seed, static_cast<uint64_t>(k)); }

std::vector<uint64_t> LongVideoPlan::block_seeds() const {
    std::vector<uint64_t> seeds;
    for (int64_t k = 0; k < blocks; ++k) seeds.push_back(block_seed(k));
    return seeds;
}

int64_t long_video_length(int64_t blocks, int64_t block_frames) {
    if (blocks < 1) throw ParameterError("a long video needs at least one block");
    return block_frames + (blocks - 1) * (block_frames - 1);
}

nlohmann::json BlockRecord::to_json() const {
    return {{"index", index}, {"seed", seed}, {"label", label}, {"first_frame", first_frame}};
}

LongVideo generate_long_video(const BlockSampler& sampler, const LatentFrame& z_heart, ClassLabel label,
                              const LongVideoPlan& plan) {
    if (plan.blocks < 1) throw ParameterError("a long video needs at least one block");
    plan.guidance.validate();
    LongVideo out;
    std::vector<torch::Tensor> parts;
    LatentFrame anchor = z_heart;
    int64_t length = 0;
    for (int64_t k = 0; k < plan.blocks; ++k) {
        const uint64_t seed = plan.block_seed(k);
        LatentVideo block;
        try {
            block = sampler(anchor, label, plan.guidance, seed);
        } catch (const std::exception& e) {
            throw BlockSamplingError(k, e.what());
        }
        if (block.length() < 2) throw BlockSamplingError(k, "block has fewer than two frames");
        if (!torch::equal(block.frames[0], anchor.data)) {
            throw BlockSamplingError(k, "block frame 0 does not equal its anchor");
        }
        out.blocks.push_back({k, seed, label.embedding_index, k == 0 ? 0 : length - 1});
        parts.push_back(k == 0 ? block.frames : block.frames.slice(0, 1));
        length += k == 0 ? block.length() : block.length() - 1;
        anchor = LatentFrame{block.frames[block.length() - 1].clone(), block.codec_id, label};
    }
    out.video = LatentVideo{torch::cat(parts), z_heart.codec_id, kTargetFps, label};
    return out;
}

LongVideo generate_long_video(const Lvdm& lvdm, const LatentFrame& z_heart, ClassLabel label,
                              const LongVideoPlan& plan) {
    BlockSampler sampler = [&lvdm](const LatentFrame& anchor, ClassLabel l, const diffusion::GuidanceConfig& g,
                                   uint64_t seed) { return lvdm.sample_block(anchor, l, g, seed); };
    return generate_long_video(sampler, z_heart, label, plan);
}

torch::Tensor decode_video_pixels(const LatentVideo& latent, const LatentCodec& codec) {
    if (latent.codec_id != codec.id()) {
        throw CodecMismatchError("video latents from codec '" + latent.codec_id + "' decoded with codec '" +
                                 codec.id() + "'");
    }
    return codec.decode(latent.frames);
}

Video decode_video(const LatentVideo& latent, const LatentCodec& codec) {
    return Video::from_pixels(decode_video_pixels(latent, codec), latent.fps);
}

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "echogen/codec.hpp"
#include "echogen/diffusion.hpp"
#include "echogen/lvdm.hpp"
#include "json.hpp"

namespace echogen {

/// Blockwise generation plan. Block k uses derive_seed(base_seed, k).
struct LongVideoPlan {
    int64_t blocks = 1;
    diffusion::GuidanceConfig guidance;
    uint64_t base_seed = 0;

    uint64_t block_seed(int64_t k) const;
    std::vector<uint64_t> block_seeds() const;
};

/// Frame count of an M-block chain with deduplicated boundary frames.
int64_t long_video_length(int64_t blocks, int64_t block_frames = kBlockFrames);

struct BlockRecord {
    int64_t index = 0;
    uint64_t seed = 0;
    int64_t label = 0;
    int64_t first_frame = 0;  // position of the block's frame 0 in the long video

    nlohmann::json to_json() const;
};

struct LongVideo {
    LatentVideo video;
    std::vector<BlockRecord> blocks;
};

/// Signature of one block draw; lets tests substitute a stub for the LVDM.
using BlockSampler = std::function<LatentVideo(const LatentFrame& anchor, ClassLabel label,
                                               const diffusion::GuidanceConfig& guidance, uint64_t seed)>;

/**
 * Chains blocks: block 0 is anchored on z_heart and block k on the last frame
 * of block k-1. Block k's frame 0 is skipped when concatenating because it
 * equals the previous block's last frame. Failures are rethrown as
 * BlockSamplingError with the failing block index.
 */
LongVideo generate_long_video(const BlockSampler& sampler, const LatentFrame& z_heart, ClassLabel label,
                              const LongVideoPlan& plan);
LongVideo generate_long_video(const Lvdm& lvdm, const LatentFrame& z_heart, ClassLabel label,
                              const LongVideoPlan& plan);

/// Decodes every frame in order; throws CodecMismatchError for a foreign codec.
Video decode_video(const LatentVideo& latent, const LatentCodec& codec);
/// Same, returning float pixels [N, 3, 112, 112].
torch::Tensor decode_video_pixels(const LatentVideo& latent, const LatentCodec& codec);

}  // namespace echogen

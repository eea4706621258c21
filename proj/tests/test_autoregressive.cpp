// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/autoregressive.hpp"
#include "echogen/errors.hpp"

using namespace echogen;

namespace {

/// Stub LVDM: a random walk from the anchor, deterministic in seed.
struct StubSampler {
    std::vector<int64_t> labels_seen;
    std::vector<uint64_t> seeds_seen;
    int64_t fail_at = -1;

    LatentVideo operator()(const LatentFrame& a, ClassLabel l, const diffusion::GuidanceConfig&, uint64_t seed) {
        if (static_cast<int64_t>(seeds_seen.size()) == fail_at) throw std::runtime_error("boom");
        labels_seen.push_back(l.embedding_index);
        seeds_seen.push_back(seed);
        auto steps = torch::randn({63, 2, 4, 4}, diffusion::make_generator(seed)) * 0.1;
        auto walk = torch::cat({a.data.unsqueeze(0), a.data.unsqueeze(0) + steps.cumsum(0)});
        return {walk, a.codec_id, kTargetFps, l};
    }
};

LatentFrame heart() { return {torch::randn({2, 4, 4}, diffusion::make_generator(42)), "identity-ish", std::nullopt}; }

LongVideo run(StubSampler& s, int64_t m, uint64_t base = 7) {
    BlockSampler f = [&s](const LatentFrame& a, ClassLabel l, const diffusion::GuidanceConfig& g, uint64_t seed) {
        return s(a, l, g, seed);
    };
    return generate_long_video(f, heart(), ClassLabel{1}, {m, {5.0, 0.1}, base});
}

}  // namespace

TEST(LengthLaw, MatchesFormula) {
    for (int64_t m = 1; m <= 6; ++m) EXPECT_EQ(long_video_length(m), 64 + (m - 1) * 63);
    EXPECT_EQ(long_video_length(3), 190);
    EXPECT_THROW(long_video_length(0), ParameterError);
}

TEST(Chain, LengthContinuityAndAnchoring) {
    for (int64_t m : {1, 2, 3, 5}) {
        StubSampler s;
        auto v = run(s, m);
        ASSERT_EQ(v.video.length(), long_video_length(m));
        EXPECT_TRUE(torch::equal(v.video.frames[0], heart().data));
        ASSERT_EQ(v.blocks.size(), static_cast<size_t>(m));
        for (int64_t k = 1; k < m; ++k) {
            // Stitch point = previous block's frame 63 = this block's frame 0.
            const int64_t stitch = v.blocks[static_cast<size_t>(k)].first_frame;
            EXPECT_EQ(stitch, 63 * k);
            StubSampler replay;
            auto prev = replay(LatentFrame{v.video.frames[stitch - 63], "identity-ish", std::nullopt}, ClassLabel{1},
                               {}, v.blocks[static_cast<size_t>(k - 1)].seed);
            EXPECT_TRUE(torch::equal(prev.frames[63], v.video.frames[stitch]));
        }
    }
}

TEST(Chain, PrefixDeterminismSeedsAndLabels) {
    StubSampler one, three, again;
    auto a = run(one, 1);
    auto c = run(three, 3);
    auto c2 = run(again, 3);
    EXPECT_TRUE(torch::equal(c.video.frames.slice(0, 0, 64), a.video.frames));
    EXPECT_TRUE(torch::equal(c.video.frames, c2.video.frames));
    LongVideoPlan plan{3, {}, 7};
    EXPECT_EQ(three.seeds_seen, plan.block_seeds());
    EXPECT_EQ(std::set<uint64_t>(three.seeds_seen.begin(), three.seeds_seen.end()).size(), 3u);
    for (auto l : three.labels_seen) EXPECT_EQ(l, 1);
    for (const auto& b : c.blocks) EXPECT_EQ(b.label, 1);
    StubSampler other;
    EXPECT_FALSE(torch::equal(run(other, 3, 8).video.frames, c.video.frames));
}

TEST(Chain, FailurePropagatesBlockIndex) {
    StubSampler s;
    s.fail_at = 2;
    try {
        run(s, 4);
        FAIL() << "expected BlockSamplingError";
    } catch (const BlockSamplingError& e) {
        EXPECT_EQ(e.block(), 2);
    }
}

TEST(Chain, UnanchoredBlockIsRejected) {
    BlockSampler bad = [](const LatentFrame& a, ClassLabel l, const diffusion::GuidanceConfig&, uint64_t) {
        return LatentVideo{torch::zeros({64, 2, 4, 4}) + 3.0, a.codec_id, kTargetFps, l};
    };
    EXPECT_THROW(generate_long_video(bad, heart(), ClassLabel{0}, {2, {}, 0}), BlockSamplingError);
}

TEST(Decode, IdentityCodecPreservesOrderAndLength) {
    auto codec = LatentCodec::identity();
    auto frames = torch::rand({5, 3, kFrameSize, kFrameSize});
    frames[3] = frames[2];
    LatentVideo v{frames, codec.id(), kTargetFps, std::nullopt};
    auto px = decode_video_pixels(v, codec);
    EXPECT_TRUE(torch::equal(px, frames));
    auto video = decode_video(v, codec);
    EXPECT_EQ(video.frames(), 5);
    EXPECT_TRUE(torch::equal(video.gray[2], video.gray[3]));
    LatentVideo foreign{frames, "elsewhere", kTargetFps, std::nullopt};
    EXPECT_THROW(decode_video(foreign, codec), CodecMismatchError);
}

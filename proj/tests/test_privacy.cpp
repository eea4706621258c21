// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/codec.hpp"
#include "echogen/errors.hpp"
#include "echogen/privacy.hpp"

using namespace echogen;

namespace {

struct Corpus {
    torch::Tensor frames;  // uint8 [N, 112, 112]
    std::vector<int64_t> video_ids;
    std::vector<std::string> sources;
    torch::Tensor val_frames;
    std::vector<int64_t> val_ids;
};

const Corpus& corpus() {
    static const Corpus c = [] {
        ToyGeneratorConfig cfg;
        cfg.frames = 16;
        auto ds = generate_toy_dataset(cfg, 10);
        Corpus out;
        std::vector<torch::Tensor> tr, va;
        int64_t tv = 0, vv = 0;
        for (const auto& v : ds.videos) {
            if (v.split == "train") {
                tr.push_back(v.video.gray);
                for (int64_t f = 0; f < v.video.frames(); ++f) {
                    out.video_ids.push_back(tv);
                    out.sources.push_back(v.id + "#" + std::to_string(f));
                }
                ++tv;
            } else {
                va.push_back(v.video.gray);
                out.val_ids.insert(out.val_ids.end(), static_cast<size_t>(v.video.frames()), vv++);
            }
        }
        out.frames = torch::cat(tr);
        out.val_frames = torch::cat(va);
        return out;
    }();
    return c;
}

const ReidEmbedder& trained() {
    static const ReidEmbedder e = [] {
        ReidConfig rc;
        rc.steps = 150;
        rc.embed_dim = 32;
        rc.videos_per_batch = 8;
        return train_reid(corpus().frames, corpus().video_ids, rc).embedder;
    }();
    return e;
}

PixelFrame pixel(const torch::Tensor& gray_u8) { return {gray_u8.to(torch::kFloat32).div(255).unsqueeze(0).expand({3, kFrameSize, kFrameSize}).contiguous()}; }

}  // namespace

TEST(Reid, EmbeddingsAreUnitNormAndIdenticalFramesMatch) {
    ReidEmbedder e(16);
    auto f = corpus().frames.slice(0, 0, 5);
    auto z = embed_frames(e, torch::cat({f, f}));
    EXPECT_LT((z.norm(2, 1) - 1).abs().max().item<double>(), 1e-6);
    auto sim = (z.slice(0, 0, 5) * z.slice(0, 5, 10)).sum(1);
    EXPECT_LT((sim - 1).abs().max().item<double>(), 1e-6);
}

TEST(Reid, SingleVideoCorpusRejected) {
    EXPECT_THROW(train_reid(corpus().frames.slice(0, 0, 16), std::vector<int64_t>(16, 0), ReidConfig{}), DataError);
}

TEST(Reid, TrainedEmbedderSeparatesVideosBetterThanRandom) {
    auto [same, cross] = same_cross_similarity(embed_frames(trained(), corpus().val_frames), corpus().val_ids);
    EXPECT_GT(same, cross);
    ReidEmbedder random(32);
    auto [rs, rc] = same_cross_similarity(embed_frames(random, corpus().val_frames), corpus().val_ids);
    EXPECT_GT(same - cross, rs - rc);
}

TEST(SupCon, LowerForAlignedEmbeddings) {
    auto groups = torch::tensor({0, 0, 1, 1}, torch::kLong);
    auto aligned = torch::tensor({{1.f, 0.f}, {1.f, 0.f}, {0.f, 1.f}, {0.f, 1.f}});
    auto mixed = torch::tensor({{1.f, 0.f}, {0.f, 1.f}, {1.f, 0.f}, {0.f, 1.f}});
    EXPECT_LT(supcon_loss(aligned, groups, 0.1).item<double>(), supcon_loss(mixed, groups, 0.1).item<double>());
}

TEST(Index, CardinalityProvenanceAndDuplicates) {
    auto f = corpus().frames.slice(0, 0, 6);
    auto frames = torch::cat({f, f.slice(0, 0, 1)});
    std::vector<std::string> src{"a", "b", "c", "d", "e", "f", "a-dup"};
    auto index = build_index(trained(), frames, src);
    EXPECT_EQ(index.size(), 7);
    EXPECT_LT((index.embeddings.norm(2, 1) - 1).abs().max().item<double>(), 1e-6);
    EXPECT_TRUE(torch::allclose(index.embeddings[0], index.embeddings[6]));
    EXPECT_EQ(index.sources[6], "a-dup");
    EXPECT_THROW(build_index(trained(), frames.slice(0, 0, 0), {}), DataError);
    EXPECT_THROW(build_index(trained(), frames, {"x"}), ShapeError);
}

TEST(Threshold, QuantileEndpointsAndInterpolation) {
    std::vector<double> s{0.2, 0.9, 0.5, 0.7, 0.1};
    EXPECT_DOUBLE_EQ(quantile_threshold(s, 0.0), 0.9);
    EXPECT_DOUBLE_EQ(quantile_threshold(s, 1.0), 0.1);
    EXPECT_DOUBLE_EQ(quantile_threshold(s, 0.5), 0.5);
    EXPECT_NEAR(quantile_threshold(s, 0.125), 0.8, 1e-12);  // position 3.5 of the sorted list
    EXPECT_THROW(quantile_threshold({}, 0.1), DataError);
    EXPECT_THROW(quantile_threshold(s, 1.5), ParameterError);
}

TEST(Filter, IndexedCopyRejectedNoiseAcceptedTieAccepted) {
    auto index = build_index(trained(), corpus().frames, corpus().sources);
    const double tau = calibrate_threshold(index, trained(), corpus().val_frames, 0.05);
    EXPECT_DOUBLE_EQ(index.threshold, tau);
    EXPECT_LT(tau, 1.0);
    PrivacyFilter filter(trained(), index);

    auto copy = filter.check(pixel(corpus().frames[17]));
    EXPECT_FALSE(copy.accepted);
    EXPECT_NEAR(copy.max_similarity, 1.0, 1e-6);
    EXPECT_EQ(copy.nearest_source, corpus().sources[17]);

    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    auto noise = filter.check_pixels(torch::rand({1, kFrameSize, kFrameSize}, gen).expand({3, kFrameSize, kFrameSize}));
    EXPECT_TRUE(noise.accepted) << noise.max_similarity << " vs " << tau;

    // Tie at the threshold accepts; anything above rejects.
    auto probe = filter.check(pixel(corpus().val_frames[0]));
    PrivacyFilter at_tie(trained(), PrivacyIndex{index.embeddings, index.sources, probe.max_similarity});
    EXPECT_TRUE(at_tie.check(pixel(corpus().val_frames[0])).accepted);
    PrivacyFilter below(trained(), PrivacyIndex{index.embeddings, index.sources, probe.max_similarity - 1e-9});
    EXPECT_FALSE(below.check(pixel(corpus().val_frames[0])).accepted);
    EXPECT_THROW(filter.check_pixels(torch::zeros({1, kFrameSize, kFrameSize})), ShapeError);
}

TEST(Filter, RaisingThresholdNeverGrowsRejectedSet) {
    auto index = build_index(trained(), corpus().frames, corpus().sources);
    auto q = embed_frames(trained(), corpus().val_frames.slice(0, 0, 64));
    std::vector<bool> prev(64, true);
    for (double tau = -1.0; tau <= 1.0; tau += 0.05) {
        index.threshold = tau;
        for (int64_t i = 0; i < 64; ++i) {
            const bool rejected = !index.decide(q[i]).accepted;
            EXPECT_TRUE(!rejected || prev[static_cast<size_t>(i)]);
            prev[static_cast<size_t>(i)] = rejected;
        }
    }
}

TEST(Filter, CalibrationNeedsHeldOutFrames) {
    auto index = build_index(trained(), corpus().frames.slice(0, 0, 4), {"a", "b", "c", "d"});
    EXPECT_THROW(calibrate_threshold(index, trained(), corpus().val_frames.slice(0, 0, 0), 0.05), DataError);
}

TEST(Filter, UntilAcceptExhaustsOrAcceptsDeterministically) {
    auto index = build_index(trained(), corpus().frames, corpus().sources);
    calibrate_threshold(index, trained(), corpus().val_frames, 0.05);
    PrivacyFilter filter(trained(), index);

    int64_t calls = 0;
    auto memorised = [&](int64_t attempt) {
        ++calls;
        return pixel(corpus().frames[attempt]);
    };
    try {
        filter.filter_until_accept(memorised, 4);
        FAIL() << "expected exhaustion";
    } catch (const PrivacyExhaustedError& e) {
        ASSERT_EQ(e.decisions().size(), 4u);
        for (size_t k = 0; k < 4; ++k) {
            EXPECT_FALSE(e.decisions()[k].accepted);
            EXPECT_EQ(e.decisions()[k].attempt, static_cast<int64_t>(k));
        }
    }
    EXPECT_EQ(calls, 4);

    // Memorised frames first, then noise: the attempt count is a function of the sequence.
    auto mixed = [&](int64_t attempt) {
        if (attempt < 2) return pixel(corpus().frames[attempt]);
        auto gen = at::make_generator<at::CPUGeneratorImpl>(static_cast<uint64_t>(attempt));
        return PixelFrame{torch::rand({1, kFrameSize, kFrameSize}, gen).expand({3, kFrameSize, kFrameSize}).contiguous()};
    };
    auto a = filter.filter_until_accept(mixed, 8);
    auto b = filter.filter_until_accept(mixed, 8);
    EXPECT_EQ(a.attempts, 3);
    EXPECT_EQ(b.attempts, 3);
    EXPECT_TRUE(torch::equal(a.frame.data, b.frame.data));
    EXPECT_EQ(a.decisions.size(), 3u);
    EXPECT_TRUE(a.decisions.back().accepted);
    EXPECT_THROW(filter.filter_until_accept(mixed, 0), ParameterError);
}

TEST(Filter, CheckpointRoundTrip) {
    auto index = build_index(trained(), corpus().frames.slice(0, 0, 8), std::vector<std::string>(
                                                                             corpus().sources.begin(), corpus().sources.begin() + 8));
    index.threshold = 0.75;
    PrivacyFilter filter(trained(), index);
    auto path = std::filesystem::temp_directory_path() / "echogen_privacy_test.ckpt";
    filter.save(path.string());
    auto back = PrivacyFilter::load(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.hash(), filter.hash());
    EXPECT_DOUBLE_EQ(back.index().threshold, 0.75);
    EXPECT_EQ(back.index().sources, index.sources);
    auto f = pixel(corpus().val_frames[3]);
    EXPECT_DOUBLE_EQ(back.check(f).max_similarity, filter.check(f).max_similarity);
}

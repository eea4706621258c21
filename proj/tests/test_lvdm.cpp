// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/lvdm.hpp"

using namespace echogen;

namespace {

VideoDenoiserConfig tiny_net() {
    VideoDenoiserConfig c;
    c.latent_channels = 2;
    c.latent_size = 8;
    c.channels = 8;
    c.inner_channels = 8;
    c.label_dim = 8;
    c.time_dim = 8;
    return c;
}

const LabelSet& labels() {
    static LabelSet l({"control", "defect"});
    return l;
}

Lvdm model(uint64_t seed = 0) {
    torch::manual_seed(seed);
    VideoDenoiser net(tiny_net(), labels().embedding_count());
    torch::NoGradGuard g;
    for (auto& p : net->patch_out->parameters()) p.normal_(0, 0.05);
    return Lvdm(net, labels(), diffusion::make_schedule(100, 1e-4, 0.02), "codec-x", 20);
}

LatentFrame anchor(uint64_t seed, const std::string& codec = "codec-x") {
    return {torch::randn({2, 8, 8}, diffusion::make_generator(seed)), codec, std::nullopt};
}

}  // namespace

TEST(ConditionedInput, SingleFrameBaseCase) {
    auto noisy = torch::randn({1, 2, 8, 8});
    auto a = torch::randn({2, 8, 8});
    auto out = build_conditioned_input(noisy, a);
    ASSERT_EQ(out.sizes(), (std::vector<int64_t>{1, 4, 8, 8}));
    EXPECT_TRUE(torch::equal(out[0].slice(0, 0, 2), noisy[0]));
    EXPECT_TRUE(torch::equal(out[0].slice(0, 2, 4), a));
}

TEST(ConditionedInput, AnchorHalfIsExactOnEveryFrame) {
    auto noisy = torch::randn({2, 64, 3, 8, 8});
    auto a = torch::randn({2, 3, 8, 8});
    auto out = build_conditioned_input(noisy, a);
    ASSERT_EQ(out.sizes(), (std::vector<int64_t>{2, 64, 6, 8, 8}));
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t f = 0; f < 64; ++f) EXPECT_TRUE(torch::equal(out[b][f].slice(0, 3, 6), a[b]));
    }
    auto zero = build_conditioned_input(noisy, torch::zeros_like(a));
    EXPECT_TRUE(zero.slice(2, 3, 6).eq(0).all().item<bool>());
}

TEST(ConditionedInput, RejectsIncompatibleAnchors) {
    EXPECT_THROW(build_conditioned_input(torch::randn({4, 2, 8, 8}), torch::randn({2, 4, 4})), ShapeError);
    EXPECT_THROW(build_conditioned_input(torch::randn({4, 2, 8, 8}), torch::randn({3, 8, 8})), ShapeError);
    EXPECT_THROW(build_conditioned_input(torch::randn({2, 4, 2, 8, 8}), torch::randn({3, 2, 8, 8})), ShapeError);
}

TEST(VideoDenoiser, OutputExcludesAnchorChannels) {
    VideoDenoiser net(tiny_net(), 3);
    auto x = torch::randn({2, 64, 2, 8, 8});
    auto out = net->forward(x, torch::randn({2, 2, 8, 8}), torch::tensor({5, 900}, torch::kLong),
                            torch::tensor({0, 2}, torch::kLong));
    EXPECT_EQ(out.sizes(), x.sizes());
}

TEST(VideoDenoiser, TemporalLayersMixFrames) {
    VideoDenoiser net(tiny_net(), 3);
    torch::NoGradGuard g;
    // Temporal output projections start at zero; randomise every weight so
    // the mixing path is live.
    for (auto& p : net->parameters()) p.normal_(0, 0.1);
    auto x = torch::randn({1, 64, 2, 8, 8});
    auto a = torch::randn({1, 2, 8, 8});
    auto ts = torch::tensor({10}, torch::kLong);
    auto l = torch::tensor({0}, torch::kLong);
    auto base = net->forward(x, a, ts, l);
    auto x2 = x.clone();
    x2[0][40] += 1.0;
    auto moved = net->forward(x2, a, ts, l);
    EXPECT_GT((moved[0][10] - base[0][10]).abs().max().item<double>(), 0.0);
}

TEST(Lvdm, BlockAnchoredDeterministicAndShaped) {
    auto m = model();
    auto z = anchor(1);
    for (double w : {0.0, 1.0, 5.0}) {
        auto a = m.sample_block(z, ClassLabel{1}, {w, 0.1}, 3);
        EXPECT_EQ(a.length(), 64);
        EXPECT_EQ(a.frames.sizes(), (std::vector<int64_t>{64, 2, 8, 8}));
        EXPECT_TRUE(torch::equal(a.frames[0], z.data));
        EXPECT_EQ(a.codec_id, "codec-x");
        auto b = m.sample_block(z, ClassLabel{1}, {w, 0.1}, 3);
        EXPECT_TRUE(torch::equal(a.frames, b.frames));
    }
    EXPECT_FALSE(torch::equal(m.sample_block(z, ClassLabel{1}, {1.0, 0.1}, 3).frames,
                              m.sample_block(z, ClassLabel{1}, {1.0, 0.1}, 4).frames));
}

TEST(Lvdm, RejectsForeignOrMisshapenAnchors) {
    auto m = model();
    EXPECT_THROW(m.sample_block(anchor(1, "other"), ClassLabel{0}, {1.0, 0.1}, 0), CodecMismatchError);
    LatentFrame bad{torch::randn({2, 4, 4}), "codec-x", std::nullopt};
    EXPECT_THROW(m.sample_block(bad, ClassLabel{0}, {1.0, 0.1}, 0), ShapeError);
    EXPECT_THROW(m.sample_block(anchor(1), labels().unconditional(), {5.0, 0.1}, 0), ParameterError);
}

TEST(Lvdm, CheckpointReloadIsBitIdentical) {
    auto m = model(2);
    auto path = std::filesystem::temp_directory_path() / "echogen_lvdm_test.ckpt";
    m.save(path.string());
    auto back = Lvdm::load(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.hash(), m.hash());
    EXPECT_EQ(back.frames(), 64);
    auto z = anchor(5);
    EXPECT_TRUE(torch::equal(back.sample_block(z, ClassLabel{0}, {5.0, 0.1}, 9).frames,
                             m.sample_block(z, ClassLabel{0}, {5.0, 0.1}, 9).frames));
}

TEST(TrainLvdm, RejectsWrongClipLength) {
    LvdmConfig cfg;
    cfg.net = tiny_net();
    cfg.opt.steps = 1;
    auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    EXPECT_THROW(train_lvdm(torch::randn({2, 32, 2, 8, 8}), {0, 1}, labels(), sched, {1.0, 0.1}, cfg, "c"),
                 ShapeError);
    EXPECT_THROW(train_lvdm(torch::randn({2, 64, 2, 8, 8}), {0, 5}, labels(), sched, {1.0, 0.1}, cfg, "c"),
                 ParameterError);
}

TEST(TrainLvdm, SingleClipIsMemorisedAndAnchorsMatter) {
    auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    auto gen = diffusion::make_generator(6);
    // Smooth clips determined by their own frame 0 alone, so a rolled anchor
    // (another clip's frame 0) carries no information about the clip.
    auto base = torch::randn({4, 1, 2, 8, 8}, gen);
    auto ramp = torch::linspace(0, 1, 64).view({1, 64, 1, 1, 1});
    auto clips = base * (1.0 - 0.5 * ramp);

    LvdmConfig cfg;
    cfg.net = tiny_net();
    // patch_in folds 2x2 patches of 2*d channels; narrower than that it cannot
    // carry x_t through and the loss floors well above zero.
    cfg.net.channels = 16;
    cfg.net.inner_channels = 16;
    cfg.opt.steps = 600;
    cfg.opt.batch_size = 4;
    cfg.opt.warmup = 20;
    cfg.opt.probe_every = 200;
    cfg.opt.probe_size = 4;
    cfg.opt.learning_rate = 3e-3;
    auto one = train_lvdm(clips.slice(0, 0, 1), {0}, labels(), sched, {1.0, 0.0}, cfg, "c");
    EXPECT_LT(one.trace.probe_final, 0.1 * one.trace.probe_initial)
        << one.trace.probe_initial << " -> " << one.trace.probe_final;

    auto own = train_lvdm(clips, {0, 1, 0, 1}, labels(), sched, {1.0, 0.0}, cfg, "c");
    cfg.shuffle_anchors = true;
    auto shuffled = train_lvdm(clips, {0, 1, 0, 1}, labels(), sched, {1.0, 0.0}, cfg, "c");
    EXPECT_LT(own.trace.probe_final, shuffled.trace.probe_final);
}

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/lidm.hpp"

using namespace echogen;

namespace {

ImageDenoiserConfig tiny_net() {
    ImageDenoiserConfig c;
    c.latent_channels = 2;
    c.latent_size = 8;
    c.channels = 16;
    c.inner_channels = 16;
    c.label_dim = 16;
    c.time_dim = 16;
    return c;
}

const LabelSet& labels() {
    static LabelSet l({"control", "defect"});
    return l;
}

Lidm untrained(uint64_t seed = 0) {
    torch::manual_seed(seed);
    return Lidm(ImageDenoiser(tiny_net(), labels().embedding_count()), labels(),
                diffusion::make_schedule(100, 1e-4, 0.02), "codec-x", 10);
}

}  // namespace

TEST(ImageDenoiser, PreservesShapeForAllTimestepsAndLabels) {
    ImageDenoiser net(tiny_net(), 3);
    for (int64_t t : {1, 50, 1000}) {
        for (int64_t l : {0, 1, 2}) {
            auto x = torch::randn({3, 2, 8, 8});
            auto out = net->forward(x, torch::full({3}, t, torch::kLong), torch::full({3}, l, torch::kLong));
            EXPECT_EQ(out.sizes(), x.sizes());
        }
    }
}

TEST(ImageDenoiser, LabelChangesPrediction) {
    ImageDenoiser net(tiny_net(), 3);
    // Zero-initialised output head: perturb it so conditioning is observable.
    torch::NoGradGuard g;
    for (auto& p : net->patch_out->parameters()) p.normal_(0, 0.1);
    auto x = torch::randn({1, 2, 8, 8});
    auto ts = torch::full({1}, 10, torch::kLong);
    auto a = net->forward(x, ts, torch::zeros({1}, torch::kLong));
    auto b = net->forward(x, ts, torch::ones({1}, torch::kLong));
    EXPECT_FALSE(torch::allclose(a, b));
}

TEST(LabelSetTest, UnconditionalIsDistinct) {
    EXPECT_EQ(labels().unconditional().embedding_index, 2);
    EXPECT_THROW(labels().label("UNCONDITIONAL"), ParameterError);
    EXPECT_THROW(LabelSet({"a", "a"}), ParameterError);
    EXPECT_EQ(labels().label("defect").embedding_index, 1);
}

TEST(Lidm, SamplingIsDeterministicAndTagged) {
    auto m = untrained();
    auto a = m.sample_initial_frame(ClassLabel{1}, {5.0, 0.1}, 7);
    auto b = m.sample_initial_frame(ClassLabel{1}, {5.0, 0.1}, 7);
    auto c = m.sample_initial_frame(ClassLabel{1}, {5.0, 0.1}, 8);
    EXPECT_TRUE(torch::equal(a.data, b.data));
    EXPECT_FALSE(torch::equal(a.data, c.data));
    EXPECT_EQ(a.codec_id, "codec-x");
    ASSERT_TRUE(a.label.has_value());
    EXPECT_EQ(a.label->embedding_index, 1);
    EXPECT_EQ(a.data.sizes(), (std::vector<int64_t>{2, 8, 8}));
}

TEST(Lidm, UnitGuidanceMatchesConditionalOnlyLoop) {
    auto m = untrained(1);
    auto guided = m.sample_initial_frame(ClassLabel{0}, {1.0, 0.1}, 3);
    auto net = m.net();
    diffusion::Denoiser cond_only = [net](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor&) {
        return net.ptr()->forward(x, t, torch::zeros({x.size(0)}, torch::kLong));
    };
    // Labels handed to the sampler are irrelevant to cond_only.
    auto reference = diffusion::sample(cond_only, {1, 2, 8, 8}, diffusion::Condition::make({0}, 2), {1.0, 0.0},
                                       m.sampling_schedule(), 3);
    EXPECT_TRUE(torch::equal(guided.data, reference[0]));
}

TEST(Lidm, UnconditionalRequestNeedsZeroGuidance) {
    auto m = untrained();
    EXPECT_THROW(m.sample_initial_frame(labels().unconditional(), {5.0, 0.1}, 1), ParameterError);
    EXPECT_NO_THROW(m.sample_initial_frame(labels().unconditional(), {0.0, 0.1}, 1));
    EXPECT_THROW(m.sample_initial_frame(ClassLabel{7}, {1.0, 0.1}, 1), ParameterError);
}

TEST(Lidm, CheckpointReloadGivesBitIdenticalSamples) {
    auto m = untrained(2);
    {
        torch::NoGradGuard g;
        for (auto& p : m.net()->parameters()) p.add_(torch::randn_like(p) * 0.01);
    }
    auto path = std::filesystem::temp_directory_path() / "echogen_lidm_test.ckpt";
    m.save(path.string());
    auto back = Lidm::load(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.hash(), m.hash());
    EXPECT_EQ(back.codec_id(), "codec-x");
    EXPECT_EQ(back.sampling_schedule().num_steps(), m.sampling_schedule().num_steps());
    EXPECT_TRUE(torch::equal(back.sample_batch({ClassLabel{0}, ClassLabel{1}}, {3.0, 0.1}, 11),
                             m.sample_batch({ClassLabel{0}, ClassLabel{1}}, {3.0, 0.1}, 11)));
}

TEST(TrainLidm, RejectsLabelsOutsideTheSet) {
    LidmConfig cfg;
    cfg.net = tiny_net();
    cfg.opt.steps = 1;
    auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    auto x = torch::randn({4, 2, 8, 8});
    EXPECT_THROW(train_lidm(x, {0, 1, 2, 0}, labels(), sched, {1.0, 0.1}, cfg, "c"), ParameterError);
    EXPECT_THROW(train_lidm(x, {0, 1, -1, 0}, labels(), sched, {1.0, 0.1}, cfg, "c"), ParameterError);
}

TEST(TrainLidm, SingleExampleIsMemorised) {
    LidmConfig cfg;
    cfg.net = tiny_net();
    cfg.opt.steps = 1500;
    cfg.opt.batch_size = 16;
    cfg.opt.warmup = 20;
    cfg.opt.probe_every = 100;
    cfg.opt.learning_rate = 3e-3;
    auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    auto x = torch::randn({1, 2, 8, 8}, diffusion::make_generator(4));
    auto r = train_lidm(x, {1}, labels(), sched, {1.0, 0.0}, cfg, "c");
    EXPECT_LT(r.trace.probe_final, 0.1 * r.trace.probe_initial)
        << r.trace.probe_initial << " -> " << r.trace.probe_final;
    EXPECT_EQ(r.trace.loss.size(), 1500u);
    EXPECT_EQ(r.model.codec_id(), "c");
}

TEST(TrainLidm, DropoutFrequencyMatchesConfiguredRate) {
    // Counting oracle over 10^4 single-example training draws.
    auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    int64_t uncond = 0, total = 0;
    diffusion::Denoiser spy = [&](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor& l) {
        uncond += l.eq(2).sum().item<int64_t>();
        total += l.numel();
        return torch::zeros_like(x);
    };
    auto gen = diffusion::make_generator(12);
    auto x = torch::zeros({1, 2, 8, 8});
    auto l = torch::ones({1}, torch::kLong);
    for (int i = 0; i < 10000; ++i) diffusion::training_loss(spy, x, l, 2, sched, 0.1, gen);
    EXPECT_EQ(total, 10000);
    EXPECT_NEAR(static_cast<double>(uncond) / static_cast<double>(total), 0.1, 0.02);
}

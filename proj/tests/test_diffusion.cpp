// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/diffusion.hpp"
#include "echogen/errors.hpp"

using namespace echogen;
using namespace echogen::diffusion;

namespace {

torch::Tensor f64(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

/// Denoiser that always returns the exact v of a fixed target x0.
Denoiser oracle_for(const torch::Tensor& x0, const NoiseSchedule& schedule) {
    return [x0, schedule](const torch::Tensor& x_t, const torch::Tensor& ts, const torch::Tensor&) {
        const int64_t T = schedule.training_steps > 0 ? schedule.training_steps : schedule.num_steps();
        const auto train = make_schedule(T, schedule.beta_start, schedule.beta_end, schedule.shape);
        auto out = torch::empty_like(x_t);
        for (int64_t b = 0; b < x_t.size(0); ++b) {
            const double ab = train.alpha_bar(ts[b].item<int64_t>());
            auto eps = (x_t[b] - std::sqrt(ab) * x0[b]) / std::sqrt(1.0 - ab);
            out[b] = std::sqrt(ab) * eps - std::sqrt(1.0 - ab) * x0[b];
        }
        return out;
    };
}

}  // namespace

TEST(Schedule, SingleStep) {
    auto s = make_schedule(1, 0.1, 0.1);
    ASSERT_EQ(s.num_steps(), 1);
    EXPECT_DOUBLE_EQ(s.betas[0], 0.1);
    EXPECT_NEAR(s.alpha_bars[0], 0.9, 1e-15);
}

TEST(Schedule, ExplicitBetasHandProduct) {
    auto s = schedule_from_betas({0.1, 0.2, 0.3});
    EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
    EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
    EXPECT_NEAR(s.alpha_bar(3), 0.504, 1e-15);
}

TEST(Schedule, LinearThousandStepsDecreasesBelowOnePercent) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    EXPECT_NEAR(s.betas.front(), 1e-4, 1e-15);
    EXPECT_NEAR(s.betas.back(), 0.02, 1e-15);
    EXPECT_NEAR(s.betas[1] - s.betas[0], (0.02 - 1e-4) / 999.0, 1e-15);
    for (int64_t t = 2; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_LT(s.alpha_bar(1000), 0.01);
    EXPECT_GT(s.alpha_bar(1000), 0.0);
}

TEST(Schedule, ProductIdentityHoldsForEveryShapeAndRespacing) {
    for (auto shape : {ScheduleShape::linear, ScheduleShape::cosine}) {
        auto s = make_schedule(1000, 1e-4, 0.02, shape);
        for (int64_t stride : {1, 7, 20, 1000}) {
            auto r = respace(s, stride);
            double prod = 1.0;
            for (int64_t t = 1; t <= r.num_steps(); ++t) {
                prod *= 1.0 - r.beta(t);
                EXPECT_LT(std::abs(r.alpha_bar(t) - prod), 1e-12);
                EXPECT_GT(r.alpha_bar(t), 0.0);
                EXPECT_LT(r.alpha_bar(t), 1.0);
                // Respaced steps reuse training-scale alpha_bar values exactly.
                EXPECT_NEAR(r.alpha_bar(t), s.alpha_bar(r.model_timestep(t)), 1e-12);
            }
            EXPECT_EQ(r.model_timestep(r.num_steps()), 1000);
        }
    }
}

TEST(Schedule, InvalidParametersRejected) {
    EXPECT_THROW(make_schedule(0, 1e-4, 0.02), ParameterError);
    EXPECT_THROW(make_schedule(10, 0.0, 0.02), ParameterError);
    EXPECT_THROW(make_schedule(10, 0.03, 0.02), ParameterError);
    EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ParameterError);
    EXPECT_THROW(schedule_from_betas({0.1, 1.0}), ParameterError);
    EXPECT_THROW(respace(make_schedule(10, 1e-4, 0.02), 0), ParameterError);
}

TEST(Schedule, KvRoundTrip) {
    auto s = respace(make_schedule(1000, 1e-4, 0.02, ScheduleShape::cosine), 20);
    std::map<std::string, std::string> kv;
    std::istringstream in(s.to_kv());
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string x) {
            x.erase(0, x.find_first_not_of(' '));
            x.erase(x.find_last_not_of(' ') + 1);
            return x;
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto back = schedule_from_kv(kv);
    ASSERT_EQ(back.num_steps(), s.num_steps());
    for (int64_t t = 1; t <= s.num_steps(); ++t) {
        EXPECT_EQ(back.model_timestep(t), s.model_timestep(t));
        EXPECT_NEAR(back.alpha_bar(t), s.alpha_bar(t), 1e-15);
    }
}

TEST(ForwardDiffuse, NoiseFreeAndSignalFree) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    auto x0 = torch::randn({4, 3}, torch::kFloat64);
    auto eps = torch::randn({4, 3}, torch::kFloat64);
    for (int64_t t : {1, 250, 1000}) {
        EXPECT_TRUE(torch::allclose(forward_diffuse(x0, t, torch::zeros_like(x0), s), std::sqrt(s.alpha_bar(t)) * x0));
        EXPECT_TRUE(torch::allclose(forward_diffuse(torch::zeros_like(eps), t, eps, s),
                                    std::sqrt(1.0 - s.alpha_bar(t)) * eps));
    }
}

TEST(ForwardDiffuse, HandComputedThirdStep) {
    auto s = schedule_from_betas({0.1, 0.2, 0.3});
    auto x = forward_diffuse(f64({1, 0}), 3, f64({0, 1}), s);
    EXPECT_NEAR(x[0].item<double>(), std::sqrt(0.504), 1e-12);
    EXPECT_NEAR(x[1].item<double>(), std::sqrt(0.496), 1e-12);
}

TEST(ForwardDiffuse, RejectsShapeMismatchAndBadTimestep) {
    auto s = make_schedule(10, 1e-4, 0.02);
    EXPECT_THROW(forward_diffuse(torch::zeros({2}), 1, torch::zeros({3}), s), ShapeError);
    EXPECT_THROW(forward_diffuse(torch::zeros({2}), 0, torch::zeros({2}), s), ParameterError);
    EXPECT_THROW(forward_diffuse(torch::zeros({2}), 11, torch::zeros({2}), s), ParameterError);
    EXPECT_THROW(v_target(torch::zeros({2}), torch::zeros({3}), 1, s), ShapeError);
}

TEST(ForwardDiffuse, PerSampleTimestepsMatchScalarCalls) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    auto x0 = torch::randn({3, 2, 2}, torch::kFloat64);
    auto eps = torch::randn({3, 2, 2}, torch::kFloat64);
    auto ts = torch::tensor({1, 500, 1000}, torch::kLong);
    auto batched = forward_diffuse(x0, ts, eps, s);
    auto vb = v_target(x0, eps, ts, s);
    for (int64_t b = 0; b < 3; ++b) {
        EXPECT_TRUE(torch::allclose(batched[b], forward_diffuse(x0[b], ts[b].item<int64_t>(), eps[b], s)));
        EXPECT_TRUE(torch::allclose(vb[b], v_target(x0[b], eps[b], ts[b].item<int64_t>(), s)));
    }
}

TEST(VParam, ZeroInputsAndLowNoiseLimit) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    EXPECT_TRUE(v_target(torch::zeros({5}), torch::zeros({5}), 10, s).eq(0).all().item<bool>());
    auto tiny = schedule_from_betas({1e-12});
    auto eps = torch::randn({5}, torch::kFloat64);
    EXPECT_TRUE(torch::allclose(v_target(torch::randn({5}, torch::kFloat64), eps, 1, tiny), eps, 0, 1e-5));
}

TEST(VParam, ZeroVelocityInversion) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    auto x = torch::randn({6}, torch::kFloat64);
    auto [x0, eps] = x0_eps_from_v(x, torch::zeros_like(x), 400, s);
    EXPECT_TRUE(torch::allclose(x0, std::sqrt(s.alpha_bar(400)) * x));
    EXPECT_TRUE(torch::allclose(eps, std::sqrt(1.0 - s.alpha_bar(400)) * x));
}

TEST(VParam, RoundTripAndReconstructionOverAllTimesteps) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    torch::manual_seed(3);
    for (int64_t t = 1; t <= 1000; t += 37) {
        auto x0 = torch::randn({8}, torch::kFloat64);
        auto eps = torch::randn({8}, torch::kFloat64);
        auto xt = forward_diffuse(x0, t, eps, s);
        auto [x0h, epsh] = x0_eps_from_v(xt, v_target(x0, eps, t, s), t, s);
        EXPECT_LT((x0h - x0).abs().max().item<double>(), 1e-5);
        EXPECT_LT((epsh - eps).abs().max().item<double>(), 1e-5);
        auto v = torch::randn({8}, torch::kFloat64);
        auto [a, b] = x0_eps_from_v(xt, v, t, s);
        EXPECT_LT((forward_diffuse(a, t, b, s) - xt).abs().max().item<double>(), 1e-12);
    }
}

TEST(Cfg, DegenerateScalesAreExact) {
    auto c = torch::randn({16});
    auto u = torch::randn({16});
    EXPECT_TRUE(torch::equal(cfg_combine(c, u, 1.0), c));
    EXPECT_TRUE(torch::equal(cfg_combine(c, u, 0.0), u));
}

TEST(Cfg, StrongGuidanceScalar) {
    EXPECT_DOUBLE_EQ(cfg_combine(f64({2}), f64({1}), 5.0).item<double>(), 6.0);
    EXPECT_THROW(cfg_combine(f64({2}), f64({1, 1}), 5.0), ShapeError);
    EXPECT_THROW(cfg_combine(f64({2}), f64({1}), -1.0), ParameterError);
}

TEST(Cfg, GuidanceConfigValidation) {
    EXPECT_NO_THROW((GuidanceConfig{5.0, 0.1}.validate()));
    EXPECT_THROW((GuidanceConfig{-0.5, 0.1}.validate()), ParameterError);
    EXPECT_THROW((GuidanceConfig{1.0, 1.0}.validate()), ParameterError);
}

TEST(ReverseStep, FinalStepIsNoiseFreePosteriorMean) {
    auto s = make_schedule(50, 1e-4, 0.02);
    DiffusionSampleState st{torch::randn({4}, torch::kFloat64), 1, 0};
    auto v = torch::randn({4}, torch::kFloat64);
    auto a = reverse_step(st, v, s, torch::randn({4}, torch::kFloat64));
    auto b = reverse_step(st, v, s, torch::randn({4}, torch::kFloat64));
    EXPECT_EQ(a.t, 0);
    EXPECT_TRUE(torch::equal(a.x, b.x));
    // Posterior mean at t = 1 is x0_hat (alpha_bar(0) = 1).
    EXPECT_TRUE(torch::allclose(a.x, x0_eps_from_v(st.x, v, 1, s).first));
}

TEST(ReverseStep, SingleStepScheduleCollapsesToX0Hat) {
    auto s = make_schedule(1, 0.5, 0.5);
    auto x = torch::randn({3}, torch::kFloat64);
    auto v = torch::randn({3}, torch::kFloat64);
    auto out = reverse_step({x, 1, 0}, v, s, torch::zeros({3}, torch::kFloat64));
    EXPECT_TRUE(torch::allclose(out.x, x0_eps_from_v(x, v, 1, s).first));
}

TEST(ReverseStep, RejectsFinishedState) {
    auto s = make_schedule(5, 1e-4, 0.02);
    EXPECT_THROW(reverse_step({torch::zeros({1}), 0, 0}, torch::zeros({1}), s, torch::zeros({1})), ParameterError);
}

TEST(Sample, OracleRecoversTargetFullAndRespaced) {
    auto train = make_schedule(1000, 1e-4, 0.02);
    auto x0 = torch::randn({2, 5}, torch::kFloat64).clamp(-2, 2);
    auto cond = Condition::make({0, 1}, 2);
    for (int64_t stride : {1, 20}) {
        auto s = respace(train, stride);
        auto out = sample(oracle_for(x0, s), {2, 5}, cond, {1.0, 0.1}, s, 9, torch::kFloat64);
        EXPECT_LT((out - x0).abs().max().item<double>(), 1e-3) << "stride " << stride;
    }
}

TEST(Sample, DeterministicPerSeed) {
    auto s = make_schedule(20, 1e-3, 0.05);
    Denoiser d = [](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& l) {
        return 0.1 * x + 0.01 * l.to(x.scalar_type()).view({-1, 1});
    };
    auto cond = Condition::make({0, 1, 0}, 2);
    auto a = sample(d, {3, 4}, cond, {3.0, 0.0}, s, 5);
    auto b = sample(d, {3, 4}, cond, {3.0, 0.0}, s, 5);
    auto c = sample(d, {3, 4}, cond, {3.0, 0.0}, s, 6);
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_FALSE(torch::equal(a, c));
}

TEST(Sample, UnitGuidanceNeverEvaluatesUnconditionalBranch) {
    auto s = make_schedule(10, 1e-3, 0.05);
    int64_t uncond_calls = 0, cond_calls = 0;
    Denoiser d = [&](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor& l) {
        (l.eq(2).all().item<bool>() ? uncond_calls : cond_calls)++;
        return 0.2 * x + l.to(x.scalar_type()).view({-1, 1});
    };
    auto cond = Condition::make({0, 1}, 2);
    auto guided = sample(d, {2, 3}, cond, {1.0, 0.0}, s, 1);
    EXPECT_EQ(uncond_calls, 0);
    EXPECT_EQ(cond_calls, 10);

    // Reference loop written directly against reverse_step.
    auto gen = make_generator(1);
    DiffusionSampleState st{torch::randn({2, 3}, gen, torch::kFloat32), 10, 1};
    while (st.t > 0) {
        auto ts = torch::full({2}, s.model_timestep(st.t), torch::kLong);
        auto v = d(st.x, ts, cond.labels);
        auto noise = torch::randn({2, 3}, gen, torch::kFloat32);
        st = reverse_step(st, v, s, noise);
    }
    EXPECT_TRUE(torch::equal(guided, st.x));

    cond_calls = uncond_calls = 0;
    sample(d, {2, 3}, cond, {0.0, 0.0}, s, 1);
    EXPECT_EQ(cond_calls, 0);
    EXPECT_EQ(uncond_calls, 10);
}

TEST(Sample, DenoiserShapeViolationSurfaces) {
    auto s = make_schedule(3, 1e-3, 0.05);
    Denoiser bad = [](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) { return x.sum(1); };
    EXPECT_THROW(sample(bad, {2, 3}, Condition::make({0, 0}, 1), {1.0, 0.0}, s, 0), ShapeError);
}

TEST(TrainingLoss, OracleGivesZeroAndZeroDenoiserGivesUnitEnergy) {
    auto s = make_schedule(1000, 1e-4, 0.02);
    auto gen = make_generator(4);
    auto x0 = torch::randn({10000, 1}, gen, torch::kFloat64);
    auto labels = torch::zeros({10000}, torch::kLong);
    Denoiser zero = [](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) {
        return torch::zeros_like(x);
    };
    const double l = training_loss(zero, x0, labels, 1, s, 0.0, 8).item<double>();
    EXPECT_NEAR(l, 1.0, 0.05);

    // An oracle that knows x0 recovers eps from x_t and returns the exact v.
    auto small = x0.slice(0, 0, 256);
    EXPECT_LT(training_loss(oracle_for(small, s), small, labels.slice(0, 0, 256), 1, s, 0.0, 8).item<double>(), 1e-12);

    auto probe = make_probe(small, labels.slice(0, 0, 256), s, 2);
    Denoiser exact = [&](const torch::Tensor&, const torch::Tensor&, const torch::Tensor&) {
        return v_target(probe.x0, probe.eps, probe.timesteps, s);
    };
    EXPECT_NEAR(probe_loss(exact, probe, s), 0.0, 1e-20);
}

TEST(TrainingLoss, DropoutControlsUnconditionalToken) {
    auto s = make_schedule(100, 1e-4, 0.02);
    int64_t null_seen = 0, total = 0;
    Denoiser spy = [&](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor& l) {
        null_seen += l.eq(3).sum().item<int64_t>();
        total += l.numel();
        return torch::zeros_like(x);
    };
    auto x0 = torch::randn({4000, 2});
    auto labels = torch::randint(0, 3, {4000}, torch::kLong);
    training_loss(spy, x0, labels, 3, s, 0.0, 1);
    EXPECT_EQ(null_seen, 0);
    training_loss(spy, x0, labels, 3, s, 0.25, 1);
    EXPECT_NEAR(static_cast<double>(null_seen) / 4000.0, 0.25, 0.03);
    EXPECT_THROW(training_loss(spy, x0.slice(0, 0, 0), labels.slice(0, 0, 0), 3, s, 0.0, 1), DataError);
    EXPECT_THROW(training_loss(spy, x0, labels, 3, s, 1.0, 1), ParameterError);
}

TEST(TrainingLoss, TimestepsCoverRangeUniformly) {
    auto s = make_schedule(10, 1e-4, 0.02);
    std::vector<int64_t> hist(11, 0);
    Denoiser spy = [&](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor&) {
        for (int64_t i = 0; i < t.numel(); ++i) hist[static_cast<size_t>(t[i].item<int64_t>())]++;
        return torch::zeros_like(x);
    };
    training_loss(spy, torch::zeros({20000, 1}), torch::zeros({20000}, torch::kLong), 1, s, 0.0, 3);
    EXPECT_EQ(hist[0], 0);
    for (int64_t t = 1; t <= 10; ++t) EXPECT_NEAR(hist[static_cast<size_t>(t)] / 20000.0, 0.1, 0.01);
}

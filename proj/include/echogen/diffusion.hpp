// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <ATen/core/Generator.h>
#include <torch/types.h>

namespace echogen::diffusion {

enum class ScheduleShape { linear, cosine };

std::string to_string(ScheduleShape shape);
ScheduleShape parse_schedule_shape(const std::string& name);

/**
 * Discrete noise schedule. Timesteps are 1-based: step t uses betas[t-1] and
 * alpha_bars[t-1], and alpha_bar(0) is defined as 1.
 *
 * A schedule may be a respaced view of a longer training schedule. In that
 * case `model_timesteps[t-1]` is the training-scale timestep the denoiser
 * must be told when the sampler is at local step t.
 */
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;
    std::vector<int64_t> model_timesteps;

    // Provenance, kept for serialization.
    ScheduleShape shape = ScheduleShape::linear;
    double beta_start = 0.0;
    double beta_end = 0.0;
    int64_t training_steps = 0;
    int64_t stride = 1;

    int64_t num_steps() const { return static_cast<int64_t>(betas.size()); }
    double alpha_bar(int64_t t) const;
    double beta(int64_t t) const;
    int64_t model_timestep(int64_t t) const;

    /// Plain-text key/value block: T, shape, beta_start, beta_end, stride.
    std::string to_kv() const;
};

/// Builds a training schedule. linear interpolates beta evenly; cosine eases
/// beta from beta_start to beta_end along half a cosine period.
NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            ScheduleShape shape = ScheduleShape::linear);

/// Schedule from explicit betas (each in (0,1)).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

/// Sub-schedule visiting training timesteps T, T-stride, ... (> 0). Betas are
/// recomputed from consecutive alpha_bar ratios so the product identity holds.
NoiseSchedule respace(const NoiseSchedule& schedule, int64_t stride);

/// Inverse of NoiseSchedule::to_kv (respacing included).
NoiseSchedule schedule_from_kv(const std::map<std::string, std::string>& kv);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
torch::Tensor forward_diffuse(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);
/// Per-sample timesteps along the leading dimension (int64 tensor [B]).
torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);

/// v = sqrt(abar_t) eps - sqrt(1 - abar_t) x0.
torch::Tensor v_target(const torch::Tensor& x0, const torch::Tensor& eps, int64_t t, const NoiseSchedule& schedule);
torch::Tensor v_target(const torch::Tensor& x0, const torch::Tensor& eps, const torch::Tensor& t,
                       const NoiseSchedule& schedule);

/// Inverts the v parameterization: returns (x0_hat, eps_hat).
std::pair<torch::Tensor, torch::Tensor> x0_eps_from_v(const torch::Tensor& x_t, const torch::Tensor& v, int64_t t,
                                                      const NoiseSchedule& schedule);

/// Classifier-free guidance: uncond + w (cond - uncond). w == 1 returns cond and
/// w == 0 returns uncond bit-exactly.
torch::Tensor cfg_combine(const torch::Tensor& cond, const torch::Tensor& uncond, double w);

struct GuidanceConfig {
    double scale = 1.0;
    double conditional_dropout_p = 0.1;

    void validate() const;
};

struct DiffusionSampleState {
    torch::Tensor x;
    int64_t t = 0;
    uint64_t rng_seed = 0;
};

/// One ancestral DDPM step from t to t-1 using the posterior built from the
/// v-prediction. The noise term vanishes at t = 1.
DiffusionSampleState reverse_step(const DiffusionSampleState& state, const torch::Tensor& model_v,
                                  const NoiseSchedule& schedule, const torch::Tensor& step_noise);

/// Network interface shared by the image and video models:
/// (x_t, training-scale timesteps [B] int64, label indices [B] int64) -> v.
using Denoiser =
    std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& timesteps, const torch::Tensor& labels)>;

/// Conditioning bundle: requested labels and the matching unconditional tokens.
/// Anything else (e.g. an anchor frame) is bound inside the denoiser.
struct Condition {
    torch::Tensor labels;
    torch::Tensor null_labels;

    static Condition make(const std::vector<int64_t>& labels, int64_t null_label);
};

/**
 * Generic guided sampling loop. Draws x_T from a generator seeded with `seed`,
 * then applies reverse_step down to t = 0. At w == 1 only the conditional
 * branch is evaluated and at w == 0 only the unconditional one.
 */
torch::Tensor sample(const Denoiser& denoiser, at::IntArrayRef shape, const Condition& condition,
                     const GuidanceConfig& guidance, const NoiseSchedule& schedule, uint64_t seed,
                     torch::ScalarType dtype = torch::kFloat32);

/// Seeded CPU generator.
at::Generator make_generator(uint64_t seed);

/**
 * v-prediction regression loss on one batch. Samples t uniformly in {1..T} per
 * example, replaces each label by `null_label` with probability dropout_p, and
 * returns the mean squared error against v_target (differentiable).
 */
torch::Tensor training_loss(const Denoiser& denoiser, const torch::Tensor& x0, const torch::Tensor& labels,
                            int64_t null_label, const NoiseSchedule& schedule, double dropout_p, at::Generator& gen);
torch::Tensor training_loss(const Denoiser& denoiser, const torch::Tensor& x0, const torch::Tensor& labels,
                            int64_t null_label, const NoiseSchedule& schedule, double dropout_p, uint64_t seed);

/// Loss at fixed, pre-drawn (t, eps), used as a reproducible probe during training.
struct ProbeBatch {
    torch::Tensor x0;
    torch::Tensor labels;
    torch::Tensor timesteps;
    torch::Tensor eps;
};
ProbeBatch make_probe(const torch::Tensor& x0, const torch::Tensor& labels, const NoiseSchedule& schedule,
                      uint64_t seed);
double probe_loss(const Denoiser& denoiser, const ProbeBatch& probe, const NoiseSchedule& schedule);

}  // namespace echogen::diffusion

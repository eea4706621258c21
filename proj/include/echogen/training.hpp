// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/nn/module.h>

#include "echogen/diffusion.hpp"
#include "json.hpp"

namespace echogen {

/// Optimizer settings shared by the diffusion and classifier trainers.
struct OptimConfig {
    int64_t steps = 3000;
    int64_t batch_size = 64;
    double learning_rate = 1e-3;
    int64_t warmup = 100;
    double grad_clip = 1.0;
    double weight_decay = 0.0;
    uint64_t seed = 1;
    int64_t probe_every = 250;
    int64_t probe_size = 64;

    void validate() const;
    nlohmann::json to_json() const;
};

/// Linear warmup followed by cosine decay to 5% of the peak rate.
double scheduled_lr(const OptimConfig& opt, int64_t step);

struct TrainingTrace {
    std::vector<double> loss;
    std::vector<std::pair<int64_t, double>> probe;  // (step, probe loss)
    double probe_initial = 0.0;
    double probe_final = 0.0;

    nlohmann::json to_json() const;
};

/// Binds per-batch conditioning (e.g. anchors taken from x0) into a denoiser.
using DenoiserFactory = std::function<diffusion::Denoiser(const torch::Tensor& x0_batch)>;

/**
 * Minibatch v-prediction training with Adam. Batches are drawn uniformly with
 * replacement from (x0, labels); a fixed probe batch (first probe_size
 * examples, fixed t and eps) is evaluated every probe_every steps. Throws
 * TrainingError with diagnostics when the loss becomes non-finite.
 */
TrainingTrace train_diffusion(torch::nn::Module& model, const DenoiserFactory& make_denoiser, const torch::Tensor& x0,
                              const torch::Tensor& labels, int64_t null_label, const diffusion::NoiseSchedule& schedule,
                              double dropout_p, const OptimConfig& opt, const std::string& what);

}  // namespace echogen

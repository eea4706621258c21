// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/training.hpp"

#include <cmath>
#include <sstream>

#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

void OptimConfig::validate() const {
    if (steps < 1 || batch_size < 1 || !(learning_rate > 0.0) || warmup < 0 || !(grad_clip > 0.0) ||
        weight_decay < 0.0 || probe_every < 1 || probe_size < 1) {
        throw ParameterError("invalid optimizer settings");
    }
}

nlohmann::json OptimConfig::to_json() const {
    return {{"steps", steps},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"warmup", warmup},     {"grad_clip", grad_clip},   {"weight_decay", weight_decay},
            {"seed", seed},         {"probe_every", probe_every}, {"probe_size", probe_size}};
}

double scheduled_lr(const OptimConfig& opt, int64_t step) {
    if (step < opt.warmup) {
        return opt.learning_rate * static_cast<double>(step + 1) / static_cast<double>(opt.warmup);
    }
    const double span = std::max<int64_t>(1, opt.steps - opt.warmup);
    const double progress = std::min(1.0, static_cast<double>(step - opt.warmup) / span);
    return opt.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

nlohmann::json TrainingTrace::to_json() const {
    nlohmann::json probes = nlohmann::json::array();
    for (const auto& [step, value] : probe) probes.push_back({step, value});
    return {{"loss", loss}, {"probe", probes}, {"probe_initial", probe_initial}, {"probe_final", probe_final}};
}

TrainingTrace train_diffusion(torch::nn::Module& model, const DenoiserFactory& make_denoiser, const torch::Tensor& x0,
                              const torch::Tensor& labels, int64_t null_label, const diffusion::NoiseSchedule& schedule,
                              double dropout_p, const OptimConfig& opt, const std::string& what) {
    opt.validate();
    if (!x0.defined() || x0.size(0) == 0) throw DataError(what + ": empty training set");
    const int64_t n = x0.size(0);
    auto gen = diffusion::make_generator(opt.seed);

    const int64_t probe_n = std::min(n, opt.probe_size);
    auto probe = diffusion::make_probe(x0.slice(0, 0, probe_n), labels.slice(0, 0, probe_n), schedule,
                                       derive_seed(opt.seed, 0x9e37));
    auto probe_den = make_denoiser(probe.x0);
    auto evaluate_probe = [&] {
        model.eval();
        const double v = diffusion::probe_loss(probe_den, probe, schedule);
        model.train();
        return v;
    };

    torch::optim::AdamW optimizer(model.parameters(),
                                  torch::optim::AdamWOptions(opt.learning_rate).weight_decay(opt.weight_decay));
    TrainingTrace trace;
    trace.probe_initial = evaluate_probe();
    trace.probe.emplace_back(0, trace.probe_initial);
    model.train();
    for (int64_t step = 0; step < opt.steps; ++step) {
        for (auto& group : optimizer.param_groups()) {
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(scheduled_lr(opt, step));
        }
        auto idx = torch::randint(0, n, {opt.batch_size}, gen, torch::kLong);
        auto xb = x0.index_select(0, idx);
        auto yb = labels.index_select(0, idx);
        auto loss = diffusion::training_loss(make_denoiser(xb), xb, yb, null_label, schedule, dropout_p, gen);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            std::ostringstream os;
            os << what << " training diverged at step " << step << ": non-finite loss";
            if (!trace.loss.empty()) os << " (previous loss " << trace.loss.back() << ")";
            throw TrainingError(os.str());
        }
        optimizer.zero_grad();
        loss.backward();
        torch::nn::utils::clip_grad_norm_(model.parameters(), opt.grad_clip);
        optimizer.step();
        trace.loss.push_back(value);
        if ((step + 1) % opt.probe_every == 0 || step + 1 == opt.steps) {
            trace.probe.emplace_back(step + 1, evaluate_probe());
        }
    }
    model.eval();
    trace.probe_final = trace.probe.back().second;
    return trace;
}

}  // namespace echogen

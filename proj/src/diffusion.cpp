// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "echogen/errors.hpp"

namespace echogen::diffusion {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
        std::ostringstream os;
        os << what << ": shape mismatch " << (a.defined() ? a.sizes() : at::IntArrayRef{}) << " vs "
           << (b.defined() ? b.sizes() : at::IntArrayRef{});
        throw ShapeError(os.str());
    }
}

void check_timestep(int64_t t, const NoiseSchedule& s) {
    if (t < 1 || t > s.num_steps()) {
        throw ParameterError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.num_steps()) + "]");
    }
}

// Per-sample coefficient sqrt(abar) / sqrt(1-abar), broadcastable against `like`.
std::pair<torch::Tensor, torch::Tensor> batch_coefficients(const torch::Tensor& t, const NoiseSchedule& s,
                                                           const torch::Tensor& like) {
    if (t.dim() != 1 || t.size(0) != like.size(0)) {
        throw ShapeError("per-sample timesteps must be a [B] tensor matching the batch dimension");
    }
    auto tl = t.to(torch::kLong);
    if (tl.numel() > 0 && (tl.min().item<int64_t>() < 1 || tl.max().item<int64_t>() > s.num_steps())) {
        throw ParameterError("per-sample timesteps outside [1, T]");
    }
    auto table = torch::tensor(s.alpha_bars, torch::kFloat64);
    auto abar = table.index_select(0, tl - 1);
    std::vector<int64_t> view(static_cast<size_t>(like.dim()), 1);
    view[0] = like.size(0);
    auto a = abar.sqrt().to(like.scalar_type()).view(view);
    auto b = (1.0 - abar).sqrt().to(like.scalar_type()).view(view);
    return {a, b};
}

}  // namespace

std::string to_string(ScheduleShape shape) {
    return shape == ScheduleShape::linear ? "linear" : "cosine";
}

ScheduleShape parse_schedule_shape(const std::string& name) {
    if (name == "linear") return ScheduleShape::linear;
    if (name == "cosine" || name == "cosine-like") return ScheduleShape::cosine;
    throw ParameterError("unknown schedule shape '" + name + "'");
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    if (t == 0) return 1.0;
    check_timestep(t, *this);
    return alpha_bars[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::beta(int64_t t) const {
    check_timestep(t, *this);
    return betas[static_cast<size_t>(t - 1)];
}

int64_t NoiseSchedule::model_timestep(int64_t t) const {
    check_timestep(t, *this);
    return model_timesteps[static_cast<size_t>(t - 1)];
}

std::string NoiseSchedule::to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "T = " << training_steps << "\n"
       << "shape = " << to_string(shape) << "\n"
       << "beta_start = " << beta_start << "\n"
       << "beta_end = " << beta_end << "\n"
       << "stride = " << stride << "\n";
    return os.str();
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) {
        throw ParameterError("schedule needs at least one step");
    }
    NoiseSchedule s;
    double prod = 1.0;
    for (size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
            throw ParameterError("beta values must lie in (0, 1)");
        }
        prod *= (1.0 - betas[i]);
        s.alpha_bars.push_back(prod);
        s.model_timesteps.push_back(static_cast<int64_t>(i) + 1);
    }
    s.betas = std::move(betas);
    s.training_steps = s.num_steps();
    s.beta_start = s.betas.front();
    s.beta_end = s.betas.back();
    return s;
}

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end, ScheduleShape shape) {
    if (T < 1) {
        throw ParameterError("schedule length T must be >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ParameterError("schedule requires 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) {
        const double u = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        const double ease = shape == ScheduleShape::linear ? u : 0.5 * (1.0 - std::cos(std::numbers::pi * u));
        betas[static_cast<size_t>(i)] = beta_start + (beta_end - beta_start) * ease;
    }
    auto s = schedule_from_betas(std::move(betas));
    s.shape = shape;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    return s;
}

NoiseSchedule respace(const NoiseSchedule& schedule, int64_t stride) {
    if (stride < 1) {
        throw ParameterError("respacing stride must be >= 1");
    }
    if (stride == 1) {
        return schedule;
    }
    std::vector<int64_t> kept;
    for (int64_t t = schedule.num_steps(); t >= 1; t -= stride) {
        kept.push_back(t);
    }
    std::reverse(kept.begin(), kept.end());

    NoiseSchedule out;
    double prev = 1.0;
    for (int64_t t : kept) {
        const double abar = schedule.alpha_bar(t);
        out.betas.push_back(1.0 - abar / prev);
        out.model_timesteps.push_back(schedule.model_timestep(t));
        prev = abar;
    }
    // Recompute the products from the stored betas so the identity is exact.
    double prod = 1.0;
    for (double b : out.betas) {
        prod *= (1.0 - b);
        out.alpha_bars.push_back(prod);
    }
    out.shape = schedule.shape;
    out.beta_start = schedule.beta_start;
    out.beta_end = schedule.beta_end;
    out.training_steps = schedule.training_steps;
    out.stride = schedule.stride * stride;
    return out;
}

NoiseSchedule schedule_from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw ParameterError("schedule block is missing key '" + key + "'");
        }
        return it->second;
    };
    auto s = make_schedule(std::stoll(get("T")), std::stod(get("beta_start")), std::stod(get("beta_end")),
                           parse_schedule_shape(get("shape")));
    auto it = kv.find("stride");
    return it == kv.end() ? s : respace(s, std::stoll(it->second));
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
    check_same_shape(x0, eps, "forward_diffuse");
    check_timestep(t, schedule);
    const double abar = schedule.alpha_bar(t);
    return x0 * std::sqrt(abar) + eps * std::sqrt(1.0 - abar);
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
    check_same_shape(x0, eps, "forward_diffuse");
    auto [a, b] = batch_coefficients(t, schedule, x0);
    return x0 * a + eps * b;
}

torch::Tensor v_target(const torch::Tensor& x0, const torch::Tensor& eps, int64_t t, const NoiseSchedule& schedule) {
    check_same_shape(x0, eps, "v_target");
    check_timestep(t, schedule);
    const double abar = schedule.alpha_bar(t);
    return eps * std::sqrt(abar) - x0 * std::sqrt(1.0 - abar);
}

torch::Tensor v_target(const torch::Tensor& x0, const torch::Tensor& eps, const torch::Tensor& t,
                       const NoiseSchedule& schedule) {
    check_same_shape(x0, eps, "v_target");
    auto [a, b] = batch_coefficients(t, schedule, x0);
    return eps * a - x0 * b;
}

std::pair<torch::Tensor, torch::Tensor> x0_eps_from_v(const torch::Tensor& x_t, const torch::Tensor& v, int64_t t,
                                                      const NoiseSchedule& schedule) {
    check_same_shape(x_t, v, "x0_eps_from_v");
    check_timestep(t, schedule);
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
    return {x_t * a - v * b, x_t * b + v * a};
}

torch::Tensor cfg_combine(const torch::Tensor& cond, const torch::Tensor& uncond, double w) {
    check_same_shape(cond, uncond, "cfg_combine");
    if (!(w >= 0.0)) {
        throw ParameterError("guidance scale must be >= 0");
    }
    if (w == 1.0) return cond.clone();
    if (w == 0.0) return uncond.clone();
    return uncond + (cond - uncond) * w;
}

void GuidanceConfig::validate() const {
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
        throw ParameterError("guidance scale w must be a finite value >= 0");
    }
    if (!(conditional_dropout_p >= 0.0 && conditional_dropout_p < 1.0)) {
        throw ParameterError("conditional dropout probability must lie in [0, 1)");
    }
}

DiffusionSampleState reverse_step(const DiffusionSampleState& state, const torch::Tensor& model_v,
                                  const NoiseSchedule& schedule, const torch::Tensor& step_noise) {
    if (state.t < 1) {
        throw ParameterError("reverse_step called on a finished sample (t = 0)");
    }
    check_same_shape(state.x, model_v, "reverse_step");
    auto [x0_hat, eps_hat] = x0_eps_from_v(state.x, model_v, state.t, schedule);
    DiffusionSampleState next{torch::Tensor(), state.t - 1, state.rng_seed};
    if (state.t == 1) {
        // alpha_bar(0) = 1: the posterior collapses onto x0_hat with no noise.
        next.x = x0_hat;
        return next;
    }
    check_same_shape(state.x, step_noise, "reverse_step noise");
    const double abar_t = schedule.alpha_bar(state.t);
    const double abar_prev = schedule.alpha_bar(state.t - 1);
    const double beta_t = schedule.beta(state.t);
    const double coef_x0 = std::sqrt(abar_prev) * beta_t / (1.0 - abar_t);
    const double coef_xt = std::sqrt(1.0 - beta_t) * (1.0 - abar_prev) / (1.0 - abar_t);
    const double variance = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t;
    next.x = x0_hat * coef_x0 + state.x * coef_xt + step_noise * std::sqrt(variance);
    return next;
}

Condition Condition::make(const std::vector<int64_t>& labels, int64_t null_label) {
    auto l = torch::tensor(labels, torch::kLong);
    return {l, torch::full_like(l, null_label)};
}

at::Generator make_generator(uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor sample(const Denoiser& denoiser, at::IntArrayRef shape, const Condition& condition,
                     const GuidanceConfig& guidance, const NoiseSchedule& schedule, uint64_t seed,
                     torch::ScalarType dtype) {
    guidance.validate();
    if (shape.empty()) {
        throw ShapeError("sample shape needs a leading batch dimension");
    }
    const int64_t batch = shape[0];
    if (condition.labels.numel() != batch || condition.null_labels.numel() != batch) {
        throw ShapeError("condition must carry one label per batch element");
    }
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed);
    const auto opts = torch::TensorOptions().dtype(dtype);
    DiffusionSampleState state{torch::randn(shape, gen, opts), schedule.num_steps(), seed};

    auto evaluate = [&](const torch::Tensor& ts, const torch::Tensor& labels) {
        auto v = denoiser(state.x, ts, labels);
        if (!v.defined() || v.sizes() != state.x.sizes()) {
            throw ShapeError("denoiser contract violated: output shape differs from input shape");
        }
        return v.to(dtype);
    };

    const double w = guidance.scale;
    while (state.t > 0) {
        auto ts = torch::full({batch}, schedule.model_timestep(state.t), torch::kLong);
        torch::Tensor v;
        if (w == 1.0) {
            v = evaluate(ts, condition.labels);
        } else if (w == 0.0) {
            v = evaluate(ts, condition.null_labels);
        } else {
            v = cfg_combine(evaluate(ts, condition.labels), evaluate(ts, condition.null_labels), w);
        }
        auto noise = state.t > 1 ? torch::randn(shape, gen, opts) : torch::Tensor();
        state = reverse_step(state, v, schedule, noise);
    }
    return state.x;
}

torch::Tensor training_loss(const Denoiser& denoiser, const torch::Tensor& x0, const torch::Tensor& labels,
                            int64_t null_label, const NoiseSchedule& schedule, double dropout_p, at::Generator& gen) {
    if (!x0.defined() || x0.dim() < 1 || x0.size(0) == 0) {
        throw DataError("training_loss needs a non-empty batch");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ParameterError("conditional dropout probability must lie in [0, 1)");
    }
    const int64_t batch = x0.size(0);
    if (labels.numel() != batch) {
        throw ShapeError("training_loss needs one label per example");
    }
    auto t = torch::randint(1, schedule.num_steps() + 1, {batch}, gen, torch::kLong);
    auto eps = torch::randn(x0.sizes(), gen, x0.options());
    auto keep = torch::rand({batch}, gen, torch::kFloat64) >= dropout_p;
    auto cond = torch::where(keep, labels.to(torch::kLong), torch::full({batch}, null_label, torch::kLong));

    auto x_t = forward_diffuse(x0, t, eps, schedule);
    auto target = v_target(x0, eps, t, schedule);
    auto model_t = torch::tensor(schedule.model_timesteps, torch::kLong).index_select(0, t - 1);
    auto pred = denoiser(x_t, model_t, cond);
    if (pred.sizes() != x0.sizes()) {
        throw ShapeError("denoiser contract violated: output shape differs from input shape");
    }
    return (pred - target).square().mean();
}

torch::Tensor training_loss(const Denoiser& denoiser, const torch::Tensor& x0, const torch::Tensor& labels,
                            int64_t null_label, const NoiseSchedule& schedule, double dropout_p, uint64_t seed) {
    auto gen = make_generator(seed);
    return training_loss(denoiser, x0, labels, null_label, schedule, dropout_p, gen);
}

ProbeBatch make_probe(const torch::Tensor& x0, const torch::Tensor& labels, const NoiseSchedule& schedule,
                      uint64_t seed) {
    auto gen = make_generator(seed);
    const int64_t batch = x0.size(0);
    ProbeBatch p;
    p.x0 = x0;
    p.labels = labels.to(torch::kLong);
    p.timesteps = torch::randint(1, schedule.num_steps() + 1, {batch}, gen, torch::kLong);
    p.eps = torch::randn(x0.sizes(), gen, x0.options());
    return p;
}

double probe_loss(const Denoiser& denoiser, const ProbeBatch& probe, const NoiseSchedule& schedule) {
    torch::NoGradGuard no_grad;
    auto x_t = forward_diffuse(probe.x0, probe.timesteps, probe.eps, schedule);
    auto target = v_target(probe.x0, probe.eps, probe.timesteps, schedule);
    auto model_t = torch::tensor(schedule.model_timesteps, torch::kLong).index_select(0, probe.timesteps - 1);
    return (denoiser(x_t, model_t, probe.labels) - target).square().mean().item<double>();
}

}  // namespace echogen::diffusion

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <torch/torch.h>

#include "echogen/checkpoint.hpp"
#include "echogen/diffusion.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace F = torch::nn::functional;

namespace {

torch::Tensor as_pixels(const torch::Tensor& frames) {
    if (frames.scalar_type() == torch::kUInt8) {
        return frames.to(torch::kFloat32).div(255.0).unsqueeze(1).expand({frames.size(0), 3, frames.size(1), frames.size(2)});
    }
    return frames.to(torch::kFloat32);
}

}  // namespace

ReidEmbedderImpl::ReidEmbedderImpl(int64_t dim) : embed_dim(dim) {
    auto conv = [](int64_t in, int64_t out) {
        return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
    };
    features = register_module(
        "features", torch::nn::Sequential(conv(1, 16), torch::nn::SiLU(), conv(16, 32), torch::nn::SiLU(),
                                          conv(32, 64), torch::nn::SiLU(), conv(64, 64), torch::nn::SiLU()));
    head = register_module("head", torch::nn::Linear(64 * 7 * 7, dim));
}

torch::Tensor ReidEmbedderImpl::forward(const torch::Tensor& pixels) {
    auto gray = pixels.mean(1, true) * 2.0 - 1.0;
    auto h = features->forward(gray).flatten(1);
    return F::normalize(head(h), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor supcon_loss(const torch::Tensor& z, const torch::Tensor& groups, double temperature) {
    const int64_t n = z.size(0);
    auto logits = torch::matmul(z, z.t()) / temperature;
    auto self = torch::eye(n, torch::kBool);
    logits = logits.masked_fill(self, -1e9);
    auto log_prob = logits - torch::logsumexp(logits, 1, true);
    auto positive = (groups.unsqueeze(0) == groups.unsqueeze(1)).logical_and(self.logical_not()).to(z.dtype());
    auto counts = positive.sum(1);
    auto valid = counts > 0;
    auto per_row = -(log_prob * positive).sum(1) / counts.clamp_min(1.0);
    return per_row.masked_select(valid).mean();
}

ReidTrainingResult train_reid(const torch::Tensor& frames, const std::vector<int64_t>& video_ids,
                              const ReidConfig& config) {
    if (!frames.defined() || frames.size(0) != static_cast<int64_t>(video_ids.size())) {
        throw ShapeError("one video id per frame required");
    }
    std::map<int64_t, std::vector<int64_t>> by_video;
    for (size_t i = 0; i < video_ids.size(); ++i) by_video[video_ids[i]].push_back(static_cast<int64_t>(i));
    if (by_video.size() < 2) throw DataError("re-identification training needs at least two videos");
    std::vector<std::vector<int64_t>> members;
    for (auto& [id, rows] : by_video) members.push_back(rows);

    torch::manual_seed(config.seed);
    auto gen = diffusion::make_generator(config.seed);
    ReidEmbedder embedder(config.embed_dim);
    torch::optim::Adam opt(embedder->parameters(), torch::optim::AdamOptions(config.learning_rate));
    const int64_t per_batch = std::min<int64_t>(config.videos_per_batch, static_cast<int64_t>(members.size()));

    ReidTrainingResult result{embedder, {}};
    for (int64_t step = 0; step < config.steps; ++step) {
        auto chosen = torch::randperm(static_cast<int64_t>(members.size()), gen, torch::kLong).slice(0, 0, per_batch);
        std::vector<int64_t> rows, groups;
        for (int64_t j = 0; j < per_batch; ++j) {
            const auto& m = members[static_cast<size_t>(chosen[j].item<int64_t>())];
            auto pick = torch::randint(0, static_cast<int64_t>(m.size()), {config.frames_per_video}, gen, torch::kLong);
            for (int64_t k = 0; k < config.frames_per_video; ++k) {
                rows.push_back(m[static_cast<size_t>(pick[k].item<int64_t>())]);
                groups.push_back(j);
            }
        }
        auto x = as_pixels(frames.index_select(0, torch::tensor(rows, torch::kLong)));
        auto loss = supcon_loss(embedder->forward(x), torch::tensor(groups, torch::kLong), config.temperature);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw TrainingError("re-identification training diverged at step " + std::to_string(step));
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.loss_trace.push_back(value);
    }
    embedder->eval();
    return result;
}

torch::Tensor embed_frames(const ReidEmbedder& embedder, const torch::Tensor& frames) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < frames.size(0); i += 256) {
        out.push_back(embedder.ptr()->forward(as_pixels(frames.slice(0, i, i + 256))));
    }
    if (out.empty()) return torch::zeros({0, embedder->embed_dim});
    return torch::cat(out);
}

std::pair<double, double> same_cross_similarity(const torch::Tensor& embeddings, const std::vector<int64_t>& ids) {
    auto sim = torch::matmul(embeddings, embeddings.t()).to(torch::kFloat64);
    auto g = torch::tensor(ids, torch::kLong);
    auto same = (g.unsqueeze(0) == g.unsqueeze(1)).logical_and(torch::eye(g.size(0), torch::kBool).logical_not());
    auto cross = (g.unsqueeze(0) != g.unsqueeze(1));
    return {sim.masked_select(same).mean().item<double>(), sim.masked_select(cross).mean().item<double>()};
}

nlohmann::json PrivacyDecision::to_json() const {
    return {{"accepted", accepted}, {"max_similarity", max_similarity}, {"nearest_row", nearest_row},
            {"nearest_source", nearest_source}, {"attempt", attempt}, {"seed", seed}};
}

std::pair<torch::Tensor, torch::Tensor> PrivacyIndex::nearest(const torch::Tensor& queries) const {
    if (size() == 0) throw DataError("privacy index is empty");
    auto sims = torch::matmul(queries.to(torch::kFloat32), embeddings.t());
    auto [best, arg] = sims.max(1);
    return {best, arg};
}

PrivacyDecision PrivacyIndex::decide(const torch::Tensor& query) const {
    auto [best, arg] = nearest(query.reshape({1, -1}));
    PrivacyDecision d;
    d.max_similarity = best[0].item<double>();
    d.nearest_row = arg[0].item<int64_t>();
    d.nearest_source = sources.at(static_cast<size_t>(d.nearest_row));
    d.accepted = !(d.max_similarity > threshold);
    return d;
}

PrivacyIndex build_index(const ReidEmbedder& embedder, const torch::Tensor& frames,
                         const std::vector<std::string>& sources) {
    if (!frames.defined() || frames.size(0) == 0) throw DataError("cannot build a privacy index from no frames");
    if (frames.size(0) != static_cast<int64_t>(sources.size())) throw ShapeError("one source per indexed frame");
    PrivacyIndex index;
    index.embeddings = embed_frames(embedder, frames);
    index.sources = sources;
    return index;
}

double quantile_threshold(std::vector<double> sims, double target_fpr) {
    if (sims.empty()) throw DataError("threshold calibration needs held-out frames");
    if (!(target_fpr >= 0.0 && target_fpr <= 1.0)) throw ParameterError("target_fpr must lie in [0, 1]");
    std::sort(sims.begin(), sims.end());
    const double pos = (1.0 - target_fpr) * static_cast<double>(sims.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sims.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? sims[lo] : sims[lo] + frac * (sims[hi] - sims[lo]);
}

double calibrate_threshold(PrivacyIndex& index, const ReidEmbedder& embedder, const torch::Tensor& held_out,
                           double target_fpr) {
    if (!held_out.defined() || held_out.size(0) == 0) throw DataError("threshold calibration needs held-out frames");
    auto best = index.nearest(embed_frames(embedder, held_out)).first.to(torch::kFloat64).contiguous();
    std::vector<double> sims(best.data_ptr<double>(), best.data_ptr<double>() + best.numel());
    index.threshold = quantile_threshold(std::move(sims), target_fpr);
    return index.threshold;
}

PrivacyFilter::PrivacyFilter(ReidEmbedder embedder, PrivacyIndex index)
    : embedder_(std::move(embedder)), index_(std::move(index)) {
    embedder_->eval();
}

PrivacyDecision PrivacyFilter::check_pixels(const torch::Tensor& pixels) const {
    if (pixels.dim() != 3 || pixels.size(0) != 3 || pixels.size(1) != kFrameSize || pixels.size(2) != kFrameSize) {
        throw ShapeError("privacy check expects a [3, 112, 112] frame");
    }
    return index_.decide(embed_frames(embedder_, pixels.unsqueeze(0))[0]);
}

PrivacyDecision PrivacyFilter::check(const PixelFrame& frame) const { return check_pixels(frame.data); }

PrivacyFilter::Accepted PrivacyFilter::filter_until_accept(const std::function<PixelFrame(int64_t)>& sampler,
                                                           int64_t max_attempts) const {
    if (max_attempts < 1) throw ParameterError("max_attempts must be at least 1");
    Accepted result;
    for (int64_t attempt = 0; attempt < max_attempts; ++attempt) {
        auto frame = sampler(attempt);
        auto decision = check(frame);
        decision.attempt = attempt;
        result.decisions.push_back(decision);
        if (decision.accepted) {
            result.frame = std::move(frame);
            result.attempts = attempt + 1;
            return result;
        }
    }
    throw PrivacyExhaustedError("privacy filter rejected all " + std::to_string(max_attempts) + " attempts",
                                std::move(result.decisions));
}

std::string PrivacyFilter::hash() const {
    ContentHasher h;
    h.update(module_hash(*embedder_)).update(index_.embeddings);
    for (const auto& s : index_.sources) h.update(s);
    h.update(std::to_string(index_.threshold));
    return h.hex();
}

std::string PrivacyFilter::save(const std::string& path) const {
    nlohmann::json meta{{"kind", "privacy-filter"},
                        {"embed_dim", embedder_->embed_dim},
                        {"threshold", index_.threshold},
                        {"sources", index_.sources},
                        {"filter_hash", hash()}};
    return save_checkpoint(path, *embedder_, meta, {{"embeddings", index_.embeddings}});
}

PrivacyFilter PrivacyFilter::load(const std::string& path) {
    auto meta = read_checkpoint_meta(path);
    if (meta.value("kind", "") != "privacy-filter") throw CheckpointError(path + " is not a privacy filter");
    ReidEmbedder embedder(meta.at("embed_dim").get<int64_t>());
    auto contents = load_checkpoint(path, *embedder);
    PrivacyIndex index;
    index.embeddings = contents.extras.at("embeddings");
    index.sources = meta.at("sources").get<std::vector<std::string>>();
    index.threshold = meta.at("threshold").get<double>();
    return PrivacyFilter(embedder, index);
}

}  // namespace echogen

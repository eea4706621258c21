// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/checkpoint.hpp"

#include <filesystem>

#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace {

std::string content_hash(const torch::nn::Module& module, const std::map<std::string, torch::Tensor>& extras,
                         const nlohmann::json& meta) {
    ContentHasher h;
    h.update(module_hash(module));
    for (const auto& [k, v] : extras) {
        h.update(k).update(v);
    }
    h.update(meta.dump());
    return h.hex();
}

}  // namespace

std::string module_hash(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> named;
    for (const auto& p : module.named_parameters(true)) named[p.key()] = p.value();
    for (const auto& b : module.named_buffers(true)) named["buffer:" + b.key()] = b.value();
    ContentHasher h;
    for (const auto& [k, v] : named) {
        h.update(k).update(v);
    }
    return h.hex();
}

std::string save_checkpoint(const std::string& path, const torch::nn::Module& module, nlohmann::json meta,
                            const std::map<std::string, torch::Tensor>& extras) {
    meta.erase("content_hash");
    meta["extra_keys"] = nlohmann::json::array();
    for (const auto& [k, v] : extras) meta["extra_keys"].push_back(k);
    const auto hash = content_hash(module, extras, meta);
    meta["content_hash"] = hash;

    torch::serialize::OutputArchive archive;
    torch::serialize::OutputArchive weights;
    module.save(weights);
    archive.write("weights", weights);
    for (const auto& [k, v] : extras) {
        archive.write("extra." + k, v, /*is_buffer=*/true);
    }
    archive.write("meta", c10::IValue(meta.dump()));
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::filesystem::create_directories(parent);
    }
    archive.save_to(path);
    return hash;
}

CheckpointContents load_checkpoint(const std::string& path, torch::nn::Module& module) {
    if (!std::filesystem::exists(path)) {
        throw CheckpointError("checkpoint not found: " + path);
    }
    CheckpointContents out;
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(path);
        torch::serialize::InputArchive weights;
        archive.read("weights", weights);
        module.load(weights);
        c10::IValue meta;
        archive.read("meta", meta);
        out.meta = nlohmann::json::parse(meta.toStringRef());
        for (const auto& k : out.meta.value("extra_keys", nlohmann::json::array())) {
            torch::Tensor t;
            archive.read("extra." + k.get<std::string>(), t, /*is_buffer=*/true);
            out.extras[k.get<std::string>()] = t;
        }
    } catch (const c10::Error& e) {
        throw CheckpointError("cannot read checkpoint " + path + ": " + e.what_without_backtrace());
    }
    auto meta = out.meta;
    const auto stored = meta.value("content_hash", std::string());
    meta.erase("content_hash");
    if (stored != content_hash(module, out.extras, meta)) {
        throw CheckpointError("content hash mismatch in " + path);
    }
    return out;
}

nlohmann::json read_checkpoint_meta(const std::string& path) {
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(path);
        c10::IValue meta;
        archive.read("meta", meta);
        return nlohmann::json::parse(meta.toStringRef());
    } catch (const c10::Error& e) {
        throw CheckpointError("cannot read checkpoint " + path + ": " + e.what_without_backtrace());
    }
}

nlohmann::json schedule_to_json(const diffusion::NoiseSchedule& schedule) {
    return {{"betas", schedule.betas},
            {"alpha_bars", schedule.alpha_bars},
            {"model_timesteps", schedule.model_timesteps},
            {"shape", diffusion::to_string(schedule.shape)},
            {"beta_start", schedule.beta_start},
            {"beta_end", schedule.beta_end},
            {"training_steps", schedule.training_steps},
            {"stride", schedule.stride}};
}

diffusion::NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    try {
        auto s = diffusion::schedule_from_betas(j.at("betas").get<std::vector<double>>());
        s.alpha_bars = j.at("alpha_bars").get<std::vector<double>>();
        s.model_timesteps = j.at("model_timesteps").get<std::vector<int64_t>>();
        s.shape = diffusion::parse_schedule_shape(j.at("shape").get<std::string>());
        s.beta_start = j.at("beta_start").get<double>();
        s.beta_end = j.at("beta_end").get<double>();
        s.training_steps = j.at("training_steps").get<int64_t>();
        s.stride = j.at("stride").get<int64_t>();
        if (s.alpha_bars.size() != s.betas.size() || s.model_timesteps.size() != s.betas.size()) {
            throw CheckpointError("inconsistent schedule block");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed schedule block: ") + e.what());
    }
}

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "echogen/diffusion.hpp"
#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"
#include "echogen/nn_blocks.hpp"
#include "echogen/training.hpp"

namespace echogen {

namespace F = torch::nn::functional;

std::string to_string(TrainingRegime regime) {
    switch (regime) {
        case TrainingRegime::real_only: return "REAL_ONLY";
        case TrainingRegime::synth_train_real_val: return "SYNTH_TRAIN_REAL_VAL";
        case TrainingRegime::synth_train_synth_val: return "SYNTH_TRAIN_SYNTH_VAL";
        case TrainingRegime::augmented: return "AUGMENTED";
    }
    return "?";
}

TrainingRegime parse_regime(const std::string& name) {
    for (auto r : {TrainingRegime::real_only, TrainingRegime::synth_train_real_val,
                   TrainingRegime::synth_train_synth_val, TrainingRegime::augmented}) {
        if (to_string(r) == name) return r;
    }
    throw ParameterError("unknown training regime '" + name + "'");
}

RegimeData resolve_regime(TrainingRegime regime, const RegimeSources& s) {
    auto need = [&](const VideoSet& set, const char* what) -> const VideoSet& {
        if (set.empty()) throw DataError(to_string(regime) + " needs a non-empty " + what + " source");
        return set;
    };
    switch (regime) {
        case TrainingRegime::real_only: return {need(s.real_train, "real train"), need(s.real_val, "real val")};
        case TrainingRegime::synth_train_real_val:
            return {need(s.synth_train, "synthetic train"), need(s.real_val, "real val")};
        case TrainingRegime::synth_train_synth_val:
            return {need(s.synth_train, "synthetic train"), need(s.synth_val, "synthetic val")};
        case TrainingRegime::augmented: {
            VideoSet train = need(s.real_train, "real train");
            train.append(need(s.synth_train, "synthetic train"));
            return {train, need(s.real_val, "real val")};
        }
    }
    throw ParameterError("unknown training regime");
}

nlohmann::json ClassifierConfig::to_json() const {
    return {{"classes", classes},     {"clip_length", clip_length},     {"width", width},
            {"steps", steps},         {"batch_size", batch_size},       {"learning_rate", learning_rate},
            {"weight_decay", weight_decay}, {"eval_every", eval_every},
            {"augment", augment}, {"max_shift", max_shift}};
}

namespace {

/// uint8 [.., H, W] or float [.., C, H, W] -> float gray [.., H, W] in [0, 1].
torch::Tensor to_gray(const torch::Tensor& x, int64_t gray_dims) {
    if (x.scalar_type() == torch::kUInt8) return x.to(torch::kFloat32).div(255.0);
    if (x.dim() == gray_dims + 1) return x.to(torch::kFloat32).mean(-3);
    return x.to(torch::kFloat32);
}

/// Spatial (1x3x3) then temporal (3x1x1) convolution with a residual path.
struct R21BlockImpl : torch::nn::Module {
    explicit R21BlockImpl(int64_t c) {
        spatial = register_module(
            "spatial", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, {1, 3, 3}).padding({0, 1, 1})));
        temporal = register_module(
            "temporal", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, {3, 1, 1}).padding({1, 0, 0})));
        norm1 = register_module("norm1", nn::group_norm(c));
        norm2 = register_module("norm2", nn::group_norm(c));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto h = F::silu(norm1(spatial(x)));
        h = norm2(temporal(h));
        return F::silu(x + h);
    }
    torch::nn::Conv3d spatial{nullptr}, temporal{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(R21Block);

torch::nn::Conv3d conv3(int64_t in, int64_t out, std::vector<int64_t> k, std::vector<int64_t> stride,
                        std::vector<int64_t> pad) {
    return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(pad));
}

torch::nn::Conv2d conv2(int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    auto params = m.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(state[i]);
}

/// Random flip, shift, gain/bias and pixel noise on a uint8 clip [L, H, W];
/// returns float [L, H, W] in roughly [0, 1].
torch::Tensor augment_clip(const torch::Tensor& clip, at::Generator& gen, int64_t max_shift) {
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * torch::rand({1}, gen).item<double>(); };
    auto x = clip.to(torch::kFloat32).div(255.0);
    if (uni(0.0, 1.0) < 0.5) x = x.flip(-1);
    if (max_shift > 0) {
        const int64_t h = x.size(-2), w = x.size(-1);
        auto padded = F::pad(x.unsqueeze(0), F::PadFuncOptions({max_shift, max_shift, max_shift, max_shift})
                                                 .mode(torch::kReplicate))
                          .squeeze(0);
        const auto dy = torch::randint(0, 2 * max_shift + 1, {1}, gen, torch::kLong).item<int64_t>();
        const auto dx = torch::randint(0, 2 * max_shift + 1, {1}, gen, torch::kLong).item<int64_t>();
        x = padded.slice(-2, dy, dy + h).slice(-1, dx, dx + w);
    }
    x = x * uni(0.8, 1.2) + uni(-0.1, 0.1);
    return x + 0.05 * torch::randn(x.sizes(), gen);
}

std::set<int64_t> classes_of(const VideoSet& set) { return {set.labels().begin(), set.labels().end()}; }

}  // namespace

VideoClassifierImpl::VideoClassifierImpl(int64_t classes, int64_t w) : feature_dim(3 * w) {
    stem = register_module("stem", torch::nn::Sequential(conv3(1, w, {3, 5, 5}, {2, 2, 2}, {1, 2, 2}),
                                                         nn::group_norm(w), torch::nn::SiLU()));
    body = register_module(
        "body", torch::nn::Sequential(R21Block(w), conv3(w, 2 * w, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}),
                                      nn::group_norm(2 * w), torch::nn::SiLU(), R21Block(2 * w),
                                      conv3(2 * w, 3 * w, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}), nn::group_norm(3 * w),
                                      torch::nn::SiLU(), R21Block(3 * w),
                                      torch::nn::AdaptiveAvgPool3d(torch::nn::AdaptiveAvgPool3dOptions(1)),
                                      torch::nn::Flatten()));
    head = register_module("head", torch::nn::Linear(feature_dim, classes));
}

torch::Tensor VideoClassifierImpl::features(const torch::Tensor& clips) {
    auto x = to_gray(clips, 4).unsqueeze(1) * 2.0 - 1.0;  // [B, 1, L, H, W]
    x = F::avg_pool3d(x, F::AvgPool3dFuncOptions({1, 2, 2}));
    return body->forward(stem->forward(x));
}

torch::Tensor VideoClassifierImpl::forward(const torch::Tensor& clips) { return head(features(clips)); }

ClassifierTrainingResult train_classifier(const RegimeData& data, const ClassifierConfig& config, uint64_t seed) {
    if (data.train.empty()) throw DataError("classifier training set is empty");
    if (classes_of(data.train).size() < 2) throw DataError("classifier training needs at least two classes");
    torch::manual_seed(seed);
    auto gen = diffusion::make_generator(seed);
    VideoClassifier model(config.classes, config.width);
    torch::optim::AdamW opt(model->parameters(),
                            torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));
    OptimConfig schedule{.steps = config.steps, .learning_rate = config.learning_rate, .warmup = 20};

    ClassifierTrainingResult result{model, {}, {}, 0, -1.0};
    std::vector<torch::Tensor> best;
    auto validate = [&](int64_t step) {
        model->eval();
        const double acc = data.val.empty() ? 0.0 : evaluate_classifier(model, data.val, config.clip_length).accuracy;
        model->train();
        result.val_accuracy.emplace_back(step, acc);
        if (acc > result.best_val_accuracy) {
            result.best_val_accuracy = acc;
            result.best_step = step;
            best = snapshot(*model);
        }
    };

    const int64_t n = data.train.size();
    model->train();
    for (int64_t step = 0; step < config.steps; ++step) {
        set_lr(opt, scheduled_lr(schedule, step));
        auto pick = torch::randint(0, n, {config.batch_size}, gen, torch::kLong);
        std::vector<torch::Tensor> clips;
        std::vector<int64_t> labels;
        for (int64_t b = 0; b < config.batch_size; ++b) {
            const auto i = pick[b].item<int64_t>();
            const auto& video = data.train.video(i);
            const int64_t span = video.frames() - config.clip_length;
            if (span < 0) throw DataError("training video shorter than one clip");
            const auto start = torch::randint(0, span + 1, {1}, gen, torch::kLong).item<int64_t>();
            auto clip = video.gray.slice(0, start, start + config.clip_length);
            clips.push_back(config.augment ? augment_clip(clip, gen, config.max_shift) : clip.to(torch::kFloat32).div(255.0));
            labels.push_back(data.train.label(i));
        }
        auto loss = F::cross_entropy(model->forward(torch::stack(clips)), torch::tensor(labels, torch::kLong));
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw TrainingError("classifier training diverged at step " + std::to_string(step));
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.loss_trace.push_back(value);
        if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) validate(step + 1);
    }
    if (!best.empty()) restore(*model, best);
    model->eval();
    return result;
}

std::vector<double> video_scores(const VideoClassifier& model, const VideoSet& videos, int64_t clip_length) {
    torch::NoGradGuard no_grad;
    std::vector<double> scores;
    for (int64_t i = 0; i < videos.size(); ++i) {
        auto clips = torch::stack(metrics::cut_clips(videos.video(i).gray, clip_length));
        auto prob = torch::softmax(model.ptr()->forward(clips), 1).select(1, 1).to(torch::kFloat64);
        const double votes = (prob >= 0.5).sum().item<double>();
        const double mean = prob.mean().item<double>();
        scores.push_back((votes + mean) / static_cast<double>(prob.size(0) + 1));
    }
    return scores;
}

metrics::Classification evaluate_classifier(const VideoClassifier& model, const VideoSet& test, int64_t clip_length) {
    auto scores = video_scores(model, test, clip_length);
    std::vector<int> labels(test.labels().begin(), test.labels().end());
    auto present = classes_of(test);
    if (present.size() < 2) {
        // AUROC is undefined; accuracy and F1 are still reported.
        metrics::Classification c;
        double correct = 0;
        for (size_t i = 0; i < scores.size(); ++i) correct += (scores[i] >= 0.5 ? 1 : 0) == labels[i];
        c.accuracy = scores.empty() ? 0.0 : correct / static_cast<double>(scores.size());
        c.auroc = std::nan("");
        return c;
    }
    return metrics::classification_metrics(scores, labels);
}

metrics::VideoFeatureExtractor classifier_extractor(const VideoClassifier& model, const std::string& id) {
    return {id, [model](const torch::Tensor& clips) {
                torch::NoGradGuard no_grad;
                std::vector<torch::Tensor> out;
                for (int64_t i = 0; i < clips.size(0); i += 32) {
                    out.push_back(model.ptr()->features(clips.slice(0, i, i + 32)));
                }
                return torch::cat(out);
            }};
}

FrameClassifierImpl::FrameClassifierImpl(int64_t classes, int64_t w) : feature_dim(4 * w) {
    body = register_module(
        "body", torch::nn::Sequential(conv2(1, w, 1), nn::group_norm(w), torch::nn::SiLU(), conv2(w, w, 2),
                                      nn::group_norm(w), torch::nn::SiLU(), conv2(w, 2 * w, 2), nn::group_norm(2 * w),
                                      torch::nn::SiLU(), conv2(2 * w, 4 * w, 2), nn::group_norm(4 * w),
                                      torch::nn::SiLU(),
                                      torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions(1)),
                                      torch::nn::Flatten()));
    head = register_module("head", torch::nn::Linear(feature_dim, classes));
}

torch::Tensor FrameClassifierImpl::features(const torch::Tensor& pixels) {
    auto x = to_gray(pixels, 3).unsqueeze(1) * 2.0 - 1.0;
    return body->forward(F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)));
}

torch::Tensor FrameClassifierImpl::forward(const torch::Tensor& pixels) { return head(features(pixels)); }

torch::Tensor FrameClassifierImpl::probabilities(const torch::Tensor& pixels) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < pixels.size(0); i += 128) out.push_back(torch::softmax(forward(pixels.slice(0, i, i + 128)), 1));
    return torch::cat(out);
}

torch::Tensor FrameClassifierImpl::embed(const torch::Tensor& pixels) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < pixels.size(0); i += 128) out.push_back(features(pixels.slice(0, i, i + 128)));
    return torch::cat(out);
}

FrameClassifier train_frame_classifier(const torch::Tensor& frames, const std::vector<int64_t>& labels,
                                       const FrameClassifierConfig& config, uint64_t seed) {
    if (!frames.defined() || frames.size(0) == 0) throw DataError("frame classifier training set is empty");
    if (std::set<int64_t>(labels.begin(), labels.end()).size() < 2) {
        throw DataError("frame classifier training needs at least two classes");
    }
    torch::manual_seed(seed);
    auto gen = diffusion::make_generator(seed);
    FrameClassifier model(config.classes, config.width);
    torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(config.learning_rate));
    OptimConfig schedule{.steps = config.steps, .learning_rate = config.learning_rate, .warmup = 20};
    auto y = torch::tensor(labels, torch::kLong);
    model->train();
    for (int64_t step = 0; step < config.steps; ++step) {
        set_lr(opt, scheduled_lr(schedule, step));
        auto idx = torch::randint(0, frames.size(0), {config.batch_size}, gen, torch::kLong);
        auto loss = F::cross_entropy(model->forward(frames.index_select(0, idx)), y.index_select(0, idx));
        if (!std::isfinite(loss.item<double>())) throw TrainingError("frame classifier training diverged");
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    model->eval();
    return model;
}

FrameClassifier train_toy_frame_oracle(const ToyGeneratorConfig& config, int64_t videos_per_class, uint64_t seed,
                                       const FrameClassifierConfig& fc) {
    ToyGeneratorConfig fresh = config;
    fresh.frames = 4;
    fresh.seed = derive_seed(config.seed ^ seed, 0x6f7261636c65ULL);
    auto ds = generate_toy_dataset(fresh, videos_per_class);
    std::vector<torch::Tensor> frames;
    std::vector<int64_t> labels;
    for (const auto& v : ds.videos) {
        frames.push_back(v.video.gray);
        labels.insert(labels.end(), static_cast<size_t>(v.video.frames()), v.truth.label);
    }
    auto cfg = fc;
    cfg.classes = ds.labels.size();
    return train_frame_classifier(torch::cat(frames), labels, cfg, seed);
}

double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<StudyRow> StudyReport::medians() const {
    std::map<std::pair<std::string, double>, std::vector<const StudyRow*>> groups;
    std::vector<std::pair<std::string, double>> order;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.regime, r.guidance);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<StudyRow> out;
    for (const auto& key : order) {
        std::vector<double> acc, f1, auc, size;
        for (const auto* r : groups[key]) {
            acc.push_back(r->metrics.accuracy);
            f1.push_back(r->metrics.f1);
            auc.push_back(r->metrics.auroc);
            size.push_back(static_cast<double>(r->train_size));
        }
        StudyRow m;
        m.regime = key.first;
        m.guidance = key.second;
        m.train_size = static_cast<int64_t>(median(size));
        m.metrics = {median(acc), median(f1), median(auc)};
        out.push_back(m);
    }
    return out;
}

nlohmann::json StudyReport::to_json() const {
    auto row_json = [](const StudyRow& r) {
        return nlohmann::json{{"regime", r.regime},       {"seed", r.seed},         {"guidance", r.guidance},
                              {"train_size", r.train_size}, {"acc", r.metrics.accuracy}, {"f1", r.metrics.f1},
                              {"auroc", r.metrics.auroc}};
    };
    nlohmann::json j{{"study", study}, {"rows", nlohmann::json::array()}, {"medians", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back(row_json(r));
    for (const auto& r : medians()) j["medians"].push_back(row_json(r));
    return j;
}

std::string StudyReport::to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "study: " << study << "\n";
    os << std::left << std::setw(24) << "regime" << std::setw(8) << "w" << std::setw(8) << "seed" << std::setw(8)
       << "n_train" << std::setw(8) << "ACC" << std::setw(8) << "F1" << "AUC-ROC\n";
    auto line = [&](const StudyRow& r, const std::string& seed) {
        os << std::setw(24) << r.regime << std::setw(8) << r.guidance << std::setw(8) << seed << std::setw(8)
           << r.train_size << std::setw(8) << r.metrics.accuracy << std::setw(8) << r.metrics.f1 << r.metrics.auroc
           << "\n";
    };
    for (const auto& r : rows) line(r, std::to_string(r.seed));
    for (const auto& r : medians()) line(r, "median");
    return os.str();
}

}  // namespace echogen

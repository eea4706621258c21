// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <torch/nn.h>

#include "echogen/data.hpp"
#include "echogen/metrics.hpp"
#include "json.hpp"

namespace echogen {

enum class TrainingRegime { real_only, synth_train_real_val, synth_train_synth_val, augmented };

std::string to_string(TrainingRegime regime);
TrainingRegime parse_regime(const std::string& name);

/// Labelled video sources a regime draws from. The test split is never part
/// of the sources.
struct RegimeSources {
    VideoSet real_train;
    VideoSet real_val;
    VideoSet synth_train;  // labels are the generation conditions
    VideoSet synth_val;
};

struct RegimeData {
    VideoSet train;
    VideoSet val;
};

/// Train/validation sets for a regime. AUGMENTED concatenates real and
/// synthetic training videos without deduplication. Throws DataError when a
/// required source is empty.
RegimeData resolve_regime(TrainingRegime regime, const RegimeSources& sources);

struct ClassifierConfig {
    int64_t classes = 2;
    int64_t clip_length = 16;
    int64_t width = 16;
    int64_t steps = 300;
    int64_t batch_size = 16;
    double learning_rate = 2e-3;
    double weight_decay = 1e-4;
    int64_t eval_every = 50;
    bool augment = true;    // random flip, shift, gain and noise on training clips
    int64_t max_shift = 8;  // pixels

    nlohmann::json to_json() const;
};

/**
 * Residual (2+1)D convolutional video classifier on 16-frame clips
 * downsampled to 56x56. features() returns the penultimate layer.
 */
struct VideoClassifierImpl : torch::nn::Module {
    VideoClassifierImpl(int64_t classes, int64_t width);
    /// clips float [B, L, C, 112, 112] (or uint8 [B, L, 112, 112]) -> features [B, D].
    torch::Tensor features(const torch::Tensor& clips);
    torch::Tensor forward(const torch::Tensor& clips);

    torch::nn::Sequential stem{nullptr}, body{nullptr};
    torch::nn::Linear head{nullptr};
    int64_t feature_dim;
};
TORCH_MODULE(VideoClassifier);

struct ClassifierTrainingResult {
    VideoClassifier model;
    std::vector<double> loss_trace;
    std::vector<std::pair<int64_t, double>> val_accuracy;  // (step, accuracy)
    int64_t best_step = 0;
    double best_val_accuracy = 0.0;
};

/**
 * Trains on random clips of the training videos and keeps the parameters with
 * the best validation accuracy. Throws DataError for an empty training set or
 * fewer than two classes.
 */
ClassifierTrainingResult train_classifier(const RegimeData& data, const ClassifierConfig& config, uint64_t seed);

/// Per-video positive-class scores: (positive clip votes + mean clip
/// probability) / (clips + 1), i.e. the clip majority vote with ties broken by
/// the mean probability.
std::vector<double> video_scores(const VideoClassifier& model, const VideoSet& videos, int64_t clip_length = 16);

/// Accuracy, F1 and AUROC on a labelled (binary) video set.
metrics::Classification evaluate_classifier(const VideoClassifier& model, const VideoSet& test,
                                            int64_t clip_length = 16);

/// Video feature extractor built on the classifier's penultimate layer.
metrics::VideoFeatureExtractor classifier_extractor(const VideoClassifier& model, const std::string& id);

// ---------------------------------------------------------------------------
// Frame classifier (FID/IS features and conditional-fidelity oracle)

struct FrameClassifierImpl : torch::nn::Module {
    FrameClassifierImpl(int64_t classes, int64_t width);
    /// pixels float [N, C, 112, 112] or uint8 [N, 112, 112] -> [N, D].
    torch::Tensor features(const torch::Tensor& pixels);
    torch::Tensor forward(const torch::Tensor& pixels);
    /// Softmax class probabilities in chunks, without gradients.
    torch::Tensor probabilities(const torch::Tensor& pixels);
    torch::Tensor embed(const torch::Tensor& pixels);

    torch::nn::Sequential body{nullptr};
    torch::nn::Linear head{nullptr};
    int64_t feature_dim;
};
TORCH_MODULE(FrameClassifier);

struct FrameClassifierConfig {
    int64_t classes = 2;
    int64_t width = 16;
    int64_t steps = 400;
    int64_t batch_size = 32;
    double learning_rate = 2e-3;
};

/// Trains on uint8 gray frames [N, 112, 112] with labels [N].
FrameClassifier train_frame_classifier(const torch::Tensor& frames, const std::vector<int64_t>& labels,
                                       const FrameClassifierConfig& config, uint64_t seed);

/**
 * Frame classifier trained on a fresh procedural corpus (a few frames from
 * each of many new videos, generator seed derived from `seed`), disjoint from
 * any dataset drawn from `config`. Used as the conditional-fidelity oracle and
 * as the FID/IS feature extractor.
 */
FrameClassifier train_toy_frame_oracle(const ToyGeneratorConfig& config, int64_t videos_per_class, uint64_t seed,
                                       const FrameClassifierConfig& fc = {});

// ---------------------------------------------------------------------------
// Study reports

struct StudyRow {
    std::string regime;
    uint64_t seed = 0;
    double guidance = 0.0;
    int64_t train_size = 0;
    metrics::Classification metrics;
};

struct StudyReport {
    std::string study;
    std::vector<StudyRow> rows;

    /// Median accuracy / F1 / AUROC per regime (and guidance).
    std::vector<StudyRow> medians() const;
    nlohmann::json to_json() const;
    /// Plain-text table with ACC, F1 and AUC-ROC columns.
    std::string to_table() const;
};

double median(std::vector<double> values);

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <torch/types.h>

#include "json.hpp"

namespace echogen::metrics {

inline constexpr int64_t kFvdClipLength = 16;
inline constexpr double kCovarianceEpsilon = 1e-6;

/// N x D features from one extractor (clip_length > 0 for video features).
struct FeatureSet {
    Eigen::MatrixXd features;
    std::string extractor;
    int64_t clip_length = 0;

    static FeatureSet from_tensor(const torch::Tensor& features, std::string extractor, int64_t clip_length = 0);
};

/// Symmetric PSD square root via eigendecomposition (negative eigenvalues clamped).
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

/// (A B)^{1/2} for SPD A and B, computed as sqrt(A) (sqrt(A) B sqrt(A))^{1/2} sqrt(A)^{-1}.
Eigen::MatrixXd sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// ||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2}) with kCovarianceEpsilon * I
/// added to both covariances. Throws DataError / ParameterError on invalid input.
double frechet_distance(const FeatureSet& real, const FeatureSet& fake);

/// Non-overlapping clips of `length` frames starting at frame 0 (a trailing
/// remainder is dropped). Throws DataError for videos shorter than `length`.
std::vector<torch::Tensor> cut_clips(const torch::Tensor& video, int64_t length = kFvdClipLength);

/// Maps clips [K, L, ...] to features [K, D].
struct VideoFeatureExtractor {
    std::string id;
    std::function<torch::Tensor(const torch::Tensor& clips)> extract;
};

FeatureSet video_features(const std::vector<torch::Tensor>& videos, const VideoFeatureExtractor& extractor,
                          int64_t clip_length = kFvdClipLength);

/// Frechet distance over 16-frame clip features of two video sets.
double fvd16(const std::vector<torch::Tensor>& real_videos, const std::vector<torch::Tensor>& fake_videos,
             const VideoFeatureExtractor& extractor);

struct InceptionScore {
    double mean = 0.0;
    double std = 0.0;
};

/// exp(mean KL(p(y|x) || p(y))) over `splits` contiguous chunks of rows.
InceptionScore inception_score(const Eigen::MatrixXd& probs, int64_t splits = 1);

struct Classification {
    double accuracy = 0.0;
    double f1 = 0.0;
    double auroc = 0.5;
};

/// Area under the ROC curve by the Mann-Whitney rank statistic with midranks.
/// Throws DataError unless both classes are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Accuracy and F1 (positive class 1) at threshold 0.5, plus AUROC.
Classification classification_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

/// One experiment's metrics and metadata.
struct MetricsReport {
    std::optional<double> fid, fvd16, is_mean, is_std, accuracy, f1, auroc;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<std::string> extractors;
    std::string warning;

    nlohmann::json to_json() const;
    void write(const std::string& path) const;
};

/// Notice attached to reports whose features come from toy-trained extractors.
extern const char* const kDeskExtractorWarning;

}  // namespace echogen::metrics

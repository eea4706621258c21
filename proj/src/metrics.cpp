// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <torch/torch.h>

#include "echogen/errors.hpp"

namespace echogen::metrics {

const char* const kDeskExtractorWarning =
    "features come from extractors trained on the toy dataset; absolute values are not comparable to published "
    "FID/FVD/IS numbers";

FeatureSet FeatureSet::from_tensor(const torch::Tensor& features, std::string extractor, int64_t clip_length) {
    if (features.dim() != 2) throw ShapeError("features must be [N, D]");
    auto f = features.to(torch::kFloat64).contiguous();
    FeatureSet set;
    set.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        f.data_ptr<double>(), f.size(0), f.size(1));
    set.extractor = std::move(extractor);
    set.clip_length = clip_length;
    return set;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
    Eigen::VectorXd lam = eig.eigenvalues();
    if (lam.minCoeff() <= 0.0) throw ParameterError("sqrt_product needs a positive definite first argument");
    const auto& v = eig.eigenvectors();
    Eigen::MatrixXd root = v * lam.cwiseSqrt().asDiagonal() * v.transpose();
    Eigen::MatrixXd inv_root = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
    return root * sqrt_psd(root * b * root) * inv_root;
}

namespace {

void check_features(const FeatureSet& s, const char* which) {
    if (s.features.rows() < 2) throw DataError(std::string(which) + " feature set needs at least 2 rows");
    if (!s.features.allFinite()) throw DataError(std::string(which) + " feature set has non-finite values");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
    Eigen::MatrixXd centered = x.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

double frechet_distance(const FeatureSet& real, const FeatureSet& fake) {
    if (real.extractor != fake.extractor) {
        throw ParameterError("feature extractor mismatch: '" + real.extractor + "' vs '" + fake.extractor + "'");
    }
    if (real.features.cols() != fake.features.cols()) throw ShapeError("feature dimensions differ");
    check_features(real, "real");
    check_features(fake, "fake");
    const auto d = real.features.cols();
    Eigen::RowVectorXd mu_r = real.features.colwise().mean();
    Eigen::RowVectorXd mu_f = fake.features.colwise().mean();
    Eigen::MatrixXd eps = kCovarianceEpsilon * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd s_r = covariance(real.features, mu_r) + eps;
    Eigen::MatrixXd s_f = covariance(fake.features, mu_f) + eps;

    // Tr (S_r S_f)^{1/2} equals Tr (A S_f A)^{1/2} with A = S_r^{1/2}.
    Eigen::MatrixXd a = sqrt_psd(s_r);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a * s_f * a, Eigen::EigenvaluesOnly);
    const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (mu_r - mu_f).squaredNorm() + s_r.trace() + s_f.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, value);
}

std::vector<torch::Tensor> cut_clips(const torch::Tensor& video, int64_t length) {
    if (length < 1) throw ParameterError("clip length must be positive");
    if (!video.defined() || video.size(0) < length) {
        throw DataError("video shorter than " + std::to_string(length) + " frames");
    }
    std::vector<torch::Tensor> clips;
    for (int64_t start = 0; start + length <= video.size(0); start += length) {
        clips.push_back(video.slice(0, start, start + length));
    }
    return clips;
}

FeatureSet video_features(const std::vector<torch::Tensor>& videos, const VideoFeatureExtractor& extractor,
                          int64_t clip_length) {
    std::vector<torch::Tensor> feats;
    for (const auto& v : videos) {
        auto clips = cut_clips(v, clip_length);
        feats.push_back(extractor.extract(torch::stack(clips)));
    }
    if (feats.empty()) throw DataError("no videos to extract features from");
    return FeatureSet::from_tensor(torch::cat(feats), extractor.id, clip_length);
}

double fvd16(const std::vector<torch::Tensor>& real_videos, const std::vector<torch::Tensor>& fake_videos,
             const VideoFeatureExtractor& extractor) {
    return frechet_distance(video_features(real_videos, extractor), video_features(fake_videos, extractor));
}

InceptionScore inception_score(const Eigen::MatrixXd& probs, int64_t splits) {
    const auto n = probs.rows();
    if (n == 0) throw DataError("inception score needs at least one row");
    if (splits < 1 || splits > n) throw ParameterError("splits must lie in [1, N]");
    if ((probs.array() < 0.0).any() || !probs.allFinite()) throw DataError("probability rows must be nonnegative");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) throw DataError("probability rows must sum to 1");
    }
    std::vector<double> scores;
    for (int64_t s = 0; s < splits; ++s) {
        const auto begin = s * n / splits, end = (s + 1) * n / splits;
        auto part = probs.middleRows(begin, end - begin);
        Eigen::RowVectorXd marginal = part.colwise().mean();
        double kl = 0.0;
        for (Eigen::Index i = 0; i < part.rows(); ++i) {
            for (Eigen::Index k = 0; k < part.cols(); ++k) {
                const double p = part(i, k);
                if (p > 0.0) kl += p * (std::log(p) - std::log(marginal(k)));
            }
        }
        scores.push_back(std::exp(kl / static_cast<double>(part.rows())));
    }
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    return {std::max(1.0, mean), std::sqrt(var / static_cast<double>(scores.size()))};
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("one label per score");
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0, rank_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] == 1) {
            pos += 1.0;
            rank_sum += rank[i];
        } else if (labels[i] != 0) {
            throw DataError("labels must be binary");
        }
    }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) throw DataError("AUROC is undefined unless both classes are present");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

Classification classification_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw DataError("no scores to evaluate");
    Classification c;
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= 0.5 ? 1 : 0;
        correct += pred == labels[i];
        tp += pred == 1 && labels[i] == 1;
        fp += pred == 1 && labels[i] == 0;
        fn += pred == 0 && labels[i] == 1;
    }
    c.accuracy = correct / static_cast<double>(scores.size());
    c.f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    c.auroc = auroc(scores, labels);
    return c;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("fid", fid);
    put("fvd16", fvd16);
    put("is_mean", is_mean);
    put("is_std", is_std);
    put("acc", accuracy);
    put("f1", f1);
    put("auroc", auroc);
    j["metadata"] = metadata;
    j["extractors"] = extractors;
    if (!warning.empty()) j["warning"] = warning;
    return j;
}

void MetricsReport::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << to_json().dump(2) << '\n';
}

}  // namespace echogen::metrics

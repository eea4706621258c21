// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/metrics.hpp"

using namespace echogen;
using namespace echogen::metrics;

namespace {

FeatureSet gaussian_set(int64_t n, int64_t d, double mean, double sd, uint64_t seed, const std::string& id = "x") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(mean, sd);
    FeatureSet s{Eigen::MatrixXd(n, d), id, 0};
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) s.features(i, j) = dist(rng);
    return s;
}

Eigen::MatrixXd random_spd(int64_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist;
    Eigen::MatrixXd a(d, d);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < d; ++j) a(i, j) = dist(rng);
    return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0, pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    return wins / pairs;
}

}  // namespace

TEST(Frechet, IdenticalSetsAreZero) {
    auto a = gaussian_set(200, 5, 0.0, 1.0, 1);
    EXPECT_LT(std::abs(frechet_distance(a, a)), 1e-6);
}

TEST(Frechet, OneDimensionalGaussianClosedForm) {
    auto a = gaussian_set(100000, 1, 0.0, 1.0, 2);
    auto b = gaussian_set(100000, 1, 3.0, 1.0, 3);
    EXPECT_NEAR(frechet_distance(a, b), 9.0, 0.2);
}

TEST(Frechet, OneDimensionalUnequalVariance) {
    // (mu1 - mu2)^2 + (s1 - s2)^2 = 1 + 1
    auto a = gaussian_set(100000, 1, 0.0, 1.0, 4);
    auto b = gaussian_set(100000, 1, 1.0, 2.0, 5);
    EXPECT_NEAR(frechet_distance(a, b), 2.0, 0.1);
}

TEST(Frechet, Symmetric) {
    auto a = gaussian_set(300, 6, 0.0, 1.0, 6);
    auto b = gaussian_set(250, 6, 0.5, 1.5, 7);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-8);
}

TEST(Frechet, Errors) {
    auto a = gaussian_set(10, 3, 0.0, 1.0, 8, "a");
    auto b = gaussian_set(10, 3, 0.0, 1.0, 9, "b");
    EXPECT_THROW(frechet_distance(a, b), ParameterError);
    auto c = gaussian_set(10, 4, 0.0, 1.0, 9, "a");
    EXPECT_THROW(frechet_distance(a, c), ShapeError);
    auto one = gaussian_set(1, 3, 0.0, 1.0, 10, "a");
    EXPECT_THROW(frechet_distance(a, one), DataError);
    auto bad = a;
    bad.features(0, 0) = std::nan("");
    EXPECT_THROW(frechet_distance(bad, a), DataError);
}

TEST(MatrixSqrt, ReconstructsProductOnRandomSpdPairs) {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 100; ++k) {
        const int64_t d = 2 + k % 9;
        auto a = random_spd(d, rng), b = random_spd(d, rng);
        auto r = sqrt_product(a, b);
        const Eigen::MatrixXd ab = a * b;
        EXPECT_LT((r * r - ab).norm() / ab.norm(), 1e-6) << "pair " << k;
    }
}

TEST(MatrixSqrt, PsdRootSquares) {
    std::mt19937_64 rng(12);
    auto a = random_spd(6, rng);
    auto r = sqrt_psd(a);
    EXPECT_LT((r * r - a).norm() / a.norm(), 1e-10);
    EXPECT_LT((r - r.transpose()).norm(), 1e-10);
}

TEST(Fvd, IdenticalSetsAreZero) {
    VideoFeatureExtractor ex{"mean", [](const torch::Tensor& clips) {
                                 return clips.to(torch::kFloat64).flatten(2).mean(2);
                             }};
    std::vector<torch::Tensor> videos;
    for (int i = 0; i < 6; ++i) videos.push_back(torch::rand({32, 8, 8}, torch::kFloat64));
    EXPECT_LT(std::abs(fvd16(videos, videos, ex)), 1e-6);
}

TEST(Fvd, SingleClipCollapsesToFid) {
    VideoFeatureExtractor ex{"mean", [](const torch::Tensor& clips) {
                                 return clips.to(torch::kFloat64).flatten(2).mean(2);
                             }};
    torch::manual_seed(13);
    std::vector<torch::Tensor> real, fake;
    for (int i = 0; i < 20; ++i) real.push_back(torch::rand({16, 4, 4}, torch::kFloat64));
    for (int i = 0; i < 20; ++i) fake.push_back(torch::rand({16, 4, 4}, torch::kFloat64) * 0.5 + 0.2);
    std::vector<torch::Tensor> rf, ff;
    for (auto& v : real) rf.push_back(ex.extract(v.unsqueeze(0)));
    for (auto& v : fake) ff.push_back(ex.extract(v.unsqueeze(0)));
    auto fid = frechet_distance(FeatureSet::from_tensor(torch::cat(rf), "mean", 16),
                                FeatureSet::from_tensor(torch::cat(ff), "mean", 16));
    EXPECT_NEAR(fvd16(real, fake, ex), fid, 1e-10);
}

TEST(Fvd, ClipCutting) {
    auto v = torch::arange(40).view({40, 1});
    auto clips = cut_clips(v, 16);
    ASSERT_EQ(clips.size(), 2u);
    EXPECT_EQ(clips[0][0].item<int64_t>(), 0);
    EXPECT_EQ(clips[1][0].item<int64_t>(), 16);
    EXPECT_THROW(cut_clips(torch::zeros({15, 1}), 16), DataError);
}

TEST(InceptionScore, UniformRowsGiveOne) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(50, 4, 0.25);
    EXPECT_NEAR(inception_score(p).mean, 1.0, 1e-6);
}

TEST(InceptionScore, OneHotUniformCoverageGivesK) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(40, 4);
    for (int i = 0; i < 40; ++i) p(i, i % 4) = 1.0;
    EXPECT_NEAR(inception_score(p).mean, 4.0, 1e-6);
}

TEST(InceptionScore, PermutationInvariantAndAtLeastOne) {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd p(30, 3);
        for (int i = 0; i < 30; ++i) {
            for (int j = 0; j < 3; ++j) p(i, j) = u(rng);
            p.row(i) /= p.row(i).sum();
        }
        const double is = inception_score(p).mean;
        EXPECT_GE(is, 1.0 - 1e-12);
        std::vector<int> order(30);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Eigen::MatrixXd q(30, 3);
        for (int i = 0; i < 30; ++i) q.row(i) = p.row(order[i]);
        EXPECT_NEAR(inception_score(q).mean, is, 1e-12);
    }
}

TEST(InceptionScore, InvalidRows) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(4, 2, 0.4);
    EXPECT_THROW(inception_score(p), DataError);
    p = Eigen::MatrixXd::Constant(4, 2, 0.5);
    p(0, 0) = -0.5;
    p(0, 1) = 1.5;
    EXPECT_THROW(inception_score(p), DataError);
    EXPECT_THROW(inception_score(Eigen::MatrixXd::Constant(4, 2, 0.5), 5), ParameterError);
}

TEST(Classification, KnownAuroc) {
    EXPECT_DOUBLE_EQ(auroc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}), 0.75);
}

TEST(Classification, PerfectSeparation) {
    auto c = classification_metrics({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    EXPECT_DOUBLE_EQ(c.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(c.f1, 1.0);
    EXPECT_DOUBLE_EQ(c.auroc, 1.0);
}

TEST(Classification, ConstantScoresTieToHalf) {
    EXPECT_DOUBLE_EQ(auroc({0.3, 0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0, 0}), 0.5);
}

TEST(Classification, SingleClassAurocIsError) {
    EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), DataError);
}

TEST(Classification, AurocMatchesPairwiseOracleUpTo50) {
    std::mt19937_64 rng(15);
    for (int n = 2; n <= 50; ++n) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> s(n);
            std::vector<int> y(n);
            // Coarse scores so ties occur often.
            for (int i = 0; i < n; ++i) s[i] = static_cast<double>(rng() % 7) / 7.0;
            for (int i = 0; i < n; ++i) y[i] = static_cast<int>(rng() % 2);
            y[0] = 1;
            y[1] = 0;
            EXPECT_NEAR(auroc(s, y), pairwise_auroc(s, y), 1e-12) << "n=" << n;
        }
    }
}

TEST(Report, SerializesFieldsAndWarning) {
    MetricsReport r;
    r.fid = 1.5;
    r.auroc = 0.7;
    r.extractors = {"frame-oracle"};
    r.warning = kDeskExtractorWarning;
    auto j = r.to_json();
    EXPECT_DOUBLE_EQ(j["fid"].get<double>(), 1.5);
    EXPECT_EQ(j["extractors"][0], "frame-oracle");
    EXPECT_FALSE(j["warning"].get<std::string>().empty());
}

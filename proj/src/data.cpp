// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#include <torch/torch.h>

#include "echogen/diffusion.hpp"
#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace fs = std::filesystem;

namespace echogen {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

cv::Mat to_gray(const cv::Mat& in) {
    cv::Mat gray;
    if (in.channels() == 1) {
        gray = in;
    } else if (in.channels() == 4) {
        cv::cvtColor(in, gray, cv::COLOR_BGRA2GRAY);
    } else {
        cv::cvtColor(in, gray, cv::COLOR_BGR2GRAY);
    }
    if (gray.depth() != CV_8U) {
        cv::Mat tmp;
        gray.convertTo(tmp, CV_8U, gray.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
        gray = tmp;
    }
    return gray;
}

torch::Tensor mat_to_tensor(const cv::Mat& gray) {
    cv::Mat c = gray.isContinuous() ? gray : gray.clone();
    return torch::from_blob(c.data, {c.rows, c.cols}, torch::kUInt8).clone();
}

cv::Mat tensor_to_mat(const torch::Tensor& frame) {
    auto t = frame.contiguous();
    cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1);
    std::memcpy(m.data, t.data_ptr<uint8_t>(), static_cast<size_t>(t.numel()));
    return m;
}

torch::Tensor resize_frame(const torch::Tensor& frame, int64_t size) {
    if (frame.size(0) == size && frame.size(1) == size) {
        return frame;
    }
    cv::Mat src = tensor_to_mat(frame), dst;
    const bool shrink = frame.size(0) > size || frame.size(1) > size;
    cv::resize(src, dst, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0,
               shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
    return mat_to_tensor(dst);
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
    static const std::set<std::string> exts{".png", ".bmp", ".pgm", ".ppm", ".tif", ".tiff", ".jpg", ".jpeg"};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && exts.count(ext)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

// ---------------------------------------------------------------------------

void PixelFrame::validate() const {
    if (!data.defined() || data.dim() != 3 || data.size(0) != 3 || data.size(1) != kFrameSize ||
        data.size(2) != kFrameSize) {
        throw ShapeError("pixel frame must be [3, 112, 112]");
    }
    if (data.min().item<double>() < 0.0 || data.max().item<double>() > 1.0) {
        throw DataError("pixel frame values must lie in [0, 1]");
    }
}

PixelFrame Video::frame(int64_t index) const {
    return {gray[index].to(torch::kFloat32).div(255.0).unsqueeze(0).expand({3, gray.size(1), gray.size(2)})};
}

torch::Tensor Video::pixels() const {
    return gray_float().expand({gray.size(0), 3, gray.size(1), gray.size(2)});
}

torch::Tensor Video::gray_float() const {
    return gray.to(torch::kFloat32).div(255.0).unsqueeze(1);
}

Video Video::from_pixels(const torch::Tensor& frames, int64_t fps) {
    if (frames.dim() != 4) {
        throw ShapeError("expected frames [F, C, H, W]");
    }
    auto g = frames.to(torch::kFloat32).mean(1).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
    return {g.contiguous(), fps};
}

// ---------------------------------------------------------------------------

void DatasetManifest::validate(const LabelSet& labels) const {
    static const std::set<std::string> splits{"train", "val", "test"};
    std::map<std::string, std::string> seen;
    for (const auto& r : rows) {
        if (!splits.count(r.split)) {
            throw DataError("manifest row '" + r.path + "' has unknown split '" + r.split + "'");
        }
        labels.label(r.label);
        auto [it, inserted] = seen.emplace(r.path, r.split);
        if (!inserted) {
            throw DataError("video '" + r.path + "' appears more than once (splits " + it->second + ", " + r.split + ")");
        }
    }
}

void DatasetManifest::write(const std::string& file) const {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write manifest " + file);
    out << "path,label,split,fps,frames\n";
    for (const auto& r : rows) {
        out << r.path << ',' << r.label << ',' << r.split << ',' << r.fps << ',' << r.frames << '\n';
    }
}

DatasetManifest DatasetManifest::read(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read manifest " + file);
    std::string line;
    std::getline(in, line);
    if (trim(line) != "path,label,split,fps,frames") {
        throw DataError("manifest " + file + " has an unexpected header: " + line);
    }
    DatasetManifest m;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto f = split_on(line, ',');
        if (f.size() != 5) throw DataError("malformed manifest row: " + line);
        m.rows.push_back({f[0], f[1], f[2], std::stoll(f[3]), std::stoll(f[4])});
    }
    return m;
}

DatasetView load_split(const DatasetManifest& manifest, const std::string& split) {
    if (split != "train" && split != "val" && split != "test") {
        throw ParameterError("unknown split '" + split + "'");
    }
    DatasetView view{split, {}};
    for (const auto& r : manifest.rows) {
        if (r.split == split) view.rows.push_back(r);
    }
    return view;
}

VideoSet::VideoSet(std::vector<Video> videos, std::vector<int64_t> labels, std::vector<std::string> ids)
    : reads_(std::make_shared<std::atomic<int64_t>>(0)) {
    if (videos.size() != labels.size()) {
        throw DataError("video set needs one label per video");
    }
    if (ids.empty()) {
        for (size_t i = 0; i < videos.size(); ++i) ids.push_back("video_" + std::to_string(i));
    }
    index_.resize(videos.size());
    std::iota(index_.begin(), index_.end(), 0);
    videos_ = std::make_shared<const std::vector<Video>>(std::move(videos));
    labels_ = std::move(labels);
    ids_ = std::move(ids);
}

const Video& VideoSet::video(int64_t i) const {
    reads_->fetch_add(1);
    return (*videos_)[static_cast<size_t>(index_.at(static_cast<size_t>(i)))];
}

void VideoSet::append(const VideoSet& other) {
    std::vector<Video> videos;
    std::vector<int64_t> labels;
    std::vector<std::string> ids;
    for (int64_t i = 0; i < size(); ++i) {
        videos.push_back((*videos_)[static_cast<size_t>(index_[static_cast<size_t>(i)])]);
    }
    for (int64_t i = 0; i < other.size(); ++i) {
        videos.push_back((*other.videos_)[static_cast<size_t>(other.index_[static_cast<size_t>(i)])]);
    }
    labels = labels_;
    labels.insert(labels.end(), other.labels_.begin(), other.labels_.end());
    ids = ids_;
    ids.insert(ids.end(), other.ids_.begin(), other.ids_.end());
    auto reads = reads_;
    *this = VideoSet(std::move(videos), std::move(labels), std::move(ids));
    reads_ = reads;
}

VideoSet VideoSet::subset(const std::vector<int64_t>& indices) const {
    VideoSet out = *this;
    out.index_.clear();
    out.labels_.clear();
    out.ids_.clear();
    out.reads_ = std::make_shared<std::atomic<int64_t>>(0);
    for (auto i : indices) {
        out.index_.push_back(index_.at(static_cast<size_t>(i)));
        out.labels_.push_back(labels_.at(static_cast<size_t>(i)));
        out.ids_.push_back(ids_.at(static_cast<size_t>(i)));
    }
    return out;
}

VideoSet load_videos(const DatasetView& view, const std::string& root, const LabelSet& labels) {
    std::vector<Video> videos;
    std::vector<int64_t> ids;
    std::vector<std::string> names;
    for (const auto& r : view.rows) {
        videos.push_back(read_frame_dir((fs::path(root) / r.path).string(), r.fps));
        ids.push_back(labels.label(r.label).embedding_index);
        names.push_back(r.path);
    }
    return VideoSet(std::move(videos), std::move(ids), std::move(names));
}

// ---------------------------------------------------------------------------

std::vector<int64_t> resample_indices(int64_t source_frames, double source_fps, double target_fps) {
    if (source_frames < 1) throw DataError("source has zero frames");
    if (!(source_fps > 0.0) || !(target_fps > 0.0)) throw ParameterError("frame rates must be positive");
    const double ratio = source_fps / target_fps;
    const auto count = static_cast<int64_t>(std::floor(static_cast<double>(source_frames - 1) / ratio + 1e-9)) + 1;
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        idx[static_cast<size_t>(i)] = std::min<int64_t>(source_frames - 1, std::llround(static_cast<double>(i) * ratio));
    }
    return idx;
}

Video ingest_frames(const torch::Tensor& gray_u8, double source_fps, int64_t target_fps, int64_t target_size) {
    if (!gray_u8.defined() || gray_u8.dim() != 3 || gray_u8.size(0) == 0) {
        throw DataError("no frames to ingest");
    }
    auto idx = resample_indices(gray_u8.size(0), source_fps, static_cast<double>(target_fps));
    std::vector<torch::Tensor> frames;
    frames.reserve(idx.size());
    for (auto i : idx) frames.push_back(resize_frame(gray_u8[i].to(torch::kUInt8), target_size));
    return {torch::stack(frames).contiguous(), target_fps};
}

Video ingest_video(const std::string& source, std::optional<double> source_fps, int64_t target_fps,
                   int64_t target_size) {
    std::vector<torch::Tensor> frames;
    double fps = 0.0;
    if (fs::is_directory(source)) {
        if (!source_fps) throw ParameterError("frame directories need an explicit source fps");
        fps = *source_fps;
        for (const auto& f : list_frame_files(source)) {
            cv::Mat img = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
            if (img.empty()) throw DataError("unreadable frame " + f.string());
            frames.push_back(mat_to_tensor(to_gray(img)));
        }
    } else {
        cv::VideoCapture cap(source);
        if (!cap.isOpened()) throw DataError("unreadable video source " + source);
        fps = source_fps ? *source_fps : cap.get(cv::CAP_PROP_FPS);
        if (!(fps > 0.0)) throw DataError("video " + source + " reports no frame rate; pass one explicitly");
        cv::Mat img;
        while (cap.read(img)) frames.push_back(mat_to_tensor(to_gray(img)));
    }
    if (frames.empty()) throw DataError("source " + source + " has zero frames");
    // Frames may differ in size before resizing; resize individually first.
    for (auto& f : frames) f = resize_frame(f, target_size);
    return ingest_frames(torch::stack(frames), fps, target_fps, target_size);
}

void write_frame_dir(const Video& video, const std::string& dir) {
    fs::create_directories(dir);
    for (int64_t i = 0; i < video.frames(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04lld.png", static_cast<long long>(i));
        if (!cv::imwrite((fs::path(dir) / name).string(), tensor_to_mat(video.gray[i]))) {
            throw DataError("cannot write frame to " + dir);
        }
    }
}

Video read_frame_dir(const std::string& dir, int64_t fps) {
    if (!fs::is_directory(dir)) throw DataError("missing frame directory " + dir);
    std::vector<torch::Tensor> frames;
    for (const auto& f : list_frame_files(dir)) {
        cv::Mat img = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw DataError("unreadable frame " + f.string());
        frames.push_back(mat_to_tensor(to_gray(img)));
    }
    if (frames.empty()) throw DataError("frame directory " + dir + " is empty");
    return {torch::stack(frames).contiguous(), fps};
}

// ---------------------------------------------------------------------------
// Toy generator

void ToyGeneratorConfig::validate() const {
    if (classes.size() < 2) throw ParameterError("toy generator needs at least two classes");
    for (const auto& c : classes) {
        if (c.gap_min < 0.0 || c.gap_max < c.gap_min) {
            throw ParameterError("class '" + c.name + "' has an invalid gap range");
        }
        if (c.bowing < 0.0) throw ParameterError("class '" + c.name + "' has negative bowing");
    }
    for (size_t i = 0; i < classes.size(); ++i) {
        for (size_t j = i + 1; j < classes.size(); ++j) {
            const auto& a = classes[i];
            const auto& b = classes[j];
            const double gap_diff = std::abs(0.5 * (a.gap_min + a.gap_max) - 0.5 * (b.gap_min + b.gap_max));
            const double bow_diff = std::abs(a.bowing - b.bowing);
            if (gap_diff < min_margin && bow_diff < min_margin) {
                throw ParameterError("classes '" + a.name + "' and '" + b.name +
                                     "' differ by less than the configured margin in every signature parameter");
            }
        }
    }
    if (frames < 1) throw ParameterError("frames per video must be >= 1");
    if (noise < 0.0 || texture < 0.0 || max_dropouts < 0) throw ParameterError("noise parameters must be >= 0");
    if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0) {
        throw ParameterError("split fractions must leave a non-empty test split");
    }
    labels();
}

LabelSet ToyGeneratorConfig::labels() const {
    std::vector<std::string> names;
    for (const auto& c : classes) names.push_back(c.name);
    return LabelSet(names);
}

std::string ToyGeneratorConfig::to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "classes = ";
    for (size_t i = 0; i < classes.size(); ++i) {
        const auto& c = classes[i];
        os << (i ? ";" : "") << c.name << ':' << c.gap_min << ':' << c.gap_max << ':' << c.bowing;
    }
    os << "\nnoise = " << noise << "\ntexture = " << texture << "\nmax_dropouts = " << max_dropouts
       << "\nframes = " << frames << "\nseed = " << seed << "\nmin_margin = " << min_margin
       << "\ntrain_fraction = " << train_fraction << "\nval_fraction = " << val_fraction << "\n";
    return os.str();
}

ToyGeneratorConfig ToyGeneratorConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ToyGeneratorConfig c;
    auto num = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, double>) field = std::stod(it->second);
        else if constexpr (std::is_same_v<T, uint64_t>) field = std::stoull(it->second);
        else field = std::stoll(it->second);
    };
    if (auto it = kv.find("classes"); it != kv.end()) {
        c.classes.clear();
        for (const auto& spec : split_on(it->second, ';')) {
            auto f = split_on(spec, ':');
            if (f.size() != 4) throw ParameterError("class signature must be name:gap_min:gap_max:bowing, got " + spec);
            c.classes.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
        }
    }
    num("noise", c.noise);
    num("texture", c.texture);
    num("max_dropouts", c.max_dropouts);
    num("frames", c.frames);
    num("seed", c.seed);
    num("min_margin", c.min_margin);
    num("train_fraction", c.train_fraction);
    num("val_fraction", c.val_fraction);
    return c;
}

double ToyVideoTruth::contraction(double t) const {
    return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / period + phase));
}

double ToyVideoTruth::septum_x(double y, double t) const {
    const double top = cy - 40.0 * scale;
    const double bottom = cy + 6.0 * scale;
    if (y <= top || y >= bottom) return cx;
    return cx + bowing * contraction(t) * std::sin(std::numbers::pi * (y - top) / (bottom - top));
}

double ToyVideoTruth::atrial_septum_y() const {
    return cy + 22.0 * scale;
}

namespace {

torch::Tensor soft_step(const torch::Tensor& signed_distance, double softness = 0.6) {
    return torch::sigmoid(signed_distance / softness);
}

torch::Tensor soft_ellipse(const torch::Tensor& X, const torch::Tensor& Y, double cx, double cy, double rx, double ry) {
    auto q = ((X - cx) / rx).square() + ((Y - cy) / ry).square();
    return soft_step((1.0 - q.sqrt()) * std::min(rx, ry));
}

torch::Tensor make_texture(uint64_t seed) {
    auto gen = diffusion::make_generator(seed);
    auto noise = torch::randn({1, 1, kFrameSize + 6, kFrameSize + 6}, gen);
    auto k1 = torch::exp(-torch::arange(-3, 4, torch::kFloat32).square() / (2.0 * 1.2 * 1.2));
    k1 = k1 / k1.sum();
    auto kernel = (k1.unsqueeze(1) * k1.unsqueeze(0)).view({1, 1, 7, 7});
    auto tex = torch::conv2d(noise, kernel).squeeze();
    return tex / tex.std();
}

}  // namespace

torch::Tensor render_toy_frame(const ToyVideoTruth& truth, double t, const torch::Tensor& texture, double noise,
                               uint64_t noise_seed) {
    const double k = truth.scale;
    auto coords = torch::arange(kFrameSize, torch::kFloat32) + 0.5;
    auto Y = coords.view({kFrameSize, 1}).expand({kFrameSize, kFrameSize});
    auto X = coords.view({1, kFrameSize}).expand({kFrameSize, kFrameSize});

    // Imaging sector with depth attenuation.
    const double apex_x = 56.0, apex_y = 2.0, radius = 108.0;
    auto dx = X - apex_x, dy = Y - apex_y;
    auto r = (dx.square() + dy.square()).sqrt();
    auto angle = torch::atan2(dx.abs(), dy);
    auto sector = soft_step((radius - r)) * soft_step((0.66 - angle) * r);
    auto attenuation = 1.0 - 0.3 * (r / radius).clamp(0.0, 1.0);

    const double c = truth.contraction(t);
    const double cx = truth.cx, cy = truth.cy;

    // Septum centreline per row.
    std::vector<float> sx(kFrameSize);
    for (int64_t row = 0; row < kFrameSize; ++row) {
        sx[static_cast<size_t>(row)] = static_cast<float>(truth.septum_x(static_cast<double>(row) + 0.5, t));
    }
    auto S = torch::tensor(sx).view({kFrameSize, 1}).expand({kFrameSize, kFrameSize});
    const double half_thickness = 2.5 * k;
    auto left_of_septum = soft_step(S - half_thickness - X);
    auto right_of_septum = soft_step(X - S - half_thickness);

    auto outer = soft_ellipse(X, Y, cx, cy - 2.0 * k, 34.0 * k, 44.0 * k);
    const double vrx = 13.0 * k * (1.0 - 0.15 * c), vry = 22.0 * k * (1.0 - 0.08 * c);
    const double arx = 12.0 * k * (1.0 - 0.12 * (1.0 - c)), ary = 13.0 * k;
    auto ventricles = torch::maximum(soft_ellipse(X, Y, cx - 15.0 * k, cy - 16.0 * k, vrx, vry) * left_of_septum,
                                     soft_ellipse(X, Y, cx + 15.0 * k, cy - 16.0 * k, vrx, vry) * right_of_septum);
    const double ay = truth.atrial_septum_y();
    auto atria = torch::maximum(soft_ellipse(X, Y, cx - 14.0 * k, ay, arx, ary) * left_of_septum,
                                soft_ellipse(X, Y, cx + 14.0 * k, ay, arx, ary) * right_of_septum);
    auto av_plane = soft_step(2.0 * k - (Y - (cy + 6.5 * k)).abs());
    auto blood = torch::maximum(ventricles, atria) * (1.0 - av_plane);
    if (truth.gap > 0.0) {
        auto gap = soft_step(0.5 * truth.gap - (Y - ay).abs()) * soft_step(half_thickness + 1.0 - (X - S).abs());
        blood = torch::maximum(blood, gap);
    }

    const double background = 0.10, myocardium = 0.55, blood_level = 0.04;
    auto img = torch::full({kFrameSize, kFrameSize}, background);
    img = img + (myocardium - background) * outer;
    img = img + (blood_level - img) * blood;
    for (const auto& d : truth.dropouts) {
        auto disc = soft_ellipse(X, Y, d[0], d[1], d[2], d[2]);
        img = img * (1.0 - 0.85 * disc);
    }
    img = img * (1.0 + texture) * attenuation * sector * truth.gain;
    if (noise > 0.0) {
        auto gen = diffusion::make_generator(noise_seed);
        img = img + noise * torch::randn({kFrameSize, kFrameSize}, gen) * sector;
    }
    return img.clamp(0.0, 1.0);
}

ToyDataset generate_toy_dataset(const ToyGeneratorConfig& config, int64_t n_per_class) {
    config.validate();
    if (n_per_class < 1) throw ParameterError("n_per_class must be >= 1");
    ToyDataset ds;
    ds.labels = config.labels();
    const auto n_classes = static_cast<int64_t>(config.classes.size());

    for (int64_t cls = 0; cls < n_classes; ++cls) {
        const auto& sig = config.classes[static_cast<size_t>(cls)];
        std::vector<int64_t> order(static_cast<size_t>(n_per_class));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 split_rng(derive_seed(config.seed, 1000003 + static_cast<uint64_t>(cls)));
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<std::string> split_of(static_cast<size_t>(n_per_class));
        const auto n_train = std::max<int64_t>(1, std::llround(config.train_fraction * static_cast<double>(n_per_class)));
        const auto n_val = std::llround(config.val_fraction * static_cast<double>(n_per_class));
        for (int64_t r = 0; r < n_per_class; ++r) {
            split_of[static_cast<size_t>(order[static_cast<size_t>(r)])] =
                r < n_train ? "train" : (r < n_train + n_val ? "val" : "test");
        }

        for (int64_t i = 0; i < n_per_class; ++i) {
            const uint64_t video_seed = derive_seed(config.seed, static_cast<uint64_t>(cls * 1000000 + i));
            std::mt19937_64 rng(video_seed);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };

            ToyVideoTruth truth;
            truth.label = cls;
            truth.cx = 56.0 + uni(-5.0, 5.0);
            truth.cy = 62.0 + uni(-5.0, 5.0);
            truth.scale = uni(0.9, 1.1);
            truth.gain = uni(0.85, 1.15);
            truth.period = uni(20.0, 30.0);
            truth.phase = uni(0.0, 2.0 * std::numbers::pi);
            truth.gap = sig.gap_max > 0.0 ? uni(sig.gap_min, sig.gap_max) : 0.0;
            truth.bowing = sig.bowing;
            truth.texture_seed = mix_seed(video_seed);
            const auto n_drop = static_cast<int64_t>(std::floor(uni(0.0, static_cast<double>(config.max_dropouts) + 0.999)));
            for (int64_t d = 0; d < n_drop; ++d) {
                // On the outer wall, away from the septum region.
                double theta = uni(0.0, 2.0 * std::numbers::pi);
                while (std::abs(std::cos(theta)) < 0.35) theta = uni(0.0, 2.0 * std::numbers::pi);
                truth.dropouts.push_back({truth.cx + 30.5 * truth.scale * std::cos(theta),
                                          truth.cy - 2.0 * truth.scale + 40.5 * truth.scale * std::sin(theta),
                                          uni(2.5, 4.5)});
            }

            auto texture = make_texture(truth.texture_seed) * config.texture;
            std::vector<torch::Tensor> frames;
            for (int64_t f = 0; f < config.frames; ++f) {
                auto img = render_toy_frame(truth, static_cast<double>(f), texture, config.noise,
                                            derive_seed(truth.texture_seed, static_cast<uint64_t>(f)));
                frames.push_back(img.mul(255.0).round().to(torch::kUInt8));
            }
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%04lld", sig.name.c_str(), static_cast<long long>(i));
            ToyVideo v{id, split_of[static_cast<size_t>(i)], Video{torch::stack(frames).contiguous(), kTargetFps}, truth};
            ds.manifest.rows.push_back({"videos/" + v.id, sig.name, v.split, kTargetFps, config.frames});
            ds.videos.push_back(std::move(v));
        }
    }
    return ds;
}

VideoSet ToyDataset::split(const std::string& name) const {
    if (name != "train" && name != "val" && name != "test") throw ParameterError("unknown split '" + name + "'");
    std::vector<Video> videos;
    std::vector<int64_t> labels;
    std::vector<std::string> ids;
    for (const auto& v : this->videos) {
        if (v.split != name) continue;
        videos.push_back(v.video);
        labels.push_back(v.truth.label);
        ids.push_back(v.id);
    }
    return VideoSet(std::move(videos), std::move(labels), std::move(ids));
}

void write_toy_dataset(const ToyDataset& dataset, const ToyGeneratorConfig& config, const std::string& root) {
    fs::create_directories(root);
    for (const auto& v : dataset.videos) {
        write_frame_dir(v.video, (fs::path(root) / "videos" / v.id).string());
    }
    dataset.manifest.write((fs::path(root) / "manifest.csv").string());
    std::ofstream gen((fs::path(root) / "generator.ini").string());
    gen << config.to_kv();
    std::ofstream truth((fs::path(root) / "truth.csv").string());
    truth.precision(17);
    truth << "id,label,gap,bowing,cx,cy,scale,gain,period,phase,texture_seed,dropouts\n";
    for (const auto& v : dataset.videos) {
        const auto& t = v.truth;
        truth << v.id << ',' << t.label << ',' << t.gap << ',' << t.bowing << ',' << t.cx << ',' << t.cy << ','
              << t.scale << ',' << t.gain << ',' << t.period << ',' << t.phase << ',' << t.texture_seed << ',';
        for (size_t d = 0; d < t.dropouts.size(); ++d) {
            truth << (d ? ";" : "") << t.dropouts[d][0] << ':' << t.dropouts[d][1] << ':' << t.dropouts[d][2];
        }
        truth << '\n';
    }
}

std::map<std::string, std::string> read_kv_file(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read " + file);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto l = trim(line);
        if (l.empty() || l[0] == '#' || l[0] == ';' || l[0] == '[') continue;
        auto eq = l.find('=');
        if (eq == std::string::npos) throw DataError("malformed key/value line in " + file + ": " + l);
        kv[trim(l.substr(0, eq))] = trim(l.substr(eq + 1));
    }
    return kv;
}

ToyDataset read_toy_dataset(const std::string& root) {
    auto config = ToyGeneratorConfig::from_kv(read_kv_file((fs::path(root) / "generator.ini").string()));
    ToyDataset ds;
    ds.labels = config.labels();
    ds.manifest = DatasetManifest::read((fs::path(root) / "manifest.csv").string());
    ds.manifest.validate(ds.labels);

    std::map<std::string, ToyVideoTruth> truths;
    std::ifstream in((fs::path(root) / "truth.csv").string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto f = split_on(line, ',');
        f.resize(12);
        ToyVideoTruth t;
        t.label = std::stoll(f[1]);
        t.gap = std::stod(f[2]);
        t.bowing = std::stod(f[3]);
        t.cx = std::stod(f[4]);
        t.cy = std::stod(f[5]);
        t.scale = std::stod(f[6]);
        t.gain = std::stod(f[7]);
        t.period = std::stod(f[8]);
        t.phase = std::stod(f[9]);
        t.texture_seed = std::stoull(f[10]);
        if (!f[11].empty()) {
            for (const auto& d : split_on(f[11], ';')) {
                auto p = split_on(d, ':');
                t.dropouts.push_back({std::stod(p[0]), std::stod(p[1]), std::stod(p[2])});
            }
        }
        truths[f[0]] = t;
    }
    for (const auto& row : ds.manifest.rows) {
        const auto id = fs::path(row.path).filename().string();
        auto it = truths.find(id);
        if (it == truths.end()) throw DataError("no ground truth for " + id);
        ds.videos.push_back({id, row.split, read_frame_dir((fs::path(root) / row.path).string(), row.fps), it->second});
    }
    return ds;
}

}  // namespace echogen

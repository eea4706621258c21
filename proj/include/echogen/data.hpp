// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/types.h>

#include "echogen/labels.hpp"

namespace echogen {

inline constexpr int64_t kFrameSize = 112;
inline constexpr int64_t kTargetFps = 32;

/// One pseudo-RGB frame: float [3, 112, 112] with values in [0, 1].
struct PixelFrame {
    torch::Tensor data;

    /// Throws ShapeError / DataError when the frame violates its invariants.
    void validate() const;
};

/**
 * A pixel video at the ingestion format. Frames are stored as uint8 grayscale
 * [F, 112, 112]; the pseudo-RGB view duplicates the single channel, so the
 * three channels are identical by construction.
 */
struct Video {
    torch::Tensor gray;
    int64_t fps = kTargetFps;

    int64_t frames() const { return gray.defined() ? gray.size(0) : 0; }
    PixelFrame frame(int64_t index) const;
    /// float [F, 3, 112, 112] in [0, 1].
    torch::Tensor pixels() const;
    /// float [F, 1, 112, 112] in [0, 1].
    torch::Tensor gray_float() const;

    /// Quantizes float frames [F, C, H, W] (channel mean) to the storage format.
    static Video from_pixels(const torch::Tensor& frames, int64_t fps = kTargetFps);
};

// ---------------------------------------------------------------------------
// Manifest and splits

struct ManifestRow {
    std::string path;
    std::string label;
    std::string split;
    int64_t fps = kTargetFps;
    int64_t frames = 0;
};

/// Delimited table with header `path,label,split,fps,frames`.
struct DatasetManifest {
    std::vector<ManifestRow> rows;

    /// Splits must be disjoint by video and every label must be in `labels`.
    void validate(const LabelSet& labels) const;
    void write(const std::string& file) const;
    static DatasetManifest read(const std::string& file);
};

/// Rows of one split in manifest order.
struct DatasetView {
    std::string split;
    std::vector<ManifestRow> rows;
};

/// Throws ParameterError for split names other than train/val/test.
DatasetView load_split(const DatasetManifest& manifest, const std::string& split);

/**
 * In-memory labelled video collection with an access counter so callers can
 * verify which sets a procedure touched.
 */
class VideoSet {
public:
    VideoSet() : reads_(std::make_shared<std::atomic<int64_t>>(0)) {}
    VideoSet(std::vector<Video> videos, std::vector<int64_t> labels, std::vector<std::string> ids = {});

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    bool empty() const { return labels_.empty(); }
    /// Counted access.
    const Video& video(int64_t i) const;
    int64_t label(int64_t i) const { return labels_.at(static_cast<size_t>(i)); }
    const std::string& id(int64_t i) const { return ids_.at(static_cast<size_t>(i)); }
    const std::vector<int64_t>& labels() const { return labels_; }
    int64_t reads() const { return reads_->load(); }

    void append(const VideoSet& other);
    VideoSet subset(const std::vector<int64_t>& indices) const;

private:
    std::shared_ptr<const std::vector<Video>> videos_ = std::make_shared<std::vector<Video>>();
    std::vector<int64_t> index_;
    std::vector<int64_t> labels_;
    std::vector<std::string> ids_;
    std::shared_ptr<std::atomic<int64_t>> reads_;
};

/// Loads every video of a view (frame directories relative to `root`).
VideoSet load_videos(const DatasetView& view, const std::string& root, const LabelSet& labels);

// ---------------------------------------------------------------------------
// Ingestion

/**
 * Reads a video file or a directory of numbered frame images, converts to
 * grayscale, resizes to target_size x target_size and resamples to target_fps
 * by nearest-frame selection. `source_fps` is required for frame directories
 * and overrides the container rate for files when given.
 */
Video ingest_video(const std::string& source, std::optional<double> source_fps = std::nullopt,
                   int64_t target_fps = kTargetFps, int64_t target_size = kFrameSize);

/// Same resampling/resizing applied to frames already in memory (uint8 [F, H, W]).
Video ingest_frames(const torch::Tensor& gray_u8, double source_fps, int64_t target_fps = kTargetFps,
                    int64_t target_size = kFrameSize);

/// Source frame index chosen for each output frame by nearest-frame resampling.
std::vector<int64_t> resample_indices(int64_t source_frames, double source_fps, double target_fps);

/// Lossless PNG frame directory (frame_0000.png, ...).
void write_frame_dir(const Video& video, const std::string& dir);
Video read_frame_dir(const std::string& dir, int64_t fps = kTargetFps);

// ---------------------------------------------------------------------------
// Procedural toy echo generator

/// Class signature: wall-gap size range in pixels (0 for no defect) and
/// septal-bowing amplitude in pixels.
struct ToyClassSignature {
    std::string name;
    double gap_min = 0.0;
    double gap_max = 0.0;
    double bowing = 1.0;
};

struct ToyGeneratorConfig {
    std::vector<ToyClassSignature> classes{{"control", 0.0, 0.0, 1.0}, {"defect", 4.0, 8.0, 3.0}};
    double noise = 0.02;           // per-frame pixel noise std
    double texture = 0.15;         // static speckle amplitude
    int64_t max_dropouts = 2;      // wall dropout artifacts per video (both classes)
    int64_t frames = 64;
    uint64_t seed = 7;
    double min_margin = 2.0;       // classes must differ by this much in gap or bowing
    double train_fraction = 0.6;
    double val_fraction = 0.1;

    void validate() const;
    LabelSet labels() const;
    std::string to_kv() const;
    static ToyGeneratorConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Ground-truth generating parameters of one toy video.
struct ToyVideoTruth {
    int64_t label = 0;
    double gap = 0.0;
    double bowing = 0.0;
    double cx = 56.0, cy = 62.0, scale = 1.0, gain = 1.0;
    double period = 24.0, phase = 0.0;
    uint64_t texture_seed = 0;
    std::vector<std::array<double, 3>> dropouts;  // (x, y, radius)

    /// Horizontal septum position at row y and frame t.
    double septum_x(double y, double t) const;
    /// Contraction state in [0, 1] at frame t.
    double contraction(double t) const;
    /// Row at the centre of the interatrial septum (where the gap sits).
    double atrial_septum_y() const;
};

/// Renders one frame (float [112, 112] in [0, 1], before quantization).
torch::Tensor render_toy_frame(const ToyVideoTruth& truth, double t, const torch::Tensor& texture,
                               double noise, uint64_t noise_seed);

struct ToyVideo {
    std::string id;
    std::string split;
    Video video;
    ToyVideoTruth truth;
};

struct ToyDataset {
    LabelSet labels;
    std::vector<ToyVideo> videos;
    DatasetManifest manifest;

    VideoSet split(const std::string& name) const;
};

/// Deterministic in config.seed. Throws ParameterError for invalid configs.
ToyDataset generate_toy_dataset(const ToyGeneratorConfig& config, int64_t n_per_class);

/// Writes frame directories, manifest.csv, truth.csv and generator.ini under `root`.
void write_toy_dataset(const ToyDataset& dataset, const ToyGeneratorConfig& config, const std::string& root);

/// Reads frames back (bit-exact) together with the ground-truth table.
ToyDataset read_toy_dataset(const std::string& root);

/// Reads a plain key = value file (blank lines and '#' comments ignored).
std::map<std::string, std::string> read_kv_file(const std::string& file);

}  // namespace echogen

// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/pipeline.hpp"

#include <fstream>
#include <iostream>

#include <torch/torch.h>

#include "echogen/errors.hpp"
#include "echogen/checkpoint.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Runs `body` in <stage>.tmp and swaps the directory in only on success.
nlohmann::json in_stage_dir(const RunContext& ctx, const std::string& stage,
                            const std::function<nlohmann::json(const fs::path&)>& body) {
    fs::create_directories(ctx.run_dir());
    const auto snapshot = ctx.run_dir() / "config.ini";
    if (!fs::exists(snapshot)) write_text(snapshot, ctx.config.resolved_text());
    const auto tmp = ctx.run_dir() / (stage + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::json summary;
    try {
        summary = body(tmp);
    } catch (...) {
        fs::remove_all(tmp);
        throw;
    }
    summary["stage"] = stage;
    summary["config_hash"] = ctx.hash;
    write_json(tmp / "summary.json", summary);
    const auto final_dir = ctx.stage_dir(stage);
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
    return summary;
}

OptimConfig diffusion_opt(const ExperimentConfig& c, const std::string& s) {
    OptimConfig o;
    o.steps = c.get_int(s + ".steps");
    o.batch_size = c.get_int(s + ".batch_size");
    o.learning_rate = c.get_double(s + ".learning_rate");
    o.warmup = c.get_int(s + ".warmup");
    o.probe_every = c.get_int(s + ".probe_every");
    o.seed = static_cast<uint64_t>(c.get_int(s + ".seed"));
    return o;
}

diffusion::GuidanceConfig training_guidance(const ExperimentConfig& c, const std::string& s) {
    return {1.0, c.get_double(s + ".dropout_p")};
}

/// Latent videos [N, F, d, s, s] for every video of a set.
torch::Tensor encode_videos(const LatentCodec& codec, const VideoSet& videos) {
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < videos.size(); ++i) out.push_back(codec.encode(videos.video(i).pixels()));
    return torch::stack(out);
}

/// Strided frames of `per_class` fresh 32-frame toy videos per class,
/// generated in chunks to bound memory.
torch::Tensor fresh_toy_frames(ToyGeneratorConfig cfg, uint64_t seed, int64_t per_class, int64_t stride) {
    constexpr int64_t chunk = 100;
    cfg.frames = 32;
    std::vector<torch::Tensor> out;
    for (int64_t k = 0; k * chunk < per_class; ++k) {
        cfg.seed = derive_seed(seed, static_cast<uint64_t>(k));
        auto ds = generate_toy_dataset(cfg, std::min(chunk, per_class - k * chunk));
        for (const auto& v : ds.videos) out.push_back(v.video.gray.slice(0, 0, v.video.frames(), stride));
    }
    return torch::cat(out);
}

bool is_toy_run(const ExperimentConfig& c) { return c.get("data.root").empty() && c.get("data.manifest").empty(); }

std::vector<int64_t> frame_labels(const VideoSet& videos, int64_t frames_per_video) {
    std::vector<int64_t> labels;
    for (auto l : videos.labels()) labels.insert(labels.end(), static_cast<size_t>(frames_per_video), l);
    return labels;
}

void require_file(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) {
        throw DataError("missing artifact " + path.string() + " (produced by " + producer + ")");
    }
}

}  // namespace

std::string tensor_hash(const torch::Tensor& t) { return ContentHasher().update(t).hex(); }

RunContext::RunContext(ExperimentConfig c, fs::path a) : config(std::move(c)), artifacts(std::move(a)) {
    config.require_valid();
    hash = config.hash();
}

fs::path RunContext::dataset_root() const {
    const auto root = config.get("data.root");
    if (!root.empty()) return root;
    const auto manifest = config.get("data.manifest");
    if (!manifest.empty()) return fs::path(manifest).parent_path();
    return stage_dir("gen-toy-data");
}

fs::path RunContext::checkpoint(const std::string& section) const {
    const auto explicit_path = config.get(section + ".checkpoint");
    if (!explicit_path.empty()) return explicit_path;
    if (section == "codec") return stage_dir("train-codec") / "codec.ckpt";
    if (section == "lidm") return stage_dir("train-lidm") / "lidm.ckpt";
    if (section == "lvdm") return stage_dir("train-lvdm") / "lvdm.ckpt";
    if (section == "reid") return stage_dir("train-reid") / "privacy.ckpt";
    throw ParameterError("no checkpoint for section " + section);
}

diffusion::NoiseSchedule RunContext::schedule() const {
    return diffusion::make_schedule(config.get_int("schedule.T"), config.get_double("schedule.beta_start"),
                                    config.get_double("schedule.beta_end"),
                                    diffusion::parse_schedule_shape(config.get("schedule.shape")));
}

ToyGeneratorConfig RunContext::toy_config() const {
    std::map<std::string, std::string> kv;
    for (const auto* key : {"classes", "noise", "texture", "max_dropouts", "frames", "seed", "min_margin",
                            "train_fraction", "val_fraction"}) {
        kv[key] = config.get(std::string("data.") + key);
    }
    return ToyGeneratorConfig::from_kv(kv);
}

LoadedData load_dataset(const RunContext& ctx) {
    const auto root = ctx.dataset_root();
    const auto manifest_path =
        ctx.config.get("data.manifest").empty() ? root / "manifest.csv" : fs::path(ctx.config.get("data.manifest"));
    require_file(manifest_path, "gen-toy-data");
    LoadedData d;
    d.labels = ctx.toy_config().labels();
    d.manifest = DatasetManifest::read(manifest_path.string());
    d.manifest.validate(d.labels);
    d.train = load_videos(load_split(d.manifest, "train"), root.string(), d.labels);
    d.val = load_videos(load_split(d.manifest, "val"), root.string(), d.labels);
    d.test = load_videos(load_split(d.manifest, "test"), root.string(), d.labels);
    return d;
}

Models load_models(const RunContext& ctx) {
    for (const auto& [section, stage] : std::vector<std::pair<std::string, std::string>>{
             {"codec", "train-codec"}, {"lidm", "train-lidm"}, {"lvdm", "train-lvdm"}, {"reid", "train-reid"}}) {
        require_file(ctx.checkpoint(section), stage);
    }
    auto codec = LatentCodec::load(ctx.checkpoint("codec").string());
    auto lidm = Lidm::load(ctx.checkpoint("lidm").string());
    auto lvdm = Lvdm::load(ctx.checkpoint("lvdm").string());
    auto privacy = PrivacyFilter::load(ctx.checkpoint("reid").string());
    if (lidm.codec_id() != codec.id() || lvdm.codec_id() != codec.id()) {
        throw CodecMismatchError("diffusion checkpoints were trained on latents of a different codec");
    }
    return {std::move(codec), std::move(lidm), std::move(lvdm), std::move(privacy)};
}

GeneratedVideo generate_video(const Models& models, const GenerationRequest& req,
                              const InitialFrameOverride& override_initial) {
    const uint64_t lidm_base = derive_seed(req.seed, 0);
    const uint64_t chain_base = derive_seed(req.seed, 1);
    std::map<int64_t, LatentFrame> drawn;
    const diffusion::GuidanceConfig lidm_guidance{req.lidm_guidance, 0.0};
    auto sampler = [&](int64_t attempt) {
        const uint64_t s = derive_seed(lidm_base, static_cast<uint64_t>(attempt));
        auto z = override_initial ? override_initial(attempt, s)
                                  : models.lidm.sample_initial_frame(req.label, lidm_guidance, s);
        drawn[attempt] = z;
        return models.codec.decode(z);
    };
    GeneratedVideo out;
    try {
        auto accepted = models.privacy.filter_until_accept(sampler, req.max_attempts);
        out.decisions = accepted.decisions;
        out.z_heart = drawn.at(accepted.attempts - 1);
    } catch (PrivacyExhaustedError& e) {
        auto decisions = e.decisions();
        for (auto& d : decisions) d.seed = derive_seed(lidm_base, static_cast<uint64_t>(d.attempt));
        throw PrivacyExhaustedError(e.what(), std::move(decisions));
    }
    for (auto& d : out.decisions) d.seed = derive_seed(lidm_base, static_cast<uint64_t>(d.attempt));

    LongVideoPlan plan{req.blocks, {req.guidance, 0.0}, chain_base};
    out.latent = generate_long_video(models.lvdm, out.z_heart, req.label, plan);
    out.pixels = decode_video(out.latent.video, models.codec);

    nlohmann::json decisions = nlohmann::json::array();
    for (const auto& d : out.decisions) decisions.push_back(d.to_json());
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : out.latent.blocks) blocks.push_back(b.to_json());
    out.manifest = {{"label", models.lidm.labels().name(req.label)},
                    {"label_index", req.label.embedding_index},
                    {"guidance", req.guidance},
                    {"lidm_guidance", req.lidm_guidance},
                    {"blocks", req.blocks},
                    {"seed", req.seed},
                    {"lidm_seed_base", lidm_base},
                    {"chain_seed_base", chain_base},
                    {"block_records", blocks},
                    {"frames", out.latent.video.length()},
                    {"checkpoints",
                     {{"codec", models.codec.id()},
                      {"lidm", models.lidm.hash()},
                      {"lvdm", models.lvdm.hash()},
                      {"privacy", models.privacy.hash()}}},
                    {"privacy", decisions},
                    {"z_heart_hash", tensor_hash(out.z_heart.data)},
                    {"latent_hash", tensor_hash(out.latent.video.frames)},
                    {"pixel_hash", tensor_hash(out.pixels.gray)}};
    return out;
}

VideoSet generate_synthetic_set(const Models& models, int64_t per_class, double guidance, uint64_t seed) {
    std::vector<Video> videos;
    std::vector<int64_t> labels;
    std::vector<std::string> ids;
    const int64_t classes = models.lidm.labels().size();
    for (int64_t i = 0; i < per_class * classes; ++i) {
        GenerationRequest req;
        req.label = ClassLabel{i % classes};
        req.guidance = guidance;
        req.lidm_guidance = guidance;
        req.seed = derive_seed(seed, static_cast<uint64_t>(i));
        req.max_attempts = 16;
        auto g = generate_video(models, req);
        videos.push_back(g.pixels);
        labels.push_back(req.label.embedding_index);
        ids.push_back("synthetic_" + std::to_string(i));
    }
    return VideoSet(std::move(videos), std::move(labels), std::move(ids));
}

nlohmann::json run_gen_toy_data(const RunContext& ctx) {
    return in_stage_dir(ctx, "gen-toy-data", [&](const fs::path& dir) {
        auto cfg = ctx.toy_config();
        auto ds = generate_toy_dataset(cfg, ctx.config.get_int("data.n_per_class"));
        write_toy_dataset(ds, cfg, dir.string());
        nlohmann::json counts;
        for (const auto* split : {"train", "val", "test"}) {
            counts[split] = load_split(ds.manifest, split).rows.size();
        }
        return nlohmann::json{{"videos", ds.videos.size()}, {"splits", counts}, {"labels", ds.labels.to_string()}};
    });
}

nlohmann::json run_train_codec(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    return in_stage_dir(ctx, "train-codec", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        CodecConfig cc;
        cc.latent_channels = c.get_int("codec.latent_channels");
        cc.steps = c.get_int("codec.steps");
        cc.batch_size = c.get_int("codec.batch_size");
        cc.learning_rate = c.get_double("codec.learning_rate");
        cc.kl_weight = c.get_double("codec.kl_weight");
        cc.min_frames = c.get_int("codec.min_frames");
        cc.seed = static_cast<uint64_t>(c.get_int("codec.seed"));
        auto result = train_codec(gather_frames(data.train, c.get_int("codec.frame_stride")), cc);
        const auto file_hash = result.codec.save((dir / "codec.ckpt").string());
        write_json(dir / "loss.json", result.loss_trace);
        return nlohmann::json{{"codec_id", result.codec.id()},
                              {"checkpoint_hash", file_hash},
                              {"holdout_psnr", result.holdout_psnr},
                              {"latent_channels", result.codec.latent_channels()},
                              {"latent_size", result.codec.latent_size()}};
    });
}

nlohmann::json run_train_lidm(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    require_file(ctx.checkpoint("codec"), "train-codec");
    auto codec = LatentCodec::load(ctx.checkpoint("codec").string());
    return in_stage_dir(ctx, "train-lidm", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        auto videos = encode_videos(codec, data.train);
        const int64_t frames = videos.size(1);
        auto latents = videos.flatten(0, 1);
        LidmConfig lc;
        lc.net.channels = c.get_int("lidm.channels");
        lc.net.inner_channels = c.get_int("lidm.inner_channels");
        lc.opt = diffusion_opt(c, "lidm");
        lc.sample_stride = c.get_int("lidm.sample_stride");
        auto result = train_lidm(latents, frame_labels(data.train, frames), data.labels, ctx.schedule(),
                                 training_guidance(c, "lidm"), lc, codec.id());
        const auto file_hash = result.model.save((dir / "lidm.ckpt").string());
        write_json(dir / "trace.json", result.trace.to_json());
        return nlohmann::json{{"model_hash", result.model.hash()},
                              {"checkpoint_hash", file_hash},
                              {"codec_id", codec.id()},
                              {"probe_initial", result.trace.probe_initial},
                              {"probe_final", result.trace.probe_final}};
    });
}

nlohmann::json run_train_reid(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    return in_stage_dir(ctx, "train-reid", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        ReidConfig rc;
        rc.embed_dim = c.get_int("reid.embed_dim");
        rc.steps = c.get_int("reid.steps");
        rc.learning_rate = c.get_double("reid.learning_rate");
        rc.temperature = c.get_double("reid.temperature");
        rc.videos_per_batch = c.get_int("reid.videos_per_batch");
        rc.frames_per_video = c.get_int("reid.frames_per_video");
        rc.seed = static_cast<uint64_t>(c.get_int("reid.seed"));

        auto frames = gather_frames(data.train);
        std::vector<int64_t> video_ids;
        std::vector<std::string> sources;
        for (int64_t i = 0; i < data.train.size(); ++i) {
            for (int64_t f = 0; f < data.train.video(i).frames(); ++f) {
                video_ids.push_back(i);
                sources.push_back(data.train.id(i) + "#" + std::to_string(f));
            }
        }
        auto result = train_reid(frames, video_ids, rc);
        auto index = build_index(result.embedder, frames, sources);
        // Toy runs calibrate on freshly generated videos. False positives come
        // in whole videos (a fresh video close to a training one), so the tail
        // quantile needs many videos; the val split has too few. Real corpora
        // use val.
        const auto calib_per_class = c.get_int("reid.calibration_videos_per_class");
        torch::Tensor held_out;
        if (is_toy_run(c) && calib_per_class > 0) {
            held_out = fresh_toy_frames(ctx.toy_config(), derive_seed(c.get_int("reid.seed"), 0x63616c6962ULL),
                                        calib_per_class, c.get_int("reid.calibration_frame_stride"));
        } else {
            held_out = gather_frames(data.val, c.get_int("reid.calibration_frame_stride"));
        }
        const double tau = calibrate_threshold(index, result.embedder, held_out, c.get_double("reid.target_fpr"));

        auto val_frames = gather_frames(data.val);
        std::vector<int64_t> val_ids;
        for (int64_t i = 0; i < data.val.size(); ++i) val_ids.insert(val_ids.end(), data.val.video(i).frames(), i);
        auto [same, cross] = same_cross_similarity(embed_frames(result.embedder, val_frames), val_ids);

        PrivacyFilter filter(result.embedder, index);
        const auto file_hash = filter.save((dir / "privacy.ckpt").string());
        write_json(dir / "loss.json", result.loss_trace);
        return nlohmann::json{{"filter_hash", filter.hash()},  {"checkpoint_hash", file_hash},
                              {"threshold", tau},              {"indexed_frames", index.size()},
                              {"calibration_frames", held_out.size(0)},
                              {"val_same_similarity", same},   {"val_cross_similarity", cross}};
    });
}

nlohmann::json run_train_lvdm(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    require_file(ctx.checkpoint("codec"), "train-codec");
    auto codec = LatentCodec::load(ctx.checkpoint("codec").string());
    return in_stage_dir(ctx, "train-lvdm", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        auto videos = encode_videos(codec, data.train);
        // Longer videos contribute every complete 64-frame window.
        std::vector<torch::Tensor> clips;
        std::vector<int64_t> labels;
        for (int64_t i = 0; i < videos.size(0); ++i) {
            for (int64_t s = 0; s + kBlockFrames <= videos.size(1); s += kBlockFrames) {
                clips.push_back(videos[i].slice(0, s, s + kBlockFrames));
                labels.push_back(data.train.label(i));
            }
        }
        if (clips.empty()) throw DataError("no training video has " + std::to_string(kBlockFrames) + " frames");
        LvdmConfig lc;
        lc.net.channels = c.get_int("lvdm.channels");
        lc.net.inner_channels = c.get_int("lvdm.inner_channels");
        lc.opt = diffusion_opt(c, "lvdm");
        lc.sample_stride = c.get_int("lvdm.sample_stride");
        auto result = train_lvdm(torch::stack(clips), labels, data.labels, ctx.schedule(),
                                 training_guidance(c, "lvdm"), lc, codec.id());
        const auto file_hash = result.model.save((dir / "lvdm.ckpt").string());
        write_json(dir / "trace.json", result.trace.to_json());
        return nlohmann::json{{"model_hash", result.model.hash()},
                              {"checkpoint_hash", file_hash},
                              {"codec_id", codec.id()},
                              {"probe_initial", result.trace.probe_initial},
                              {"probe_final", result.trace.probe_final}};
    });
}

namespace {

nlohmann::json sample_into(const RunContext& ctx, const std::string& stage, const InitialFrameOverride& override_initial) {
    auto models = load_models(ctx);
    return in_stage_dir(ctx, stage, [&](const fs::path& dir) {
        const auto& c = ctx.config;
        const auto names = c.get_list("sample.label");
        if (names.empty()) throw ConfigError({"sample.label lists no labels"});
        const double w = c.get_double("sample.guidance");
        const auto lidm_w = c.get("sample.lidm_guidance");
        std::ofstream decisions(dir / "privacy_decisions.jsonl");
        nlohmann::json videos = nlohmann::json::array();
        for (int64_t i = 0; i < c.get_int("sample.count"); ++i) {
            GenerationRequest req;
            req.label = models.lidm.labels().label(names[static_cast<size_t>(i) % names.size()]);
            req.guidance = w;
            req.lidm_guidance = lidm_w.empty() ? w : std::stod(lidm_w);
            req.blocks = c.get_int("sample.blocks");
            req.seed = derive_seed(static_cast<uint64_t>(c.get_int("sample.seed")), static_cast<uint64_t>(i));
            req.max_attempts = c.get_int("sample.max_attempts");
            GeneratedVideo g;
            try {
                g = generate_video(models, req, override_initial);
            } catch (const PrivacyExhaustedError& e) {
                for (const auto& d : e.decisions()) {
                    auto line = d.to_json();
                    line["video"] = i;
                    std::cerr << line.dump() << "\n";
                }
                throw;
            }
            for (const auto& d : g.decisions) {
                auto line = d.to_json();
                line["video"] = i;
                decisions << line.dump() << "\n";
            }
            const auto name = "video_" + std::to_string(i);
            write_frame_dir(g.pixels, (dir / name).string());
            torch::save(g.latent.video.frames, (dir / (name + ".latent.pt")).string());
            g.manifest["config_hash"] = ctx.hash;
            g.manifest["path"] = name;
            write_json(dir / (name + ".json"), g.manifest);
            videos.push_back({{"path", name},
                              {"latent_hash", g.manifest["latent_hash"]},
                              {"pixel_hash", g.manifest["pixel_hash"]},
                              {"frames", g.manifest["frames"]}});
        }
        return nlohmann::json{{"videos", videos}};
    });
}

}  // namespace

nlohmann::json run_sample(const RunContext& ctx, const InitialFrameOverride& override_initial) {
    return sample_into(ctx, "sample", override_initial);
}

ReplayResult replay_sample(const fs::path& artifacts, const std::string& hash) {
    const auto snapshot = artifacts / hash / "config.ini";
    if (!fs::exists(snapshot)) throw DataError("no recorded config for hash " + hash);
    RunContext ctx(ExperimentConfig::from_file(snapshot.string()), artifacts);
    if (ctx.hash != hash) throw ConfigError({"recorded config no longer hashes to " + hash});
    const auto recorded_path = ctx.stage_dir("sample") / "summary.json";
    require_file(recorded_path, "sample");
    std::ifstream in(recorded_path);
    auto recorded = nlohmann::json::parse(in);
    auto replayed = sample_into(ctx, "sample.replay", {});
    ReplayResult r;
    for (const auto& v : recorded["videos"]) r.recorded.push_back(v["latent_hash"].get<std::string>() + "/" +
                                                                  v["pixel_hash"].get<std::string>());
    for (const auto& v : replayed["videos"]) r.replayed.push_back(v["latent_hash"].get<std::string>() + "/" +
                                                                  v["pixel_hash"].get<std::string>());
    r.identical = !r.recorded.empty() && r.recorded == r.replayed;
    return r;
}

namespace {

FrameClassifier real_frame_classifier(const LoadedData& data, int64_t steps, uint64_t seed) {
    FrameClassifierConfig fc;
    fc.classes = data.labels.size();
    fc.steps = steps;
    auto frames = gather_frames(data.train);
    return train_frame_classifier(frames, frame_labels(data.train, data.train.video(0).frames()), fc, seed);
}

torch::Tensor strided_frames(const VideoSet& set, int64_t stride) { return gather_frames(set, stride); }

}  // namespace

nlohmann::json run_evaluate(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    auto models = load_models(ctx);
    return in_stage_dir(ctx, "evaluate", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        const auto seed = static_cast<uint64_t>(c.get_int("evaluate.seed"));
        const double w = c.get_double("evaluate.guidance");
        // Toy runs get the procedural oracle; real corpora fall back to their own train split.
        const bool toy = is_toy_run(c);
        FrameClassifierConfig fc;
        fc.steps = c.get_int("evaluate.frame_classifier_steps");
        auto frame_model = toy ? train_toy_frame_oracle(ctx.toy_config(), 800, seed, fc)
                               : real_frame_classifier(data, fc.steps, seed);
        ClassifierConfig cc;
        cc.classes = data.labels.size();
        cc.steps = c.get_int("evaluate.classifier_steps");
        auto video_model = train_classifier({data.train, data.val}, cc, derive_seed(seed, 1)).model;

        auto synth = generate_synthetic_set(models, c.get_int("evaluate.videos_per_class"), w, derive_seed(seed, 2));
        const auto stride = c.get_int("evaluate.frame_stride");
        auto real_frames = strided_frames(data.test, stride);
        auto fake_frames = strided_frames(synth, stride);

        metrics::MetricsReport report;
        const std::string frame_id = (toy ? "toy-frame-oracle:" : "frame-classifier:") + module_hash(*frame_model);
        const std::string video_id = "toy-video-classifier:" + module_hash(*video_model);
        report.fid = metrics::frechet_distance(
            metrics::FeatureSet::from_tensor(frame_model->embed(real_frames), frame_id),
            metrics::FeatureSet::from_tensor(frame_model->embed(fake_frames), frame_id));
        std::vector<torch::Tensor> real_videos, fake_videos;
        for (int64_t i = 0; i < data.test.size(); ++i) real_videos.push_back(data.test.video(i).gray);
        for (int64_t i = 0; i < synth.size(); ++i) fake_videos.push_back(synth.video(i).gray);
        report.fvd16 = metrics::fvd16(real_videos, fake_videos, classifier_extractor(video_model, video_id));
        auto probs = frame_model->probabilities(fake_frames).to(torch::kFloat64).contiguous();
        Eigen::MatrixXd p = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            probs.data_ptr<double>(), probs.size(0), probs.size(1));
        p = p.array().colwise() / p.rowwise().sum().array();
        auto is = metrics::inception_score(p, 1);
        report.is_mean = is.mean;
        report.is_std = is.std;
        auto cls = evaluate_classifier(video_model, synth);
        report.accuracy = cls.accuracy;
        report.f1 = cls.f1;
        report.auroc = cls.auroc;
        report.extractors = {frame_id, video_id};
        report.warning = metrics::kDeskExtractorWarning;
        report.metadata = {{"dataset", ctx.dataset_root().string()},
                           {"guidance", w},
                           {"synthetic_videos", synth.size()},
                           {"real_test_videos", data.test.size()},
                           {"classification", "real-trained classifier on synthetic videos labelled by condition"},
                           {"checkpoints",
                            {{"codec", models.codec.id()},
                             {"lidm", models.lidm.hash()},
                             {"lvdm", models.lvdm.hash()},
                             {"privacy", models.privacy.hash()}}}};
        report.write((dir / "metrics.json").string());
        return report.to_json();
    });
}

namespace {

/// Balanced random subset of `n` videos (seeded).
VideoSet balanced_subset(const VideoSet& set, int64_t n, uint64_t seed, int64_t classes) {
    auto gen = diffusion::make_generator(seed);
    auto perm = torch::randperm(set.size(), gen, torch::kLong);
    std::vector<int64_t> picked;
    std::vector<int64_t> per_class(static_cast<size_t>(classes), 0);
    const int64_t quota = n / classes;
    for (int64_t k = 0; k < set.size() && static_cast<int64_t>(picked.size()) < n; ++k) {
        const auto i = perm[k].item<int64_t>();
        auto& count = per_class[static_cast<size_t>(set.label(i))];
        if (count < quota) {
            ++count;
            picked.push_back(i);
        }
    }
    std::sort(picked.begin(), picked.end());
    return set.subset(picked);
}

}  // namespace

nlohmann::json run_study(const RunContext& ctx) {
    auto data = load_dataset(ctx);
    auto models = load_models(ctx);
    return in_stage_dir(ctx, "study", [&](const fs::path& dir) {
        const auto& c = ctx.config;
        const auto name = c.get("study.name");
        if (name != "augmentation" && name != "cross_domain") {
            throw ConfigError({"study.name = " + name + ": must be augmentation or cross_domain"});
        }
        const auto base = static_cast<uint64_t>(c.get_int("study.seed"));
        ClassifierConfig cc;
        cc.classes = data.labels.size();
        cc.steps = c.get_int("study.classifier_steps");
        cc.width = c.get_int("study.classifier_width");
        StudyReport report{name, {}};
        auto add_row = [&](TrainingRegime regime, const RegimeSources& sources, uint64_t seed, double w) {
            auto resolved = resolve_regime(regime, sources);
            auto trained = train_classifier(resolved, cc, seed);
            report.rows.push_back({to_string(regime), seed, w, resolved.train.size(),
                                   evaluate_classifier(trained.model, data.test)});
        };
        const auto guidances = c.get_double_list("study.guidance");
        for (size_t g = 0; g < guidances.size(); ++g) {
            const double w = guidances[g];
            auto synth = generate_synthetic_set(models, c.get_int("study.synth_per_class"), w, derive_seed(base, g));
            for (auto seed : c.get_int_list("study.seeds")) {
                const auto s = static_cast<uint64_t>(seed);
                if (name == "augmentation") {
                    RegimeSources src;
                    src.real_train = balanced_subset(data.train, c.get_int("study.n_real"), s, data.labels.size());
                    src.real_val = data.val;
                    src.synth_train = synth;
                    add_row(TrainingRegime::real_only, src, s, w);
                    add_row(TrainingRegime::augmented, src, s, w);
                } else {
                    const auto n_val = std::max<int64_t>(
                        data.labels.size(),
                        static_cast<int64_t>(c.get_double("study.synth_val_fraction") * static_cast<double>(synth.size())));
                    std::vector<int64_t> train_idx, val_idx;
                    for (int64_t i = 0; i < synth.size(); ++i) (i < n_val ? val_idx : train_idx).push_back(i);
                    RegimeSources src;
                    src.real_train = data.train;
                    src.real_val = data.val;
                    src.synth_train = synth.subset(train_idx);
                    src.synth_val = synth.subset(val_idx);
                    if (g == 0) add_row(TrainingRegime::real_only, src, s, 0.0);
                    add_row(TrainingRegime::synth_train_real_val, src, s, w);
                    add_row(TrainingRegime::synth_train_synth_val, src, s, w);
                }
            }
        }
        write_json(dir / "report.json", report.to_json());
        write_text(dir / "report.txt", report.to_table());
        return report.to_json();
    });
}

nlohmann::json run_stage(const std::string& subcommand, const RunContext& ctx) {
    try {
        if (subcommand == "gen-toy-data") return run_gen_toy_data(ctx);
        if (subcommand == "train-codec") return run_train_codec(ctx);
        if (subcommand == "train-lidm") return run_train_lidm(ctx);
        if (subcommand == "train-reid") return run_train_reid(ctx);
        if (subcommand == "train-lvdm") return run_train_lvdm(ctx);
        if (subcommand == "sample") return run_sample(ctx);
        if (subcommand == "evaluate") return run_evaluate(ctx);
        if (subcommand == "study") return run_study(ctx);
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(subcommand, e.what());
    }
    throw ParameterError("unknown subcommand '" + subcommand + "'");
}

}  // namespace echogen

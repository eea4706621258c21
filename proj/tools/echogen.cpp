// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: one subcommand per pipeline stage.

#include <filesystem>
#include <iostream>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "echogen/errors.hpp"
#include "echogen/pipeline.hpp"

namespace {

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::string artifacts = "artifacts";
    std::string replay;
    int threads = 0;
};

echogen::ExperimentConfig load_config(const Options& o) {
    auto config = echogen::ExperimentConfig::from_file(o.config);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw echogen::ConfigError({"--set expects key=value, got '" + kv + "'"});
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return config;
}

int report_config_problems(const echogen::ConfigError& e) {
    std::cerr << "configuration invalid (" << e.problems().size() << " problem(s)):\n";
    for (const auto& p : e.problems()) std::cerr << "  - " << p << "\n";
    return 2;
}

int run(const std::string& subcommand, const Options& o) {
    if (o.threads > 0) torch::set_num_threads(o.threads);
    if (subcommand == "sample" && !o.replay.empty()) {
        auto r = echogen::replay_sample(o.artifacts, o.replay);
        for (size_t i = 0; i < std::max(r.recorded.size(), r.replayed.size()); ++i) {
            std::cout << "video " << i << ": recorded " << (i < r.recorded.size() ? r.recorded[i] : "-")
                      << " replayed " << (i < r.replayed.size() ? r.replayed[i] : "-") << "\n";
        }
        std::cout << (r.identical ? "replay identical" : "replay differs") << "\n";
        return r.identical ? 0 : 1;
    }
    echogen::RunContext ctx(load_config(o), o.artifacts);
    std::cerr << "config hash " << ctx.hash << " -> " << ctx.run_dir().string() << "\n";
    std::vector<std::string> stages{subcommand};
    if (subcommand == "run") stages = ctx.config.get_list("experiment.stages");
    for (const auto& stage : stages) {
        std::cerr << "[" << stage << "]\n";
        auto summary = echogen::run_stage(stage, ctx);
        std::cout << summary.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Echocardiogram video generation pipeline"};
    app.require_subcommand(1);
    Options o;
    std::string chosen;

    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", o.config, "Experiment INI file")->required()->check(CLI::ExistingFile);
        sub->add_option("-s,--set", o.overrides, "Override a key: section.key=value (repeatable)");
        sub->add_option("-a,--artifacts", o.artifacts, "Artifact root")->capture_default_str();
        sub->add_option("-j,--threads", o.threads, "Intra-op threads (0 = library default)");
        sub->callback([&chosen, name] { chosen = name; });
        return sub;
    };
    add("gen-toy-data", "Generate the procedural toy dataset");
    add("train-codec", "Train the frame autoencoder");
    add("train-lidm", "Train the latent image diffusion model");
    add("train-reid", "Train the re-identification embedder and calibrate the privacy filter");
    add("train-lvdm", "Train the latent video diffusion model");
    auto* sample = add("sample", "Generate videos");
    sample->add_option("--replay", o.replay, "Re-run a recorded sample stage by config hash and compare outputs");
    add("evaluate", "Compute FID, FVD16, IS and classification metrics");
    add("study", "Run the augmentation or cross-domain classifier study");
    add("run", "Run every stage listed in experiment.stages");

    // --replay reads the recorded config, so --config is optional there.
    for (auto* opt : sample->get_options()) {
        if (opt->get_name() == "--config") opt->required(false);
    }

    CLI11_PARSE(app, argc, argv);
    try {
        if (chosen != "sample" || o.replay.empty()) {
            if (o.config.empty()) throw echogen::ConfigError({"--config is required"});
        }
        return run(chosen, o);
    } catch (const echogen::ConfigError& e) {
        return report_config_problems(e);
    } catch (const echogen::StageError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

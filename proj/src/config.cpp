// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#include "echogen/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "echogen/errors.hpp"
#include "echogen/hashing.hpp"

namespace echogen {

namespace pt = boost::property_tree;

namespace {

enum class Kind { text, integer, real, boolean, int_list, real_list, list };

struct Field {
    Kind kind;
    std::optional<std::string> fallback;
    std::function<std::string(const std::string&)> check;  // returns a problem or ""
};

Field integer(std::optional<std::string> d, int64_t lo = 0) {
    return {Kind::integer, std::move(d), [lo](const std::string& v) {
                return std::stoll(v) >= lo ? "" : "must be >= " + std::to_string(lo);
            }};
}
Field positive_int(std::optional<std::string> d) { return integer(std::move(d), 1); }
Field seed(std::optional<std::string> d) { return integer(std::move(d), 0); }
Field real(std::optional<std::string> d, double lo, double hi, bool hi_open = false) {
    return {Kind::real, std::move(d), [lo, hi, hi_open](const std::string& v) -> std::string {
                const double x = std::stod(v);
                const bool ok = std::isfinite(x) && x >= lo && (hi_open ? x < hi : x <= hi);
                if (ok) return "";
                std::ostringstream os;
                os << "must lie in [" << lo << ", " << hi << (hi_open ? ")" : "]");
                return os.str();
            }};
}
Field positive_real(std::optional<std::string> d) {
    return {Kind::real, std::move(d),
            [](const std::string& v) { return std::stod(v) > 0.0 ? "" : std::string("must be > 0"); }};
}
Field text(std::optional<std::string> d) { return {Kind::text, std::move(d), nullptr}; }
Field boolean(std::optional<std::string> d) { return {Kind::boolean, std::move(d), nullptr}; }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = [] {
        std::map<std::string, Field> m;
        const auto none = std::nullopt;
        m.emplace("experiment.name", text(none));
        m.emplace("experiment.seed", seed(none));
        m.emplace("experiment.stages", Field{Kind::list, "gen-toy-data,train-codec,train-lidm,train-reid,train-lvdm,sample", nullptr});

        m.emplace("data.root", text(""));
        m.emplace("data.manifest", text(""));
        m.emplace("data.n_per_class", positive_int("120"));
        m.emplace("data.classes", text("control:0:0:1;defect:4:8:3"));
        m.emplace("data.noise", real("0.02", 0.0, 1.0));
        m.emplace("data.texture", real("0.15", 0.0, 1.0));
        m.emplace("data.max_dropouts", integer("2"));
        m.emplace("data.frames", positive_int("64"));
        m.emplace("data.seed", seed("7"));
        m.emplace("data.min_margin", real("2", 0.0, 1e9));
        m.emplace("data.train_fraction", real("0.6", 0.0, 1.0));
        m.emplace("data.val_fraction", real("0.1", 0.0, 1.0));

        m.emplace("schedule.T", positive_int(none));
        m.emplace("schedule.shape", text(none));
        m.emplace("schedule.beta_start", real(none, 0.0, 1.0, true));
        m.emplace("schedule.beta_end", real(none, 0.0, 1.0, true));

        m.emplace("codec.checkpoint", text(""));
        m.emplace("codec.latent_channels", positive_int("4"));
        m.emplace("codec.steps", positive_int("1200"));
        m.emplace("codec.batch_size", positive_int("16"));
        m.emplace("codec.learning_rate", positive_real("1e-3"));
        m.emplace("codec.kl_weight", real("1e-6", 0.0, 1.0));
        m.emplace("codec.frame_stride", positive_int("2"));
        m.emplace("codec.min_frames", positive_int("1000"));
        m.emplace("codec.seed", seed("11"));

        for (const std::string s : {"lidm", "lvdm"}) {
            m.emplace(s + ".checkpoint", text(""));
            m.emplace(s + ".learning_rate", positive_real("1e-3"));
            m.emplace(s + ".dropout_p", real("0.1", 0.0, 1.0, true));
            m.emplace(s + ".sample_stride", positive_int("20"));
            m.emplace(s + ".warmup", integer("100"));
            m.emplace(s + ".probe_every", positive_int("250"));
        }
        m.emplace("lidm.steps", positive_int("3000"));
        m.emplace("lidm.batch_size", positive_int("64"));
        m.emplace("lidm.channels", positive_int("48"));
        m.emplace("lidm.inner_channels", positive_int("64"));
        m.emplace("lidm.seed", seed("21"));
        m.emplace("lvdm.steps", positive_int("1500"));
        m.emplace("lvdm.batch_size", positive_int("4"));
        m.emplace("lvdm.channels", positive_int("32"));
        m.emplace("lvdm.inner_channels", positive_int("48"));
        m.emplace("lvdm.seed", seed("31"));

        m.emplace("reid.checkpoint", text(""));
        m.emplace("reid.embed_dim", positive_int("128"));
        m.emplace("reid.steps", positive_int("500"));
        m.emplace("reid.learning_rate", positive_real("1e-3"));
        m.emplace("reid.temperature", positive_real("0.1"));
        m.emplace("reid.videos_per_batch", positive_int("16"));
        m.emplace("reid.frames_per_video", positive_int("4"));
        m.emplace("reid.target_fpr", real("0.05", 0.0, 1.0));
        m.emplace("reid.seed", seed("5"));
        m.emplace("reid.calibration_videos_per_class", integer("1000"));
        m.emplace("reid.calibration_frame_stride", positive_int("4"));

        m.emplace("sample.label", Field{Kind::list, none, nullptr});
        m.emplace("sample.count", positive_int("1"));
        m.emplace("sample.guidance", real(none, 0.0, 1e6));
        m.emplace("sample.lidm_guidance", Field{Kind::real, "", nullptr});
        m.emplace("sample.blocks", positive_int(none));
        m.emplace("sample.seed", seed(none));
        m.emplace("sample.max_attempts", positive_int("8"));

        m.emplace("evaluate.videos_per_class", positive_int("16"));
        m.emplace("evaluate.guidance", real("5", 0.0, 1e6));
        m.emplace("evaluate.seed", seed("77"));
        m.emplace("evaluate.classifier_steps", positive_int("300"));
        m.emplace("evaluate.frame_classifier_steps", positive_int("400"));
        m.emplace("evaluate.frame_stride", positive_int("4"));

        m.emplace("study.name", text("augmentation"));
        m.emplace("study.seeds", Field{Kind::int_list, "1,2,3,4,5", nullptr});
        m.emplace("study.n_real", positive_int("32"));
        m.emplace("study.synth_per_class", positive_int("32"));
        m.emplace("study.guidance", Field{Kind::real_list, "5", nullptr});
        m.emplace("study.classifier_steps", positive_int("300"));
        m.emplace("study.classifier_width", positive_int("16"));
        m.emplace("study.synth_val_fraction", real("0.1", 0.0, 1.0, true));
        m.emplace("study.seed", seed("99"));
        return m;
    }();
    return f;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parses_as(Kind kind, const std::string& v) {
    try {
        size_t pos = 0;
        switch (kind) {
            case Kind::integer: std::stoll(v, &pos); return pos == v.size();
            case Kind::real: std::stod(v, &pos); return pos == v.size();
            case Kind::boolean: return v == "true" || v == "false" || v == "1" || v == "0";
            case Kind::int_list:
                for (const auto& x : split_list(v)) {
                    if (!parses_as(Kind::integer, x)) return false;
                }
                return true;
            case Kind::real_list:
                for (const auto& x : split_list(v)) {
                    if (!parses_as(Kind::real, x)) return false;
                }
                return true;
            default: return true;
        }
    } catch (const std::exception&) {
        return false;
    }
}

ExperimentConfig from_ptree(const pt::ptree& tree) {
    ExperimentConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            c.set(section, body.data());
            continue;
        }
        for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
    }
    return c;
}

}  // namespace

const std::map<std::string, std::optional<std::string>>& config_schema() {
    static const auto schema = [] {
        std::map<std::string, std::optional<std::string>> s;
        for (const auto& [k, f] : fields()) s[k] = f.fallback;
        return s;
    }();
    return schema;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    pt::ptree tree;
    try {
        pt::read_ini(path, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({std::string("cannot parse ") + path + ": " + e.what()});
    }
    return from_ptree(tree);
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({std::string("cannot parse config: ") + e.what()});
    }
    return from_ptree(tree);
}

std::optional<std::string> ExperimentConfig::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string ExperimentConfig::get(const std::string& key) const {
    auto f = fields().find(key);
    if (f == fields().end()) throw ConfigError({"unknown config field '" + key + "'"});
    if (auto v = raw(key)) return *v;
    if (!f->second.fallback) throw ConfigError({"required field '" + key + "' is missing"});
    return *f->second.fallback;
}

int64_t ExperimentConfig::get_int(const std::string& key) const {
    const auto v = get(key);
    if (!parses_as(Kind::integer, v)) throw ConfigError({key + ": '" + v + "' is not an integer"});
    return std::stoll(v);
}

double ExperimentConfig::get_double(const std::string& key) const {
    const auto v = get(key);
    if (!parses_as(Kind::real, v)) throw ConfigError({key + ": '" + v + "' is not a number"});
    return std::stod(v);
}

bool ExperimentConfig::get_bool(const std::string& key) const {
    const auto v = get(key);
    return v == "true" || v == "1";
}

std::vector<std::string> ExperimentConfig::get_list(const std::string& key) const { return split_list(get(key)); }

std::vector<int64_t> ExperimentConfig::get_int_list(const std::string& key) const {
    std::vector<int64_t> out;
    for (const auto& x : get_list(key)) out.push_back(std::stoll(x));
    return out;
}

std::vector<double> ExperimentConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& x : get_list(key)) out.push_back(std::stod(x));
    return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { values_[key] = trim(value); }

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> problems;
    for (const auto& [key, value] : values_) {
        if (!fields().count(key)) problems.push_back("unknown field '" + key + "'");
    }
    for (const auto& [key, field] : fields()) {
        auto v = raw(key);
        if (!v) {
            if (!field.fallback) problems.push_back("required field '" + key + "' is missing");
            continue;
        }
        if (v->empty() && field.fallback && field.fallback->empty()) continue;
        if (!parses_as(field.kind, *v)) {
            problems.push_back(key + ": '" + *v + "' has the wrong type");
            continue;
        }
        if (field.check && !v->empty()) {
            auto problem = field.check(*v);
            if (!problem.empty()) problems.push_back(key + " = " + *v + ": " + problem);
        }
    }
    auto start = raw("schedule.beta_start"), end = raw("schedule.beta_end");
    if (start && end && parses_as(Kind::real, *start) && parses_as(Kind::real, *end) &&
        std::stod(*start) > std::stod(*end)) {
        problems.push_back("schedule.beta_start must not exceed schedule.beta_end");
    }
    if (auto shape = raw("schedule.shape");
        shape && *shape != "linear" && *shape != "cosine" && *shape != "cosine-like") {
        problems.push_back("schedule.shape = " + *shape + ": must be linear or cosine");
    }
    if (auto lg = raw("sample.lidm_guidance"); lg && !lg->empty() && parses_as(Kind::real, *lg) && std::stod(*lg) < 0) {
        problems.push_back("sample.lidm_guidance = " + *lg + ": must be >= 0");
    }
    for (const auto& key : {"codec.checkpoint", "lidm.checkpoint", "lvdm.checkpoint", "reid.checkpoint",
                            "data.manifest"}) {
        if (auto path = raw(key); path && !path->empty()) {
            std::ifstream probe(*path);
            if (!probe) problems.push_back(std::string(key) + ": file '" + *path + "' does not exist");
        }
    }
    return problems;
}

void ExperimentConfig::require_valid() const {
    auto problems = validate();
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string ExperimentConfig::resolved_text() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [key, field] : fields()) {
        const auto dot = key.find('.');
        const auto s = key.substr(0, dot);
        if (s != section) {
            os << (section.empty() ? "" : "\n") << "[" << s << "]\n";
            section = s;
        }
        auto v = raw(key);
        os << key.substr(dot + 1) << " = " << (v ? *v : field.fallback.value_or("")) << "\n";
    }
    return os.str();
}

std::string ExperimentConfig::hash() const {
    ContentHasher h;
    h.update(resolved_text());
    return h.hex();
}

}  // namespace echogen

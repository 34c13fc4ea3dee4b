#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../fusion/model.hpp"
#include "../hier/tokenizer.hpp"
#include "../hier/vit.hpp"
#include "../interpret/explain.hpp"
#include "../roi/segmentation.hpp"
#include "../summarize/train.hpp"
#include "../synth/generator.hpp"

namespace vitas::pipeline {

struct SegmentConfig {
    int shift = 32;
    int bias = 16;
    int close_kernel = 5;
    double threshold = 0.5;
    std::array<double, 4> box_frac = {0.20, 0.10, 0.80, 0.90}; // x1,y1,x2,y2 fractions
};

struct ClassifierStageConfig {
    fusion::FusionConfig model;
    fusion::ClsTrainConfig train;
};

struct SummarizerStageConfig {
    summarize::SummarizerConfig model;
    summarize::SumTrainConfig train;
    std::size_t max_text_len = 48;
    std::size_t beam = 1;
    std::size_t gen_max_len = 64;
};

// One experiment of record: every stage reads from this single config.
struct PipelineConfig {
    std::uint64_t seed = 1;
    std::size_t threads = 2;
    std::string out_dir = "runs/experiment";

    std::size_t data_n = 1000;
    std::array<double, 3> ratios = {0.8, 0.1, 0.1};
    synth::SynthConfig data;

    SegmentConfig segment;
    ClassifierStageConfig classifier;
    interpret::ExplainConfig explain;
    hier::ViTConfig vit;
    hier::TokenizerConfig tokenizer;
    SummarizerStageConfig summarizer;

    std::vector<std::string> run_modes = {"text-only", "full-image", "vitas"};
    std::vector<std::uint64_t> run_seeds = {1, 2, 3};
};

namespace detail {

template <typename T>
void get_to_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

} // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using detail::get_to_if;
    PipelineConfig pc;
    get_to_if(j, "seed", pc.seed);
    get_to_if(j, "threads", pc.threads);
    get_to_if(j, "out_dir", pc.out_dir);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_to_if(d, "n", pc.data_n);
        if (d.contains("ratios")) {
            auto r = d.at("ratios").get<std::vector<double>>();
            for (std::size_t i = 0; i < 3 && i < r.size(); ++i) pc.ratios[i] = r[i];
        }
        get_to_if(d, "img_side", pc.data.img_side);
        if (d.contains("class_priors")) {
            auto p = d.at("class_priors").get<std::vector<double>>();
            for (std::size_t i = 0; i < synth::kNumClasses && i < p.size(); ++i)
                pc.data.class_priors[i] = p[i];
        }
        get_to_if(d, "missing_lateral_prob", pc.data.missing_lateral_prob);
        get_to_if(d, "blob_r_min", pc.data.blob_r_min);
        get_to_if(d, "blob_r_max", pc.data.blob_r_max);
        get_to_if(d, "min_contrast", pc.data.min_contrast);
        get_to_if(d, "max_negations", pc.data.max_negations);
    }
    if (j.contains("segment")) {
        const auto& s = j.at("segment");
        get_to_if(s, "shift", pc.segment.shift);
        get_to_if(s, "bias", pc.segment.bias);
        get_to_if(s, "close_kernel", pc.segment.close_kernel);
        get_to_if(s, "threshold", pc.segment.threshold);
        if (s.contains("box")) {
            auto b = s.at("box").get<std::vector<double>>();
            for (std::size_t i = 0; i < 4 && i < b.size(); ++i) pc.segment.box_frac[i] = b[i];
        }
    }
    if (j.contains("classifier")) {
        const auto& c = j.at("classifier");
        auto& m = pc.classifier.model;
        get_to_if(c, "input_side", m.input_side);
        get_to_if(c, "patch", m.patch);
        get_to_if(c, "dim", m.dim);
        get_to_if(c, "heads", m.heads);
        get_to_if(c, "pre_stages", m.pre_stages);
        get_to_if(c, "fusion_layers", m.fusion_layers);
        get_to_if(c, "post_stages", m.post_stages);
        get_to_if(c, "ffn_mult", m.ffn_mult);
        get_to_if(c, "feature_dim", m.feature_dim);
        auto& t = pc.classifier.train;
        get_to_if(c, "epochs", t.epochs);
        get_to_if(c, "batch", t.batch);
        get_to_if(c, "lr", t.lr);
        get_to_if(c, "weight_decay", t.weight_decay);
        get_to_if(c, "warmup_steps", t.warmup_steps);
        get_to_if(c, "target_val_auroc", t.target_val_auroc);
    }
    if (j.contains("explain")) {
        const auto& e = j.at("explain");
        get_to_if(e, "topk", pc.explain.topk_percent);
        get_to_if(e, "eps", pc.explain.eps);
        get_to_if(e, "min_pts", pc.explain.min_pts);
        get_to_if(e, "n_total", pc.explain.n_total);
        get_to_if(e, "heatmap", pc.explain.heatmap_source);
    }
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        get_to_if(t, "d_vit", pc.vit.dim);
        get_to_if(t, "vit_depth", pc.vit.depth);
        get_to_if(t, "vit_heads", pc.vit.heads);
        get_to_if(t, "view_tokens", pc.tokenizer.view_tokens);
        get_to_if(t, "geom_hidden", pc.tokenizer.geom_hidden);
    }
    if (j.contains("summarizer")) {
        const auto& s = j.at("summarizer");
        auto& m = pc.summarizer.model;
        get_to_if(s, "d_model", m.d_model);
        get_to_if(s, "heads", m.heads);
        get_to_if(s, "enc_layers", m.enc_layers);
        get_to_if(s, "dec_layers", m.dec_layers);
        get_to_if(s, "ffn_mult", m.ffn_mult);
        get_to_if(s, "label_smoothing", m.label_smoothing);
        get_to_if(s, "max_target_len", m.max_target_len);
        auto& t = pc.summarizer.train;
        get_to_if(s, "epochs", t.epochs);
        get_to_if(s, "batch", t.batch);
        get_to_if(s, "lr", t.lr);
        get_to_if(s, "weight_decay", t.weight_decay);
        get_to_if(s, "warmup_steps", t.warmup_steps);
        get_to_if(s, "max_text_len", pc.summarizer.max_text_len);
        get_to_if(s, "beam", pc.summarizer.beam);
        get_to_if(s, "gen_max_len", pc.summarizer.gen_max_len);
    }
    if (j.contains("run")) {
        const auto& r = j.at("run");
        get_to_if(r, "modes", pc.run_modes);
        get_to_if(r, "seeds", pc.run_seeds);
    }
    // derived couplings
    pc.tokenizer.d_vit = pc.vit.dim;
    pc.tokenizer.d_dec = pc.summarizer.model.d_model;
    pc.tokenizer.vit_grid = pc.vit.grid_side();
    return pc;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    return config_from_json(j);
}

// type/range checks for every key; returns human-readable violations
inline std::vector<std::string> validate_config(const PipelineConfig& pc) {
    std::vector<std::string> bad;
    auto require = [&bad](bool ok, const std::string& msg) {
        if (!ok) bad.push_back(msg);
    };
    require(pc.threads >= 1, "threads must be >= 1");
    require(pc.data_n >= 3, "data.n must be >= 3 to populate all splits");
    double rsum = pc.ratios[0] + pc.ratios[1] + pc.ratios[2];
    require(std::abs(rsum - 1.0) <= 1e-9,
            "data.ratios must sum to 1 (got " + std::to_string(rsum) + ")");
    for (double r : pc.ratios) require(r >= 0.0, "data.ratios entries must be >= 0");
    require(pc.data.img_side > 0, "data.img_side must be positive");
    for (double p : pc.data.class_priors)
        require(p >= 0.0 && p <= 1.0, "data.class_priors must lie in [0,1]");
    require(pc.data.missing_lateral_prob >= 0.0 && pc.data.missing_lateral_prob <= 1.0,
            "data.missing_lateral_prob must lie in [0,1]");
    require(pc.data.blob_r_min > 0.0 && pc.data.blob_r_max >= pc.data.blob_r_min,
            "data blob radius range invalid");
    require(pc.segment.shift > 0, "segment.shift must be > 0");
    require(pc.segment.bias >= 0, "segment.bias must be >= 0");
    require(pc.segment.close_kernel >= 1 && pc.segment.close_kernel % 2 == 1,
            "segment.close_kernel must be odd and >= 1");
    require(pc.segment.threshold > 0.0 && pc.segment.threshold < 1.0,
            "segment.threshold must be in (0,1)");
    require(pc.segment.box_frac[0] >= 0.0 && pc.segment.box_frac[0] < pc.segment.box_frac[2] &&
                pc.segment.box_frac[2] <= 1.0 && pc.segment.box_frac[1] >= 0.0 &&
                pc.segment.box_frac[1] < pc.segment.box_frac[3] && pc.segment.box_frac[3] <= 1.0,
            "segment.box fractions must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
    try {
        pc.classifier.model.validate();
    } catch (const std::exception& e) {
        bad.push_back(std::string("classifier: ") + e.what());
    }
    require(pc.classifier.train.epochs >= 1, "classifier.epochs must be >= 1");
    require(pc.classifier.train.batch >= 1, "classifier.batch must be >= 1");
    require(pc.classifier.train.lr >= 0.0, "classifier.lr must be >= 0");
    require(pc.explain.eps > 0.0, "explain.eps must be > 0");
    require(pc.explain.min_pts >= 1, "explain.min_pts must be >= 1");
    require(pc.explain.topk_percent > 0.0 && pc.explain.topk_percent <= 100.0,
            "explain.topk must be in (0,100]");
    require(pc.explain.heatmap_source == "grad" || pc.explain.heatmap_source == "attention",
            "explain.heatmap must be 'grad' or 'attention'");
    try {
        pc.vit.validate();
    } catch (const std::exception& e) {
        bad.push_back(std::string("tokenizer/vit: ") + e.what());
    }
    require(pc.tokenizer.view_tokens >= 1, "tokenizer.view_tokens must be >= 1");
    try {
        pc.summarizer.model.validate();
    } catch (const std::exception& e) {
        bad.push_back(std::string("summarizer: ") + e.what());
    }
    require(pc.summarizer.train.epochs >= 1, "summarizer.epochs must be >= 1");
    require(pc.summarizer.beam >= 1, "summarizer.beam must be >= 1");
    require(pc.summarizer.gen_max_len >= 1, "summarizer.gen_max_len must be >= 1");
    require(!pc.run_seeds.empty(), "run.seeds must be non-empty");
    require(!pc.run_modes.empty(), "run.modes must be non-empty");
    for (const auto& m : pc.run_modes) {
        try {
            summarize::mode_from_string(m);
        } catch (const std::exception&) {
            bad.push_back("run.modes contains unknown mode '" + m + "'");
        }
    }
    return bad;
}

} // namespace vitas::pipeline

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "../core/serialize.hpp"
#include "clustering.hpp"

namespace vitas::interpret {

struct ExplainConfig {
    double topk_percent = 25.0;
    double eps = 1.8;
    int min_pts = 4;
    std::size_t n_total = 13;      // patch budget split by Shapley percentages
    std::string heatmap_source = "grad"; // "grad" | "attention"
    int forced_class = -1;         // -1: explain the argmax class

    void validate() const {
        if (topk_percent <= 0.0 || topk_percent > 100.0)
            throw InputError("topk must be in (0,100]");
        if (eps <= 0.0) throw InputError("eps must be > 0");
        if (min_pts < 1) throw InputError("min_pts must be >= 1");
        if (heatmap_source != "grad" && heatmap_source != "attention")
            throw InputError("heatmap_source must be grad or attention");
    }
};

struct SampleExplanation {
    int cls = 0;
    bool has_lateral = false;
    AttentionMap heat_f, heat_l;
    ClusterSet clusters_f, clusters_l;
    CoalitionValues coalition;
    double phi_f = 0.0, phi_l = 0.0;
    double pi_f = 100.0, pi_l = 0.0;
    PatchBudget budget;
    std::vector<GridPoint> selected_f, selected_l;
};

inline SampleExplanation explain_sample(const fusion::FusionModel& model,
                                        const fusion::SampleViews& views,
                                        const ExplainConfig& ec) {
    ec.validate();
    SampleExplanation ex;
    ex.has_lateral = views.lateral.has_value();

    if (ec.forced_class >= 0) {
        ex.cls = ec.forced_class;
    } else {
        NoGradGuard ng;
        auto res = model.forward(views);
        const auto& p = res.probs->value.data;
        ex.cls = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }

    if (ec.heatmap_source == "grad") {
        ex.heat_f = grad_weighted_heatmap(model, views, ex.cls, View::Frontal);
        if (ex.has_lateral)
            ex.heat_l = grad_weighted_heatmap(model, views, ex.cls, View::Lateral);
    } else {
        NoGradGuard ng;
        auto res = model.forward(views);
        // importance of frontal patches = attention received from lateral queries
        ex.heat_f = extract_heatmap(res.attn_l_to_f->value, View::Frontal);
        if (ex.has_lateral)
            ex.heat_l = extract_heatmap(res.attn_f_to_l->value, View::Lateral);
    }

    ex.coalition = coalition_values(model, views, ex.cls);
    auto phi = shapley_two_player(ex.coalition);
    ex.phi_f = phi.phi_f;
    ex.phi_l = phi.phi_l;
    if (ex.has_lateral) {
        auto pct = to_percentages(phi.phi_f, phi.phi_l);
        ex.pi_f = pct.pi_f;
        ex.pi_l = pct.pi_l;
    } else {
        ex.pi_f = 100.0;
        ex.pi_l = 0.0;
    }
    ex.budget = allocate_patch_budget(ec.n_total, ex.pi_f);

    ex.clusters_f = dbscan_cluster(select_top_k(ex.heat_f, ec.topk_percent), ec.eps, ec.min_pts);
    ex.selected_f = select_view_patches(ex.clusters_f, ex.heat_f, ex.budget.n_f);
    if (ex.has_lateral) {
        ex.clusters_l =
            dbscan_cluster(select_top_k(ex.heat_l, ec.topk_percent), ec.eps, ec.min_pts);
        ex.selected_l = select_view_patches(ex.clusters_l, ex.heat_l, ex.budget.n_l);
    }
    return ex;
}

// ---- artifact export ----

inline nlohmann::json clusters_to_json(const ClusterSet& cs, View view) {
    nlohmann::json j;
    j["view"] = view_name(view);
    j["eps"] = cs.eps;
    j["min_pts"] = cs.min_pts;
    j["num_clusters"] = cs.num_clusters;
    j["points"] = nlohmann::json::array();
    for (std::size_t i = 0; i < cs.points.size(); ++i)
        j["points"].push_back({{"r", cs.points[i].r},
                               {"c", cs.points[i].c},
                               {"score", cs.points[i].score},
                               {"label", cs.labels[i]}});
    return j;
}

inline void save_heatmap(const AttentionMap& map, const std::string& stem) {
    save_float_blob(map.scores, {map.g, map.g}, stem,
                    {{"view", view_name(map.view)}, {"normalized", map.normalized}});
}

// nearest-neighbor upscale blended onto the source image
inline void save_heatmap_overlay(const AttentionMap& map, const ImageGrid& img,
                                 const std::string& path) {
    double peak = 0.0;
    for (double v : map.scores) peak = std::max(peak, v);
    if (peak <= 0.0) peak = 1.0;
    ImageGrid out(img.h, img.w, img.view);
    for (std::size_t r = 0; r < img.h; ++r)
        for (std::size_t c = 0; c < img.w; ++c) {
            std::size_t mr = r * map.g / img.h;
            std::size_t mc = c * map.g / img.w;
            double h = map.at(mr, mc) / peak;
            out.at(r, c) = 0.45 * img.at(r, c) + 0.55 * h;
        }
    write_png_gray(out, path);
}

inline nlohmann::json explanation_to_json(const SampleExplanation& ex) {
    nlohmann::json j;
    j["class"] = ex.cls;
    j["coalition"] = {{"v_empty", ex.coalition.v_empty},
                      {"v_f", ex.coalition.v_f},
                      {"v_l", ex.coalition.v_l},
                      {"v_fl", ex.coalition.v_fl}};
    j["phi_f"] = ex.phi_f;
    j["phi_l"] = ex.phi_l;
    j["pi_f"] = ex.pi_f;
    j["pi_l"] = ex.pi_l;
    j["budget"] = {{"n_f", ex.budget.n_f}, {"n_l", ex.budget.n_l}, {"n_total", ex.budget.n_total}};
    auto pts = [](const std::vector<GridPoint>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& p : v) a.push_back({{"r", p.r}, {"c", p.c}, {"score", p.score}});
        return a;
    };
    j["selected_f"] = pts(ex.selected_f);
    j["selected_l"] = pts(ex.selected_l);
    return j;
}

} // namespace vitas::interpret

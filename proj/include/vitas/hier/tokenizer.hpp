#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>

#include "../interpret/clustering.hpp"
#include "vit.hpp"

namespace vitas::hier {

using interpret::AttentionMap;
using interpret::InputError;

enum class TokenType : std::uint8_t { Global, Cluster, Extra, Pad };

struct TokenizerConfig {
    std::size_t d_vit = 64;
    std::size_t d_dec = 128;     // decoder embedding dim; paper-scale 512 accepted
    std::size_t vit_grid = 14;
    std::size_t view_tokens = 64;
    std::size_t geom_hidden = 32;
};

// all components normalized into [0,1]
struct GeometryFeatures {
    double centroid_r = 0, centroid_c = 0;
    double extent_h = 0, extent_w = 0;
    double size = 0;
    double mean_attention = 0;
};

// one cluster on the ViT grid: member cells with attention scores
struct VitCluster {
    std::vector<std::pair<int, int>> cells;
    std::vector<double> scores;
};

struct ViewTokens {
    Var tokens; // (view_tokens, d_dec)
    std::vector<TokenType> types;
    std::vector<int> mask; // 1 = attendable, 0 = pad
    View view = View::Frontal;
};

struct VisualTokenSequence {
    Var tokens; // (2*view_tokens, d_dec)
    std::vector<TokenType> types;
    std::vector<int> mask;
    std::vector<View> source_view;
};

inline GeometryFeatures geometry_features(const VitCluster& cluster, std::size_t g) {
    if (cluster.cells.empty()) throw InputError("empty cluster");
    GeometryFeatures f;
    int min_r = cluster.cells[0].first, max_r = min_r;
    int min_c = cluster.cells[0].second, max_c = min_c;
    double sum_r = 0, sum_c = 0, sum_a = 0;
    for (std::size_t i = 0; i < cluster.cells.size(); ++i) {
        auto [r, c] = cluster.cells[i];
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
        sum_r += r;
        sum_c += c;
        sum_a += cluster.scores.empty() ? 0.0 : cluster.scores[i];
    }
    double n = static_cast<double>(cluster.cells.size());
    double denom = g > 1 ? static_cast<double>(g - 1) : 1.0;
    f.centroid_r = (sum_r / n) / denom;
    f.centroid_c = (sum_c / n) / denom;
    f.extent_h = static_cast<double>(max_r - min_r + 1) / static_cast<double>(g);
    f.extent_w = static_cast<double>(max_c - min_c + 1) / static_cast<double>(g);
    f.size = n / static_cast<double>(g * g);
    f.mean_attention = std::clamp(sum_a / n, 0.0, 1.0);
    return f;
}

struct HierTokenizer {
    TokenizerConfig cfg;
    Dense proj;         // D_vit -> D_dec
    Dense geom_fc1, geom_fc2;
    Var e_view_f, e_view_l;
    Var e_type_global, e_type_cluster, e_type_extra;
    Var pad_token, missing_view_token;
    Var w_img, w_txt; // bilinear selector forms (d_dec, d_dec)

    HierTokenizer() = default;
    HierTokenizer(ParamStore& ps, const std::string& name, const TokenizerConfig& c, Rng& rng)
        : cfg(c), proj(ps, name + ".proj", c.d_vit, c.d_dec, rng),
          geom_fc1(ps, name + ".geom1", 6, c.geom_hidden, rng),
          geom_fc2(ps, name + ".geom2", c.geom_hidden, c.d_dec, rng),
          e_view_f(ps.add(name + ".view_f", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          e_view_l(ps.add(name + ".view_l", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          e_type_global(ps.add(name + ".type_g", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          e_type_cluster(ps.add(name + ".type_c", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          e_type_extra(ps.add(name + ".type_e", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          pad_token(ps.add(name + ".pad", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          missing_view_token(
              ps.add(name + ".missing", init::gaussian(rng, {1, c.d_dec}, 0.02))),
          w_img(ps.add(name + ".w_img", init::glorot(rng, c.d_dec, c.d_dec))),
          w_txt(ps.add(name + ".w_txt", init::glorot(rng, c.d_dec, c.d_dec))) {}

    const Var& view_embedding(View v) const {
        return v == View::Frontal ? e_view_f : e_view_l;
    }

    // per-token affine map into the decoder embedding space
    Var project_tokens(const Var& vit_tokens) const { return proj(vit_tokens); }

    // CLS + view embedding + type embedding, exact three-term sum
    Var build_global_token(const Var& projected, View view) const {
        Var cls = slice(projected, 0, 0, 1);
        return add(add(cls, view_embedding(view)), e_type_global);
    }

    Var geometry_embedding(const GeometryFeatures& f) const {
        Tensor feat({1, 6});
        feat.data = {f.centroid_r, f.centroid_c, f.extent_h, f.extent_w, f.size,
                     f.mean_attention};
        return geom_fc2(gelu(geom_fc1(constant(feat))));
    }

    // attention-weighted member aggregation + geometry + view + type embeddings
    Var build_cluster_token(const VitCluster& cluster, const Var& projected, View view) const {
        if (cluster.cells.empty()) throw InputError("empty cluster");
        std::size_t g = cfg.vit_grid;
        std::vector<std::size_t> rows;
        for (auto [r, c] : cluster.cells) {
            if (r < 0 || c < 0 || r >= static_cast<int>(g) || c >= static_cast<int>(g))
                throw InputError("cluster cell outside the vit grid");
            rows.push_back(1 + static_cast<std::size_t>(r) * g + static_cast<std::size_t>(c));
        }
        // softmax over member attention scores
        std::size_t k = rows.size();
        Tensor w({1, k});
        double mx = -1e300;
        for (std::size_t i = 0; i < k; ++i)
            mx = std::max(mx, cluster.scores.empty() ? 0.0 : cluster.scores[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double s = cluster.scores.empty() ? 0.0 : cluster.scores[i];
            w.data[i] = std::exp(s - mx);
            sum += w.data[i];
        }
        for (auto& v : w.data) v /= sum;

        Var members = gather_rows(projected, rows);
        Var agg = matmul(constant(w), members); // (1, d_dec)
        Var geom = geometry_embedding(geometry_features(cluster, g));
        return add(add(add(agg, geom), view_embedding(view)), e_type_cluster);
    }

    // bilinear relevance of candidate patch embeddings against the global
    // token (and optionally the mean-pooled findings embedding)
    Var score_candidates(const Var& candidates, const Var& global_token,
                         const Var* text_summary) const {
        Var s = matmul_nt(matmul(candidates, w_img), global_token); // (k,1)
        if (text_summary)
            s = add(s, matmul_nt(matmul(candidates, w_txt), *text_summary));
        return s;
    }

    struct RankedExtra {
        std::size_t grid_index; // r*g + c
        double score;
    };

    // deterministic ranking: score desc, then row-major grid index
    std::vector<RankedExtra> score_extra_patches(const std::vector<std::size_t>& candidate_cells,
                                                 const Var& projected, const Var& global_token,
                                                 const Var* text_summary) const {
        std::vector<RankedExtra> out;
        if (candidate_cells.empty()) return out;
        std::vector<std::size_t> rows;
        for (auto cell : candidate_cells) rows.push_back(1 + cell);
        Var cand;
        double const* scores = nullptr;
        Tensor score_vals;
        {
            NoGradGuard ng; // ranking is value-only; selection is straight-through
            cand = gather_rows(constant(projected->value), rows);
            Var g_const = constant(global_token->value);
            std::optional<Var> t_const;
            if (text_summary) t_const = constant((*text_summary)->value);
            Var s = score_candidates(cand, g_const, text_summary ? &*t_const : nullptr);
            score_vals = s->value;
            scores = score_vals.data.data();
        }
        for (std::size_t i = 0; i < candidate_cells.size(); ++i)
            out.push_back({candidate_cells[i], scores[i]});
        std::sort(out.begin(), out.end(), [](const RankedExtra& a, const RankedExtra& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.grid_index < b.grid_index;
        });
        return out;
    }

    Var extra_token(const Var& projected, std::size_t grid_index, View view) const {
        Var patch = gather_rows(projected, {1 + grid_index});
        return add(add(patch, view_embedding(view)), e_type_extra);
    }

    // [global] + clusters (member count desc) + extras, truncated/padded to
    // the fixed per-view budget; a missing view is one missing-view global
    // slot plus pads
    ViewTokens assemble_view_tokens(const std::optional<Var>& projected,
                                    const std::vector<VitCluster>& clusters,
                                    const std::vector<RankedExtra>& ranked_extras,
                                    View view) const {
        const std::size_t budget = cfg.view_tokens;
        ViewTokens out;
        out.view = view;
        if (!projected.has_value()) {
            std::vector<Var> parts;
            parts.push_back(missing_view_token);
            out.types.push_back(TokenType::Global);
            out.mask.push_back(1);
            for (std::size_t i = 1; i < budget; ++i) {
                parts.push_back(pad_token);
                out.types.push_back(TokenType::Pad);
                out.mask.push_back(0);
            }
            out.tokens = concat(parts, 0);
            return out;
        }

        // clusters by member count desc, stable (original order breaks ties)
        std::vector<std::size_t> cluster_order(clusters.size());
        std::iota(cluster_order.begin(), cluster_order.end(), 0);
        std::stable_sort(cluster_order.begin(), cluster_order.end(),
                         [&](std::size_t a, std::size_t b) {
                             return clusters[a].cells.size() > clusters[b].cells.size();
                         });
        std::size_t n_clusters = std::min(clusters.size(), budget - 1);

        std::vector<Var> parts;
        parts.push_back(build_global_token(*projected, view));
        out.types.push_back(TokenType::Global);
        out.mask.push_back(1);
        for (std::size_t i = 0; i < n_clusters; ++i) {
            parts.push_back(build_cluster_token(clusters[cluster_order[i]], *projected, view));
            out.types.push_back(TokenType::Cluster);
            out.mask.push_back(1);
        }
        for (const auto& ex : ranked_extras) {
            if (parts.size() >= budget) break;
            parts.push_back(extra_token(*projected, ex.grid_index, view));
            out.types.push_back(TokenType::Extra);
            out.mask.push_back(1);
        }
        while (parts.size() < budget) {
            parts.push_back(pad_token);
            out.types.push_back(TokenType::Pad);
            out.mask.push_back(0);
        }
        out.tokens = concat(parts, 0);
        return out;
    }

    VisualTokenSequence build_visual_sequence(const ViewTokens& f, const ViewTokens& l) const {
        if (f.types.size() != cfg.view_tokens || l.types.size() != cfg.view_tokens)
            throw fusion::DimensionError("view token counts must equal the per-view budget");
        VisualTokenSequence seq;
        seq.tokens = concat({f.tokens, l.tokens}, 0);
        seq.types = f.types;
        seq.types.insert(seq.types.end(), l.types.begin(), l.types.end());
        seq.mask = f.mask;
        seq.mask.insert(seq.mask.end(), l.mask.begin(), l.mask.end());
        seq.source_view.assign(cfg.view_tokens, View::Frontal);
        seq.source_view.insert(seq.source_view.end(), cfg.view_tokens, View::Lateral);
        return seq;
    }
};

// selected interpret-stage clusters, carried onto the ViT grid with the
// projected heatmap scores attached
inline std::vector<VitCluster> clusters_to_vit_grid(
    const interpret::ClusterSet& cs, const std::vector<interpret::GridPoint>& selected,
    std::size_t src_g, const AttentionMap& map_vit) {
    // group the selected patches by cluster label
    std::map<int, std::vector<std::pair<int, int>>> groups;
    for (const auto& p : selected) {
        int label = -1;
        for (std::size_t i = 0; i < cs.points.size(); ++i)
            if (cs.points[i].r == p.r && cs.points[i].c == p.c) {
                label = cs.labels[i];
                break;
            }
        if (label >= 0) groups[label].push_back({p.r, p.c});
    }
    std::vector<VitCluster> out;
    std::size_t g = map_vit.g;
    for (auto& [label, cells] : groups) {
        auto mapped = interpret::map_cluster_cells(cells, src_g, g);
        if (mapped.empty()) {
            // degenerate mapping: fall back to the cell under the centroid
            double sr = 0, sc = 0;
            for (auto [r, c] : cells) {
                sr += r;
                sc += c;
            }
            int r = static_cast<int>(sr / static_cast<double>(cells.size()) *
                                     static_cast<double>(g) / static_cast<double>(src_g));
            int c = static_cast<int>(sc / static_cast<double>(cells.size()) *
                                     static_cast<double>(g) / static_cast<double>(src_g));
            mapped = {{std::clamp(r, 0, static_cast<int>(g) - 1),
                       std::clamp(c, 0, static_cast<int>(g) - 1)}};
        }
        VitCluster vc;
        vc.cells = mapped;
        for (auto [r, c] : mapped)
            vc.scores.push_back(map_vit.at(static_cast<std::size_t>(r),
                                           static_cast<std::size_t>(c)));
        out.push_back(std::move(vc));
    }
    return out;
}

} // namespace vitas::hier

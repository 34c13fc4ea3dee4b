#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <vector>

#include "attribution.hpp"

namespace vitas::interpret {

struct GridPoint {
    int r = 0, c = 0;
    double score = 0.0;
};

// ceil(k% of g^2) highest-scoring cells; ties broken by row-major index
inline std::vector<GridPoint> select_top_k(const AttentionMap& map, double k_percent) {
    if (k_percent <= 0.0 || k_percent > 100.0) throw InputError("k must be in (0,100]");
    std::size_t n = map.scores.size();
    std::size_t take = static_cast<std::size_t>(
        std::ceil(k_percent * static_cast<double>(n) / 100.0));
    take = std::min(take, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (map.scores[a] != map.scores[b]) return map.scores[a] > map.scores[b];
        return a < b;
    });
    std::vector<GridPoint> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        std::size_t lin = idx[i];
        out.push_back({static_cast<int>(lin / map.g), static_cast<int>(lin % map.g),
                       map.scores[lin]});
    }
    return out;
}

struct ClusterSet {
    std::vector<GridPoint> points;
    std::vector<int> labels; // cluster id per point, -1 = noise
    double eps = 0.0;
    int min_pts = 0;
    int num_clusters = 0;
};

// Standard DBSCAN on grid coordinates with Euclidean distance. Core point iff
// its self-inclusive eps-neighborhood has >= min_pts members. Border points
// join the cluster of the first core that reaches them; expansion is FIFO in
// input-index order, which pins the result deterministically.
inline ClusterSet dbscan_cluster(const std::vector<GridPoint>& points, double eps,
                                 int min_pts) {
    if (eps <= 0.0) throw InputError("eps must be > 0");
    if (min_pts < 1) throw InputError("min_pts must be >= 1");
    const std::size_t n = points.size();
    ClusterSet cs;
    cs.points = points;
    cs.eps = eps;
    cs.min_pts = min_pts;
    cs.labels.assign(n, -2); // -2 unvisited

    const double eps2 = eps * eps;
    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dr = points[i].r - points[j].r;
            double dc = points[i].c - points[j].c;
            if (dr * dr + dc * dc <= eps2) nbrs[i].push_back(j);
        }

    int cid = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (cs.labels[i] != -2) continue;
        if (nbrs[i].size() < static_cast<std::size_t>(min_pts)) {
            cs.labels[i] = -1;
            continue;
        }
        cs.labels[i] = cid;
        std::deque<std::size_t> queue(nbrs[i].begin(), nbrs[i].end());
        while (!queue.empty()) {
            std::size_t q = queue.front();
            queue.pop_front();
            if (cs.labels[q] == -1) cs.labels[q] = cid; // noise becomes border
            if (cs.labels[q] != -2) continue;
            cs.labels[q] = cid;
            if (nbrs[q].size() >= static_cast<std::size_t>(min_pts))
                queue.insert(queue.end(), nbrs[q].begin(), nbrs[q].end());
        }
        ++cid;
    }
    cs.num_clusters = cid;
    return cs;
}

// rectangle overlap of cell (i,j) on grid gs with cell (r,c) on grid gd,
// cells tiling the unit square
inline double cell_overlap(std::size_t i, std::size_t j, std::size_t gs, std::size_t r,
                           std::size_t c, std::size_t gd) {
    auto seg = [](std::size_t a, std::size_t g) {
        return std::pair<double, double>{static_cast<double>(a) / static_cast<double>(g),
                                         static_cast<double>(a + 1) / static_cast<double>(g)};
    };
    auto [sy0, sy1] = seg(i, gs);
    auto [sx0, sx1] = seg(j, gs);
    auto [dy0, dy1] = seg(r, gd);
    auto [dx0, dx1] = seg(c, gd);
    double oy = std::max(0.0, std::min(sy1, dy1) - std::max(sy0, dy0));
    double ox = std::max(0.0, std::min(sx1, dx1) - std::max(sx0, dx0));
    return oy * ox;
}

// Overlap-average projection between grids: each source cell's mass is spread
// over destination cells in proportion to area overlap, so total mass is
// preserved before the optional renormalization.
inline AttentionMap project_heatmap_raw(const AttentionMap& src, std::size_t dst_g) {
    if (src.g < 1 || dst_g < 1) throw InputError("grid sides must be >= 1");
    AttentionMap out;
    out.g = dst_g;
    out.view = src.view;
    out.normalized = false;
    out.scores.assign(dst_g * dst_g, 0.0);
    const double src_area = 1.0 / (static_cast<double>(src.g) * static_cast<double>(src.g));
    for (std::size_t i = 0; i < src.g; ++i)
        for (std::size_t j = 0; j < src.g; ++j) {
            double s = src.at(i, j);
            if (s == 0.0) continue;
            // destination cells overlapping this source cell
            std::size_t r0 = i * dst_g / src.g;
            std::size_t r1 = std::min(dst_g - 1, ((i + 1) * dst_g + src.g - 1) / src.g);
            std::size_t c0 = j * dst_g / src.g;
            std::size_t c1 = std::min(dst_g - 1, ((j + 1) * dst_g + src.g - 1) / src.g);
            for (std::size_t r = r0; r <= r1; ++r)
                for (std::size_t c = c0; c <= c1; ++c) {
                    double ov = cell_overlap(i, j, src.g, r, c, dst_g);
                    if (ov > 0.0) out.at(r, c) += s * ov / src_area;
                }
        }
    return out;
}

inline AttentionMap project_heatmap(const AttentionMap& src, std::size_t dst_g) {
    AttentionMap out = project_heatmap_raw(src, dst_g);
    double total = out.sum();
    if (total > 0.0)
        for (auto& v : out.scores) v /= total;
    out.normalized = true;
    return out;
}

// destination cells receiving >= 50% of their area from member source cells
inline std::vector<std::pair<int, int>> map_cluster_cells(
    const std::vector<std::pair<int, int>>& members, std::size_t src_g, std::size_t dst_g) {
    std::vector<double> covered(dst_g * dst_g, 0.0);
    for (auto [i, j] : members)
        for (std::size_t r = 0; r < dst_g; ++r)
            for (std::size_t c = 0; c < dst_g; ++c)
                covered[r * dst_g + c] += cell_overlap(
                    static_cast<std::size_t>(i), static_cast<std::size_t>(j), src_g, r, c, dst_g);
    const double dst_area = 1.0 / (static_cast<double>(dst_g) * static_cast<double>(dst_g));
    std::vector<std::pair<int, int>> out;
    for (std::size_t r = 0; r < dst_g; ++r)
        for (std::size_t c = 0; c < dst_g; ++c)
            if (covered[r * dst_g + c] >= 0.5 * dst_area)
                out.push_back({static_cast<int>(r), static_cast<int>(c)});
    return out;
}

// Ranked selection for one view: highest-score clustered (non-noise) cells
// first; shortfall backfills from noise points, then from the remaining grid
// by heatmap score. Order: score desc, then row-major.
inline std::vector<GridPoint> select_view_patches(const ClusterSet& clusters,
                                                  const AttentionMap& map,
                                                  std::size_t budget) {
    auto by_rank = [&](const GridPoint& a, const GridPoint& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.r != b.r) return a.r < b.r;
        return a.c < b.c;
    };
    std::vector<GridPoint> clustered, noise;
    std::vector<char> taken(map.scores.size(), 0);
    for (std::size_t i = 0; i < clusters.points.size(); ++i) {
        const auto& p = clusters.points[i];
        taken[static_cast<std::size_t>(p.r) * map.g + static_cast<std::size_t>(p.c)] = 1;
        (clusters.labels[i] >= 0 ? clustered : noise).push_back(p);
    }
    std::sort(clustered.begin(), clustered.end(), by_rank);
    std::sort(noise.begin(), noise.end(), by_rank);

    std::vector<GridPoint> out;
    for (const auto& p : clustered) {
        if (out.size() >= budget) break;
        out.push_back(p);
    }
    for (const auto& p : noise) {
        if (out.size() >= budget) break;
        out.push_back(p);
    }
    if (out.size() < budget) {
        std::vector<GridPoint> rest;
        for (std::size_t lin = 0; lin < map.scores.size(); ++lin)
            if (!taken[lin])
                rest.push_back({static_cast<int>(lin / map.g), static_cast<int>(lin % map.g),
                                map.scores[lin]});
        std::sort(rest.begin(), rest.end(), by_rank);
        for (const auto& p : rest) {
            if (out.size() >= budget) break;
            out.push_back(p);
        }
    }
    return out;
}

} // namespace vitas::interpret

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "../fusion/model.hpp"

namespace vitas::interpret {

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AttentionMap {
    std::size_t g = 0;
    View view = View::Frontal;
    std::vector<double> scores; // g*g row-major, sums to 1 when normalized
    bool normalized = true;

    double at(std::size_t r, std::size_t c) const { return scores[r * g + c]; }
    double& at(std::size_t r, std::size_t c) { return scores[r * g + c]; }
    double sum() const {
        double s = 0.0;
        for (double v : scores) s += v;
        return s;
    }
};

// Per-patch importance from cross-view attention: sum heads, then sum the
// source-token axis (attention received), softmax over the N target scores.
// `attn` rows are source-view queries, columns are target-view patches.
inline AttentionMap extract_heatmap(const Tensor& attn, View target_view) {
    if (attn.rank() != 3 || attn.shape[1] != attn.shape[2])
        throw InputError("attention tensor must be (h,N,N)");
    std::size_t n = attn.shape[2];
    std::size_t g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) throw InputError("token count is not a perfect square");
    std::vector<double> raw(n, 0.0);
    for (std::size_t h = 0; h < attn.shape[0]; ++h)
        for (std::size_t i = 0; i < attn.shape[1]; ++i)
            for (std::size_t j = 0; j < n; ++j) raw[j] += attn.at3(h, i, j);
    double mx = *std::max_element(raw.begin(), raw.end());
    double sum = 0.0;
    for (auto& v : raw) {
        v = std::exp(v - mx);
        sum += v;
    }
    AttentionMap map;
    map.g = g;
    map.view = target_view;
    map.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) map.scores[i] = raw[i] / sum;
    return map;
}

// ReLU(sum_d grad * value) per token row, normalized to sum 1; uniform
// fallback when the raw map is all zero.
inline AttentionMap weighted_relu_map(const Tensor& values, const Tensor& grads, View view) {
    std::size_t n = values.shape[0];
    std::size_t d = values.shape[1];
    std::size_t g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) throw InputError("token count is not a perfect square");
    AttentionMap map;
    map.g = g;
    map.view = view;
    map.scores.resize(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            s += grads.data[i * d + j] * values.data[i * d + j];
        s = std::max(0.0, s);
        map.scores[i] = s;
        total += s;
    }
    if (total <= 0.0)
        std::fill(map.scores.begin(), map.scores.end(), 1.0 / static_cast<double>(n));
    else
        for (auto& v : map.scores) v /= total;
    return map;
}

// Gradient-weighted map through the final cross-attention layer's tokens for
// class `cls`.
inline AttentionMap grad_weighted_heatmap(const fusion::FusionModel& model,
                                          const fusion::SampleViews& views, int cls,
                                          View view, bool use_lateral = true) {
    if (cls < 0 || cls >= static_cast<int>(synth::kNumClasses))
        throw InputError("class index out of range");
    auto res = model.forward(views, true, use_lateral);
    Var tokens = view == View::Frontal ? res.tokens_f : res.tokens_l;
    Var target = slice(res.logits, 1, static_cast<std::size_t>(cls), 1);
    backward(target);
    tokens->ensure_grad();
    return weighted_relu_map(tokens->value, tokens->grad, view);
}

struct CoalitionValues {
    double v_empty = 0.0, v_f = 0.0, v_l = 0.0, v_fl = 0.0;
};

// sigmoid output for class c with the views outside S substituted by the
// learned missing tokens; 4 forward passes cover all coalitions
inline double coalition_value(const fusion::FusionModel& model,
                              const fusion::SampleViews& views, bool with_f, bool with_l,
                              int cls) {
    if (with_l && !views.lateral.has_value())
        throw InputError("coalition requests the lateral view but the sample has none");
    NoGradGuard ng;
    auto res = model.forward(views, with_f, with_l);
    return res.probs->value.data[static_cast<std::size_t>(cls)];
}

inline CoalitionValues coalition_values(const fusion::FusionModel& model,
                                        const fusion::SampleViews& views, int cls) {
    CoalitionValues v;
    v.v_empty = coalition_value(model, views, false, false, cls);
    v.v_f = coalition_value(model, views, true, false, cls);
    if (views.lateral.has_value()) {
        v.v_l = coalition_value(model, views, false, true, cls);
        v.v_fl = coalition_value(model, views, true, true, cls);
    } else {
        v.v_l = v.v_empty;
        v.v_fl = v.v_f;
    }
    return v;
}

struct ShapleyPair {
    double phi_f = 0.0, phi_l = 0.0;
};

inline ShapleyPair shapley_two_player(const CoalitionValues& v) {
    ShapleyPair p;
    p.phi_f = 0.5 * (v.v_f - v.v_empty + v.v_fl - v.v_l);
    p.phi_l = 0.5 * (v.v_l - v.v_empty + v.v_fl - v.v_f);
    return p;
}

struct Percentages {
    double pi_f = 50.0, pi_l = 50.0;
};

// negative attributions clamp to zero; both-zero falls back to an even split
inline Percentages to_percentages(double phi_f, double phi_l) {
    double f = std::max(0.0, phi_f);
    double l = std::max(0.0, phi_l);
    if (f + l <= 0.0) return {50.0, 50.0};
    return {100.0 * f / (f + l), 100.0 * l / (f + l)};
}

struct PatchBudget {
    std::size_t n_f = 0, n_l = 0, n_total = 0;
};

inline PatchBudget allocate_patch_budget(std::size_t n_total, double pi_f) {
    if (pi_f < 0.0 || pi_f > 100.0) throw InputError("pi_f outside [0,100]");
    PatchBudget b;
    b.n_total = n_total;
    b.n_f = static_cast<std::size_t>(
        std::floor(static_cast<double>(n_total) * pi_f / 100.0));
    b.n_l = n_total - b.n_f;
    return b;
}

} // namespace vitas::interpret

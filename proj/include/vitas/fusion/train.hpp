#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <vector>

#include "../core/parallel.hpp"
#include "../synth/generator.hpp"
#include "model.hpp"

namespace vitas::fusion {

// Mann-Whitney AUROC with midrank ties. Returns -1 when undefined
// (single-sign class).
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k]) {
            pos_rank_sum += rank[k];
            ++pos;
        }
    std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return -1.0;
    double u = pos_rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

// macro average over classes that have both signs in the eval set
inline double macro_auroc(const std::vector<std::array<double, synth::kNumClasses>>& probs,
                          const std::vector<std::array<int, synth::kNumClasses>>& labels) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
        std::vector<double> s(probs.size());
        std::vector<int> y(labels.size());
        for (std::size_t k = 0; k < probs.size(); ++k) {
            s[k] = probs[k][c];
            y[k] = labels[k][c];
        }
        double a = auroc(s, y);
        if (a >= 0.0) {
            sum += a;
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

// image cache: 8-bit patch rows per view, converted to tensors on demand
struct CachedSample {
    std::vector<std::uint8_t> frontal, lateral; // lateral empty when absent
    std::array<int, synth::kNumClasses> labels{};
};

inline std::vector<std::uint8_t> quantize(const Tensor& t) {
    std::vector<std::uint8_t> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t.data[i], 0.0, 1.0) * 255.0));
    return out;
}

inline Tensor dequantize(const std::vector<std::uint8_t>& bytes,
                         std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < bytes.size(); ++i)
        t.data[i] = static_cast<double>(bytes[i]) / 255.0;
    return t;
}

inline CachedSample cache_sample(const synth::DatasetManifest& man,
                                 const synth::SampleRecord& rec, const FusionConfig& cfg) {
    CachedSample cs;
    cs.labels = rec.labels;
    ImageGrid f = read_pgm(man.resolve(rec.frontal_path));
    if (f.h != cfg.input_side) f = resize_bilinear(f, cfg.input_side, cfg.input_side);
    cs.frontal = quantize(patchify(image_tensor(f), cfg.patch));
    if (rec.lateral_path) {
        ImageGrid l = read_pgm(man.resolve(*rec.lateral_path));
        if (l.h != cfg.input_side) l = resize_bilinear(l, cfg.input_side, cfg.input_side);
        cs.lateral = quantize(patchify(image_tensor(l), cfg.patch));
    }
    return cs;
}

inline SampleViews views_of(const CachedSample& cs, const FusionConfig& cfg) {
    SampleViews v;
    std::vector<std::size_t> shape = {cfg.num_tokens(), cfg.patch * cfg.patch};
    v.frontal = dequantize(cs.frontal, shape);
    if (!cs.lateral.empty()) v.lateral = dequantize(cs.lateral, shape);
    return v;
}

struct ClsTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double lr = 3e-4;
    double weight_decay = 0.05;
    std::size_t warmup_steps = 100; // additionally capped at 10% of total steps
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    double target_val_auroc = 2.0; // >1 disables early stop
    std::string log_path;          // per-epoch CSV when non-empty
};

struct ClsTrainResult {
    double best_val_auroc = 0.0;
    std::size_t best_epoch = 0;
    std::vector<double> epoch_losses;
    std::vector<double> epoch_val_auroc;
};

inline std::vector<std::array<double, synth::kNumClasses>> predict_probs(
    const FusionModel& model, const std::vector<CachedSample>& samples, std::size_t threads) {
    std::vector<std::array<double, synth::kNumClasses>> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t lo, std::size_t hi) {
        NoGradGuard ng;
        for (std::size_t i = lo; i < hi; ++i) {
            auto views = views_of(samples[i], model.cfg);
            auto res = model.forward(views);
            for (std::size_t c = 0; c < synth::kNumClasses; ++c)
                out[i][c] = res.probs->value.data[c];
        }
    });
    return out;
}

inline ClsTrainResult train_classifier(FusionModel& model, const synth::DatasetManifest& man,
                                       const ClsTrainConfig& tc) {
    auto train_recs = man.split("train");
    auto val_recs = man.split("val");
    if (train_recs.empty() || val_recs.empty())
        throw std::runtime_error("dataset lacks train/val splits");

    std::vector<CachedSample> train_set, val_set;
    for (auto* r : train_recs) train_set.push_back(cache_sample(man, *r, model.cfg));
    for (auto* r : val_recs) val_set.push_back(cache_sample(man, *r, model.cfg));

    std::size_t steps_per_epoch = (train_set.size() + tc.batch - 1) / tc.batch;
    std::size_t total_steps = steps_per_epoch * tc.epochs;

    AdamW opt(model.ps.vars(), tc.lr, tc.weight_decay);
    Rng rng(splitmix64(tc.seed ^ 0xC1A551F1ULL));

    std::size_t n_threads = std::max<std::size_t>(1, tc.threads);
    std::vector<std::unique_ptr<FusionModel>> replicas;
    for (std::size_t t = 0; t < n_threads; ++t)
        replicas.push_back(std::make_unique<FusionModel>(model.cfg, /*seed=*/0));

    std::ofstream log;
    if (!tc.log_path.empty()) {
        log.open(tc.log_path);
        log << "epoch,train_loss,val_auroc,lr_scale\n";
    }

    ClsTrainResult result;
    std::vector<std::vector<double>> best_values;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch) {
            std::size_t bn = std::min(tc.batch, order.size() - b0);
            double lr_scale = lr_schedule(step, total_steps, tc.warmup_steps);

            for (auto& rep : replicas) {
                rep->ps.copy_values_from(model.ps);
                rep->ps.zero_grad();
            }
            std::vector<double> shard_losses(n_threads, 0.0);
            parallel_shards(bn, n_threads, [&](std::size_t shard, std::size_t lo, std::size_t hi) {
                FusionModel& rep = *replicas[shard];
                for (std::size_t k = lo; k < hi; ++k) {
                    const auto& cs = train_set[order[b0 + k]];
                    auto views = views_of(cs, rep.cfg);
                    auto res = rep.forward(views);
                    Tensor y({1, synth::kNumClasses});
                    for (std::size_t c = 0; c < synth::kNumClasses; ++c)
                        y.data[c] = static_cast<double>(cs.labels[c]);
                    Var loss = scale(bce_loss(res.probs, y), 1.0 / static_cast<double>(bn));
                    shard_losses[shard] += loss->value.data[0];
                    backward(loss);
                }
            });
            double batch_loss = 0.0;
            for (double l : shard_losses) batch_loss += l;
            if (!std::isfinite(batch_loss))
                throw NumericError("nan loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step));

            opt.zero_grad();
            for (std::size_t t = 0; t < n_threads; ++t)
                for (std::size_t i = 0; i < model.ps.items.size(); ++i) {
                    auto& src = replicas[t]->ps.items[i].second->grad;
                    if (src.data.empty()) continue;
                    auto& dst = model.ps.items[i].second->grad;
                    for (std::size_t j = 0; j < dst.data.size(); ++j) dst.data[j] += src.data[j];
                }
            opt.step(lr_scale);
            epoch_loss += batch_loss * static_cast<double>(bn);
            seen += bn;
            ++step;
        }
        epoch_loss /= static_cast<double>(seen);

        auto val_probs = predict_probs(model, val_set, n_threads);
        std::vector<std::array<int, synth::kNumClasses>> val_labels;
        for (const auto& cs : val_set) val_labels.push_back(cs.labels);
        double va = macro_auroc(val_probs, val_labels);

        result.epoch_losses.push_back(epoch_loss);
        result.epoch_val_auroc.push_back(va);
        if (log.is_open())
            log << epoch << "," << epoch_loss << "," << va << ","
                << lr_schedule(step, total_steps, tc.warmup_steps) << "\n";
        if (va > result.best_val_auroc) {
            result.best_val_auroc = va;
            result.best_epoch = epoch;
            best_values.clear();
            for (const auto& [n, v] : model.ps.items) best_values.push_back(v->value.data);
        }
        if (va >= tc.target_val_auroc) break;
    }

    if (!best_values.empty())
        for (std::size_t i = 0; i < model.ps.items.size(); ++i)
            model.ps.items[i].second->value.data = best_values[i];
    return result;
}

} // namespace vitas::fusion

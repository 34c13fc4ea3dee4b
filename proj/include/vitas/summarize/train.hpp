#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>

#include "../core/parallel.hpp"
#include "../fusion/train.hpp"
#include "../metrics/text.hpp"
#include "../roi/segmentation.hpp"
#include "model.hpp"

namespace vitas::summarize {

enum class Mode { TextOnly, FullImage, Roi, RoiRandom, Vitas };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::TextOnly: return "text-only";
        case Mode::FullImage: return "full-image";
        case Mode::Roi: return "roi";
        case Mode::RoiRandom: return "roi-random";
        default: return "vitas";
    }
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "text-only") return Mode::TextOnly;
    if (s == "full-image") return Mode::FullImage;
    if (s == "roi") return Mode::Roi;
    if (s == "roi-random") return Mode::RoiRandom;
    if (s == "vitas") return Mode::Vitas;
    throw InputError("unknown mode: " + s);
}

// Everything trainable for one summarization run: shared ViT over views,
// hierarchical tokenizer, and the fused encoder-decoder.
struct SummarizerPipeline {
    hier::ViTConfig vcfg;
    hier::TokenizerConfig tcfg;
    SummarizerConfig scfg;
    ParamStore ps;
    hier::ViTEncoder vit;
    hier::HierTokenizer tokenizer;
    SummarizerCore core;

    SummarizerPipeline(const hier::ViTConfig& v, const hier::TokenizerConfig& t,
                       const SummarizerConfig& s, std::uint64_t seed)
        : vcfg(v), tcfg(t), scfg(s) {
        Rng rng(splitmix64(seed ^ 0x50AA123ULL));
        vit = hier::ViTEncoder(ps, "vit", vcfg, rng);
        tokenizer = hier::HierTokenizer(ps, "tok", tcfg, rng);
        core = SummarizerCore(ps, "sum", scfg, rng);
    }
};

// one sample's cached inputs for summarizer training/eval
struct SumSample {
    std::string id;
    std::vector<int> findings_ids;
    std::vector<int> target_ids; // impression + EOS
    std::string impression_ref;
    std::vector<std::uint8_t> img_f, img_l; // 224-side, mode-appropriate; empty = absent
    std::vector<hier::VitCluster> clusters_f, clusters_l; // vitas mode only
    std::uint64_t extras_seed = 0;                         // roi-random determinism
};

inline Tensor view_tensor_224(const std::vector<std::uint8_t>& bytes, std::size_t side) {
    Tensor t({side, side});
    for (std::size_t i = 0; i < bytes.size(); ++i)
        t.data[i] = static_cast<double>(bytes[i]) / 255.0;
    return t;
}

// strided uniform coverage of the grid for the full-image/roi baselines
inline std::vector<hier::HierTokenizer::RankedExtra> strided_extras(std::size_t grid_cells,
                                                                    std::size_t count) {
    std::vector<hier::HierTokenizer::RankedExtra> out;
    for (std::size_t j = 0; j < count; ++j)
        out.push_back({j * grid_cells / count, 0.0});
    return out;
}

inline std::vector<hier::HierTokenizer::RankedExtra> random_extras(std::size_t grid_cells,
                                                                   std::size_t count,
                                                                   std::uint64_t seed) {
    std::vector<std::size_t> cells(grid_cells);
    std::iota(cells.begin(), cells.end(), 0);
    Rng rng(splitmix64(seed));
    rng.shuffle(cells);
    std::vector<hier::HierTokenizer::RankedExtra> out;
    for (std::size_t j = 0; j < std::min(count, grid_cells); ++j) out.push_back({cells[j], 0.0});
    return out;
}

inline VisualTokenSequence build_visual_sequence(const SummarizerPipeline& p,
                                                 const SumSample& s, Mode mode,
                                                 const Var* text_summary) {
    const std::size_t g = p.tcfg.vit_grid;
    const std::size_t cells = g * g;
    const std::size_t extras_budget = p.tcfg.view_tokens - 1;

    auto build_view = [&](const std::vector<std::uint8_t>& img,
                          const std::vector<hier::VitCluster>& clusters, View view,
                          std::uint64_t salt) {
        if (img.empty())
            return p.tokenizer.assemble_view_tokens(std::nullopt, {}, {}, view);
        Var encoded = p.vit.encode(view_tensor_224(img, p.vcfg.input_side));
        Var projected = p.tokenizer.project_tokens(encoded);
        std::vector<hier::HierTokenizer::RankedExtra> extras;
        std::vector<hier::VitCluster> use_clusters;
        switch (mode) {
            case Mode::FullImage:
            case Mode::Roi:
                extras = strided_extras(cells, extras_budget);
                break;
            case Mode::RoiRandom:
                extras = random_extras(cells, extras_budget, s.extras_seed ^ salt);
                break;
            case Mode::Vitas: {
                use_clusters = clusters;
                std::vector<char> covered(cells, 0);
                for (const auto& cl : use_clusters)
                    for (auto [r, c] : cl.cells)
                        covered[static_cast<std::size_t>(r) * g +
                                static_cast<std::size_t>(c)] = 1;
                std::vector<std::size_t> candidates;
                for (std::size_t i = 0; i < cells; ++i)
                    if (!covered[i]) candidates.push_back(i);
                Var global = p.tokenizer.build_global_token(projected, view);
                extras = p.tokenizer.score_extra_patches(candidates, projected, global,
                                                         text_summary);
                break;
            }
            default: break;
        }
        return p.tokenizer.assemble_view_tokens(projected, use_clusters, extras, view);
    };

    auto f = build_view(s.img_f, s.clusters_f, View::Frontal, 0x0F);
    auto l = build_view(s.img_l, s.clusters_l, View::Lateral, 0x1A);
    return p.tokenizer.build_visual_sequence(f, l);
}

inline Var forward_loss(const SummarizerPipeline& p, const SumSample& s, Mode mode) {
    auto [text_emb, text_mask] = p.core.embed_text(s.findings_ids);
    if (mode == Mode::TextOnly) {
        FusedSequence fused = p.core.fuse(text_emb, text_mask, nullptr);
        return p.core.decode_train(fused, s.target_ids, p.scfg.label_smoothing);
    }
    std::optional<Var> text_summary;
    if (text_emb) text_summary = mean_rows(text_emb);
    VisualTokenSequence vis =
        build_visual_sequence(p, s, mode, text_summary ? &*text_summary : nullptr);
    FusedSequence fused = p.core.fuse(text_emb, text_mask, &vis);
    return p.core.decode_train(fused, s.target_ids, p.scfg.label_smoothing);
}

inline DecoderOutput generate_one(const SummarizerPipeline& p, const SumSample& s, Mode mode,
                                  std::size_t max_len, std::size_t beam) {
    NoGradGuard ng;
    auto [text_emb, text_mask] = p.core.embed_text(s.findings_ids);
    if (mode == Mode::TextOnly) {
        FusedSequence fused = p.core.fuse(text_emb, text_mask, nullptr);
        return p.core.generate(fused, max_len, beam);
    }
    std::optional<Var> text_summary;
    if (text_emb) text_summary = mean_rows(text_emb);
    VisualTokenSequence vis =
        build_visual_sequence(p, s, mode, text_summary ? &*text_summary : nullptr);
    FusedSequence fused = p.core.fuse(text_emb, text_mask, &vis);
    return p.core.generate(fused, max_len, beam);
}

struct SumTrainConfig {
    std::size_t epochs = 6;
    std::size_t batch = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 50;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::string log_path;
};

struct SumTrainResult {
    std::vector<double> train_losses, val_losses;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
};

inline SumTrainResult train_summarizer(SummarizerPipeline& model,
                                       const std::vector<SumSample>& train_set,
                                       const std::vector<SumSample>& val_set, Mode mode,
                                       const SumTrainConfig& tc) {
    if (train_set.empty()) throw InputError("empty training set");
    std::size_t steps_per_epoch = (train_set.size() + tc.batch - 1) / tc.batch;
    std::size_t total_steps = steps_per_epoch * tc.epochs;

    AdamW opt(model.ps.vars(), tc.lr, tc.weight_decay);
    Rng rng(splitmix64(tc.seed ^ 0x5117A1ULL));

    std::size_t n_threads = std::max<std::size_t>(1, tc.threads);
    std::vector<std::unique_ptr<SummarizerPipeline>> replicas;
    for (std::size_t t = 0; t < n_threads; ++t)
        replicas.push_back(
            std::make_unique<SummarizerPipeline>(model.vcfg, model.tcfg, model.scfg, 0));

    std::ofstream log;
    if (!tc.log_path.empty()) {
        log.open(tc.log_path);
        log << "epoch,train_loss,val_loss,lr_scale\n";
    }

    SumTrainResult result;
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
                SummarizerPipeline& rep = *replicas[shard];
                for (std::size_t k = lo; k < hi; ++k) {
                    Var loss = scale(forward_loss(rep, train_set[order[b0 + k]], mode),
                                     1.0 / static_cast<double>(bn));
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

        double val_loss = 0.0;
        if (!val_set.empty()) {
            for (auto& rep : replicas) rep->ps.copy_values_from(model.ps);
            std::vector<double> shard_val(n_threads, 0.0);
            parallel_shards(val_set.size(), n_threads,
                            [&](std::size_t shard, std::size_t lo, std::size_t hi) {
                                NoGradGuard ng;
                                for (std::size_t k = lo; k < hi; ++k)
                                    shard_val[shard] +=
                                        forward_loss(*replicas[shard], val_set[k], mode)
                                            ->value.data[0];
                            });
            for (double v : shard_val) val_loss += v;
            val_loss /= static_cast<double>(val_set.size());
        } else {
            val_loss = epoch_loss;
        }

        result.train_losses.push_back(epoch_loss);
        result.val_losses.push_back(val_loss);
        if (log.is_open())
            log << epoch << "," << epoch_loss << "," << val_loss << ","
                << lr_schedule(step, total_steps, tc.warmup_steps) << "\n";
        if (val_loss < result.best_val) {
            result.best_val = val_loss;
            result.best_epoch = epoch;
            best_values.clear();
            for (const auto& [n, v] : model.ps.items) best_values.push_back(v->value.data);
        }
    }
    if (!best_values.empty())
        for (std::size_t i = 0; i < model.ps.items.size(); ++i)
            model.ps.items[i].second->value.data = best_values[i];
    return result;
}

// batched generation over a sample set with read-only replicas
inline std::vector<DecoderOutput> generate_batch(const SummarizerPipeline& model,
                                                 const std::vector<SumSample>& samples,
                                                 Mode mode, std::size_t max_len,
                                                 std::size_t beam, std::size_t threads) {
    std::vector<DecoderOutput> out(samples.size());
    std::size_t n_threads = std::max<std::size_t>(1, threads);
    std::vector<std::unique_ptr<SummarizerPipeline>> replicas;
    for (std::size_t t = 0; t < n_threads; ++t) {
        replicas.push_back(
            std::make_unique<SummarizerPipeline>(model.vcfg, model.tcfg, model.scfg, 0));
        replicas.back()->ps.copy_values_from(model.ps);
    }
    parallel_shards(samples.size(), n_threads,
                    [&](std::size_t shard, std::size_t lo, std::size_t hi) {
                        for (std::size_t k = lo; k < hi; ++k)
                            out[k] = generate_one(*replicas[shard], samples[k], mode, max_len,
                                                  beam);
                    });
    return out;
}

} // namespace vitas::summarize

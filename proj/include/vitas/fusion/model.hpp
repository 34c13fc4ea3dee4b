#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "../core/image.hpp"
#include "../core/nn.hpp"
#include "../core/optim.hpp"
#include "../synth/vocab.hpp"

namespace vitas::fusion {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FusionConfig {
    std::size_t input_side = 256;
    std::size_t patch = 16;
    std::size_t dim = 64;       // token dim D
    std::size_t heads = 4;
    std::size_t pre_stages = 2; // self-attention blocks before fusion
    std::size_t fusion_layers = 2;
    std::size_t post_stages = 2;
    std::size_t ffn_mult = 2;
    std::size_t feature_dim = 64; // pooled descriptor dim D_f

    std::size_t grid_side() const { return input_side / patch; }
    std::size_t num_tokens() const { return grid_side() * grid_side(); }

    void validate() const {
        if (patch == 0 || input_side % patch != 0)
            throw DimensionError("input side not divisible by patch size");
        if (dim % heads != 0) throw DimensionError("dim not divisible by heads");
    }
};

// (side,side) intensities -> (N, patch*patch) rows in grid row-major order
inline Tensor patchify(const Tensor& img, std::size_t patch) {
    std::size_t side = img.shape[0];
    if (img.rank() != 2 || img.shape[1] != side || side % patch != 0)
        throw DimensionError("patchify expects square image divisible by patch");
    std::size_t g = side / patch;
    Tensor out({g * g, patch * patch});
    for (std::size_t gr = 0; gr < g; ++gr)
        for (std::size_t gc = 0; gc < g; ++gc) {
            double* row = out.data.data() + (gr * g + gc) * patch * patch;
            for (std::size_t pr = 0; pr < patch; ++pr)
                for (std::size_t pc = 0; pc < patch; ++pc)
                    row[pr * patch + pc] = img.at2(gr * patch + pr, gc * patch + pc);
        }
    return out;
}

inline Tensor image_tensor(const ImageGrid& img) {
    Tensor t({img.h, img.w});
    t.data = img.pix;
    return t;
}

struct ViewBackbone {
    Dense patch_proj;
    Var pos_emb;
    std::vector<EncoderBlock> pre, post;

    ViewBackbone() = default;
    ViewBackbone(ParamStore& ps, const std::string& name, const FusionConfig& cfg, Rng& rng)
        : patch_proj(ps, name + ".patch", cfg.patch * cfg.patch, cfg.dim, rng),
          pos_emb(ps.add(name + ".pos", init::gaussian(rng, {cfg.num_tokens(), cfg.dim}, 0.02))) {
        for (std::size_t i = 0; i < cfg.pre_stages; ++i)
            pre.emplace_back(ps, name + ".pre" + std::to_string(i), cfg.dim, cfg.heads,
                             cfg.dim * cfg.ffn_mult, rng);
        for (std::size_t i = 0; i < cfg.post_stages; ++i)
            post.emplace_back(ps, name + ".post" + std::to_string(i), cfg.dim, cfg.heads,
                              cfg.dim * cfg.ffn_mult, rng);
    }
};

struct FusionLayer {
    Mha f_from_l, l_from_f; // cross attention, queries named first
    LayerNorm ln_f, ln_l;
    Ffn ffn_f, ffn_l;

    FusionLayer() = default;
    FusionLayer(ParamStore& ps, const std::string& name, const FusionConfig& cfg, Rng& rng)
        : f_from_l(ps, name + ".f_from_l", cfg.dim, cfg.heads, rng),
          l_from_f(ps, name + ".l_from_f", cfg.dim, cfg.heads, rng),
          ln_f(ps, name + ".ln_f", cfg.dim), ln_l(ps, name + ".ln_l", cfg.dim),
          ffn_f(ps, name + ".ffn_f", cfg.dim, cfg.dim * cfg.ffn_mult, rng),
          ffn_l(ps, name + ".ffn_l", cfg.dim, cfg.dim * cfg.ffn_mult, rng) {}
};

struct ForwardResult {
    Var logits;           // (1, 8)
    Var probs;            // (1, 8) sigmoid
    Var tokens_f, tokens_l; // (N, D) after the final fusion layer
    Var attn_f_to_l;      // (h, N, N): frontal queries over lateral keys
    Var attn_l_to_f;      // (h, N, N): lateral queries over frontal keys
    Var z_fused;          // (1, 2*D_f)
};

// Per-sample views; absent lateral leaves `lateral` empty.
struct SampleViews {
    Tensor frontal;           // (N, patch*patch)
    std::optional<Tensor> lateral;
};

class FusionModel {
  public:
    FusionConfig cfg;
    ParamStore ps;
    ViewBackbone backbone_f, backbone_l;
    Var missing_f, missing_l; // (1, D) learnable missing-view tokens
    std::vector<FusionLayer> fusion;
    Dense pool_f, pool_l;     // D -> D_f applied after token mean
    Mha late_lf, late_fl;     // single-token cross attention on descriptors
    Dense cls_hidden, cls_out;

    explicit FusionModel(const FusionConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        Rng rng(splitmix64(seed ^ 0xF051011ULL));
        backbone_f = ViewBackbone(ps, "frontal", cfg, rng);
        backbone_l = ViewBackbone(ps, "lateral", cfg, rng);
        missing_f = ps.add("missing_f", init::gaussian(rng, {1, cfg.dim}, 0.02));
        missing_l = ps.add("missing_l", init::gaussian(rng, {1, cfg.dim}, 0.02));
        for (std::size_t i = 0; i < cfg.fusion_layers; ++i)
            fusion.emplace_back(ps, "fusion" + std::to_string(i), cfg, rng);
        pool_f = Dense(ps, "pool_f", cfg.dim, cfg.feature_dim, rng);
        pool_l = Dense(ps, "pool_l", cfg.dim, cfg.feature_dim, rng);
        late_lf = Mha(ps, "late_lf", cfg.feature_dim, 1, rng);
        late_fl = Mha(ps, "late_fl", cfg.feature_dim, 1, rng);
        cls_hidden = Dense(ps, "cls_hidden", 2 * cfg.feature_dim, cfg.feature_dim, rng);
        cls_out = Dense(ps, "cls_out", cfg.feature_dim, synth::kNumClasses, rng);
    }

    // linear projection of flattened patches plus learned positions
    Var patch_embed(const Tensor& patches, const ViewBackbone& bb) const {
        if (patches.shape[0] != cfg.num_tokens() || patches.shape[1] != cfg.patch * cfg.patch)
            throw DimensionError("patch grid shape mismatch: " + patches.shape_str());
        return add(bb.patch_proj(constant(patches)), bb.pos_emb);
    }

    // rows with mask=0 become the broadcast missing token
    Var substitute_missing_view(const Var& tokens, bool present, const Var& missing) const {
        if (present) return tokens;
        return tile_rows(missing, cfg.num_tokens());
    }

    struct CrossOut {
        Var f, l;
        Var attn_fl, attn_lf;
    };

    // Bidirectional cross attention with availability gating: unavailable keys
    // are masked additively inside softmax and the residual update is zeroed.
    CrossOut cross_attend(const Var& f, const Var& l, bool f_present, bool l_present,
                          const FusionLayer& layer) const {
        std::size_t n = f->value.shape[0];
        Tensor mask_all(std::vector<std::size_t>{n, n}, -1e9);
        const Tensor* mask_l = l_present ? nullptr : &mask_all;
        const Tensor* mask_f = f_present ? nullptr : &mask_all;

        MhaResult a_fl = layer.f_from_l(f, l, mask_l); // frontal queries, lateral keys
        MhaResult a_lf = layer.l_from_f(l, f, mask_f);

        Var upd_f = l_present ? a_fl.out : scale(a_fl.out, 0.0);
        Var upd_l = f_present ? a_lf.out : scale(a_lf.out, 0.0);

        Var fh = add(f, upd_f);
        Var lh = add(l, upd_l);
        fh = add(fh, layer.ffn_f(layer.ln_f(fh)));
        lh = add(lh, layer.ffn_l(layer.ln_l(lh)));
        return {fh, lh, a_fl.attn, a_lf.attn};
    }

    // mean over tokens then projection to the descriptor dim
    Var global_pool(const Var& tokens, const Dense& proj) const {
        return proj(mean_rows(tokens));
    }

    Var late_fuse(const Var& z_f, const Var& z_l) const {
        Var half_f = late_lf(z_f, z_l).out;
        Var half_l = late_fl(z_l, z_f).out;
        return concat({half_f, half_l}, 1);
    }

    // sigmoid clamped away from exact 0/1 so outputs stay strictly inside (0,1)
    Var classify(const Var& z_fused) const {
        return clamp_op(sigmoid(cls_out(gelu(cls_hidden(z_fused)))), 1e-12, 1.0 - 1e-12);
    }

    ForwardResult forward(const SampleViews& views, bool use_frontal = true,
                          bool use_lateral = true) const {
        bool f_present = use_frontal;
        bool l_present = use_lateral && views.lateral.has_value();

        Var f = f_present ? patch_embed(views.frontal, backbone_f)
                          : substitute_missing_view(Var(), false, missing_f);
        Var l = l_present ? patch_embed(*views.lateral, backbone_l)
                          : substitute_missing_view(Var(), false, missing_l);

        for (const auto& blk : backbone_f.pre) f = blk(f);
        for (const auto& blk : backbone_l.pre) l = blk(l);

        ForwardResult res;
        for (std::size_t i = 0; i < fusion.size(); ++i) {
            auto out = cross_attend(f, l, f_present, l_present, fusion[i]);
            f = out.f;
            l = out.l;
            if (i + 1 == fusion.size()) {
                res.attn_f_to_l = out.attn_fl;
                res.attn_l_to_f = out.attn_lf;
                res.tokens_f = f;
                res.tokens_l = l;
            }
        }
        for (const auto& blk : backbone_f.post) f = blk(f);
        for (const auto& blk : backbone_l.post) l = blk(l);

        Var z_f = global_pool(f, pool_f);
        Var z_l = global_pool(l, pool_l);
        res.z_fused = late_fuse(z_f, z_l);
        Var logits = cls_out(gelu(cls_hidden(res.z_fused)));
        res.logits = logits;
        res.probs = clamp_op(sigmoid(logits), 1e-12, 1.0 - 1e-12);
        return res;
    }
};

// mean over classes of -[y log p + (1-y) log(1-p)], logs clamped at 1e-12
inline Var bce_loss(const Var& probs, const Tensor& labels) {
    Var y = constant(labels);
    Var one = constant(Tensor(labels.shape, 1.0));
    Var pos = mul(y, log_clamped(probs));
    Var neg = mul(sub(one, y), log_clamped(sub(one, probs)));
    return scale(mean_all(add(pos, neg)), -1.0);
}

inline SampleViews make_views(const ImageGrid& frontal, const ImageGrid* lateral,
                              const FusionConfig& cfg) {
    SampleViews v;
    ImageGrid f = frontal;
    if (f.h != cfg.input_side)
        f = resize_bilinear(f, cfg.input_side, cfg.input_side);
    v.frontal = patchify(image_tensor(f), cfg.patch);
    if (lateral) {
        ImageGrid l = *lateral;
        if (l.h != cfg.input_side) l = resize_bilinear(l, cfg.input_side, cfg.input_side);
        v.lateral = patchify(image_tensor(l), cfg.patch);
    }
    return v;
}

} // namespace vitas::fusion

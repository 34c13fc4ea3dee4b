#pragma once

#include "../fusion/model.hpp"

namespace vitas::hier {

using fusion::DimensionError;

struct ViTConfig {
    std::size_t input_side = 224;
    std::size_t patch = 16; // 14x14 grid, 197 tokens with CLS
    std::size_t dim = 64;   // D_vit
    std::size_t heads = 4;
    std::size_t depth = 2;
    std::size_t ffn_mult = 2;

    std::size_t grid_side() const { return input_side / patch; }
    std::size_t num_tokens() const { return grid_side() * grid_side() + 1; }

    void validate() const {
        if (patch == 0 || input_side % patch != 0)
            throw DimensionError("vit input side not divisible by patch");
        if (dim % heads != 0) throw DimensionError("vit dim not divisible by heads");
    }
};

// Small ViT-style encoder: CLS + patch tokens, learned positions, pre-LN
// blocks. Grid token (r,c) sits at sequence position 1 + r*g + c.
struct ViTEncoder {
    ViTConfig cfg;
    Dense patch_proj;
    Var cls_token; // (1, D)
    Var pos_emb;   // (197, D)
    std::vector<EncoderBlock> blocks;

    ViTEncoder() = default;
    ViTEncoder(ParamStore& ps, const std::string& name, const ViTConfig& c, Rng& rng)
        : cfg(c), patch_proj(ps, name + ".patch", c.patch * c.patch, c.dim, rng),
          cls_token(ps.add(name + ".cls", init::gaussian(rng, {1, c.dim}, 0.02))),
          pos_emb(ps.add(name + ".pos", init::gaussian(rng, {c.num_tokens(), c.dim}, 0.02))) {
        cfg.validate();
        for (std::size_t i = 0; i < c.depth; ++i)
            blocks.emplace_back(ps, name + ".blk" + std::to_string(i), c.dim, c.heads,
                                c.dim * c.ffn_mult, rng);
    }

    Var encode(const Tensor& image) const {
        if (image.rank() != 2 || image.shape[0] != cfg.input_side ||
            image.shape[1] != cfg.input_side)
            throw DimensionError("vit expects a " + std::to_string(cfg.input_side) +
                                 "-side square image");
        Var patches = patch_proj(constant(fusion::patchify(image, cfg.patch)));
        Var tokens = add(concat({cls_token, patches}, 0), pos_emb);
        for (const auto& blk : blocks) tokens = blk(tokens);
        return tokens; // (197, D)
    }
};

} // namespace vitas::hier

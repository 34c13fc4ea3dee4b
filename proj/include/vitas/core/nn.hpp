#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace vitas {

// Ordered, named parameter registry. Registration order is the checkpoint
// order and must be deterministic.
struct ParamStore {
    std::vector<std::pair<std::string, Var>> items;

    Var add(const std::string& name, Tensor init) {
        Var v = parameter(std::move(init));
        items.push_back({name, v});
        return v;
    }
    std::vector<Var> vars() const {
        std::vector<Var> out;
        out.reserve(items.size());
        for (const auto& [n, v] : items) out.push_back(v);
        return out;
    }
    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& [k, v] : items) n += v->value.numel();
        return n;
    }
    void copy_values_from(const ParamStore& o) {
        if (items.size() != o.items.size())
            throw std::runtime_error("param store size mismatch");
        for (std::size_t i = 0; i < items.size(); ++i)
            items[i].second->value.data = o.items[i].second->value.data;
    }
    void zero_grad() {
        for (auto& [n, v] : items)
            if (!v->grad.data.empty())
                std::fill(v->grad.data.begin(), v->grad.data.end(), 0.0);
    }
};

namespace init {

inline Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    Tensor t({fan_in, fan_out});
    double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return t;
}

inline Tensor gaussian(Rng& rng, std::vector<std::size_t> shape, double sd) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return t;
}

inline Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 0.0); }
inline Tensor ones(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 1.0); }

} // namespace init

struct Dense {
    Var w, b;
    Dense() = default;
    Dense(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : w(ps.add(name + ".w", init::glorot(rng, in, out))),
          b(ps.add(name + ".b", init::zeros({out}))) {}
    Var operator()(const Var& x) const { return add(matmul(x, w), b); }
};

struct LayerNorm {
    Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, std::size_t d)
        : gamma(ps.add(name + ".g", init::ones({d}))),
          beta(ps.add(name + ".b", init::zeros({d}))) {}
    Var operator()(const Var& x) const { return layernorm_lastdim(x, gamma, beta); }
};

struct Ffn {
    Dense fc1, fc2;
    Ffn() = default;
    Ffn(ParamStore& ps, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
        : fc1(ps, name + ".fc1", d, hidden, rng), fc2(ps, name + ".fc2", hidden, d, rng) {}
    Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
};

struct MhaResult {
    Var out;  // (Nq, D)
    Var attn; // (h, Nq, Nk)
};

struct Mha {
    Dense wq, wk, wv, wo;
    std::size_t heads = 1;
    std::size_t dim = 0;
    Mha() = default;
    Mha(ParamStore& ps, const std::string& name, std::size_t d, std::size_t h, Rng& rng)
        : wq(ps, name + ".q", d, d, rng), wk(ps, name + ".k", d, d, rng),
          wv(ps, name + ".v", d, d, rng), wo(ps, name + ".o", d, d, rng), heads(h), dim(d) {
        if (d % h != 0) throw std::invalid_argument("dim not divisible by heads");
    }

    // additive_mask: optional (Nq,Nk) tensor added to logits (0 or large negative)
    MhaResult operator()(const Var& q_tokens, const Var& kv_tokens,
                         const Tensor* additive_mask = nullptr) const {
        std::size_t nq = q_tokens->value.shape[0];
        std::size_t nk = kv_tokens->value.shape[0];
        std::size_t dh = dim / heads;
        auto split = [&](const Var& x, std::size_t n) {
            return permute(reshape(x, {n, heads, dh}), {1, 0, 2}); // (h,n,dh)
        };
        Var qh = split(wq(q_tokens), nq);
        Var kh = split(wk(kv_tokens), nk);
        Var vh = split(wv(kv_tokens), nk);
        Var logits = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (additive_mask) logits = add(logits, constant(*additive_mask));
        Var attn = softmax_lastdim(logits);                    // (h,nq,nk)
        Var ctx = matmul(attn, vh);                            // (h,nq,dh)
        Var merged = reshape(permute(ctx, {1, 0, 2}), {nq, dim});
        return {wo(merged), attn};
    }
};

// Pre-LN transformer block: x += MHA(LN(x)); x += FFN(LN(x))
struct EncoderBlock {
    LayerNorm ln1, ln2;
    Mha attn;
    Ffn ffn;
    EncoderBlock() = default;
    EncoderBlock(ParamStore& ps, const std::string& name, std::size_t d, std::size_t h,
                 std::size_t ffn_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", d), ln2(ps, name + ".ln2", d),
          attn(ps, name + ".attn", d, h, rng), ffn(ps, name + ".ffn", d, ffn_hidden, rng) {}

    Var operator()(const Var& x, const Tensor* additive_mask = nullptr) const {
        Var h = ln1(x);
        Var y = add(x, attn(h, h, additive_mask).out);
        return add(y, ffn(ln2(y)));
    }
};

// key-padding additive mask: (nq, nk), -1e9 where key is padded out
inline Tensor key_padding_mask(std::size_t nq, const std::vector<int>& key_keep) {
    Tensor m({nq, key_keep.size()}, 0.0);
    for (std::size_t j = 0; j < key_keep.size(); ++j)
        if (!key_keep[j])
            for (std::size_t i = 0; i < nq; ++i) m.at2(i, j) = -1e9;
    return m;
}

inline Tensor causal_mask(std::size_t n) {
    Tensor m({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.at2(i, j) = -1e9;
    return m;
}

} // namespace vitas

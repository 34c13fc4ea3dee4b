#pragma once

#include <optional>
#include <string>
#include <vector>

#include "../hier/tokenizer.hpp"
#include "../synth/vocab.hpp"

namespace vitas::summarize {

using fusion::DimensionError;
using fusion::NumericError;
using hier::VisualTokenSequence;
using interpret::InputError;

struct SummarizerConfig {
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t ffn_mult = 2;
    std::size_t max_positions = 512;
    std::size_t max_target_len = 256;
    double label_smoothing = 0.1;

    void validate() const {
        if (d_model % heads != 0) throw DimensionError("d_model not divisible by heads");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw InputError("label smoothing must be in [0,1)");
    }
};

struct FusedSequence {
    Var embeddings;        // (T_text + T_vis, D)
    std::vector<int> mask; // 1 attendable, 0 padding
};

struct DecoderOutput {
    std::vector<int> ids; // includes the terminating EOS when one was emitted
    std::vector<double> step_logprobs;
};

struct DecoderBlock {
    LayerNorm ln1, ln2, ln3;
    Mha self_attn, cross_attn;
    Ffn ffn;
    DecoderBlock() = default;
    DecoderBlock(ParamStore& ps, const std::string& name, std::size_t d, std::size_t h,
                 std::size_t ffn_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", d), ln2(ps, name + ".ln2", d), ln3(ps, name + ".ln3", d),
          self_attn(ps, name + ".self", d, h, rng), cross_attn(ps, name + ".cross", d, h, rng),
          ffn(ps, name + ".ffn", d, ffn_hidden, rng) {}

    Var operator()(const Var& x, const Var& memory, const Tensor& causal,
                   const Tensor* mem_mask) const {
        Var h = ln1(x);
        Var y = add(x, self_attn(h, h, &causal).out);
        y = add(y, cross_attn(ln2(y), memory, mem_mask).out);
        return add(y, ffn(ln3(y)));
    }
};

// Shared encoder over the fused text+visual sequence, causal decoder with
// cross attention. Token/position tables are learned; PAD analysis relies on
// masks, not on the embedding values.
struct SummarizerCore {
    SummarizerConfig cfg;
    Var tok_embed; // (V, D)
    Var pos_embed; // (max_positions, D)
    std::vector<EncoderBlock> enc;
    std::vector<DecoderBlock> dec;
    LayerNorm enc_ln, dec_ln;
    Dense out_proj;

    SummarizerCore() = default;
    SummarizerCore(ParamStore& ps, const std::string& name, const SummarizerConfig& c, Rng& rng)
        : cfg(c),
          tok_embed(ps.add(name + ".tok", init::gaussian(
                                              rng, {synth::vocabulary().size(), c.d_model}, 0.02))),
          pos_embed(ps.add(name + ".pos",
                           init::gaussian(rng, {c.max_positions, c.d_model}, 0.02))),
          enc_ln(ps, name + ".enc_ln", c.d_model), dec_ln(ps, name + ".dec_ln", c.d_model),
          out_proj(ps, name + ".out", c.d_model, synth::vocabulary().size(), rng) {
        cfg.validate();
        for (std::size_t i = 0; i < c.enc_layers; ++i)
            enc.emplace_back(ps, name + ".enc" + std::to_string(i), c.d_model, c.heads,
                             c.d_model * c.ffn_mult, rng);
        for (std::size_t i = 0; i < c.dec_layers; ++i)
            dec.emplace_back(ps, name + ".dec" + std::to_string(i), c.d_model, c.heads,
                             c.d_model * c.ffn_mult, rng);
    }

    // lookup + positions; PAD positions flagged in the returned mask
    std::pair<Var, std::vector<int>> embed_text(const std::vector<int>& ids) const {
        const std::size_t v = synth::vocabulary().size();
        for (int id : ids)
            if (id < 0 || id >= static_cast<int>(v)) throw InputError("token id out of vocab");
        if (ids.size() > cfg.max_positions) throw InputError("text longer than max positions");
        std::vector<int> mask(ids.size(), 1);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == synth::Vocabulary::kPad) mask[i] = 0;
        if (ids.empty()) return {Var(), mask};
        Var emb = embedding(tok_embed, ids);
        Var pos = slice(pos_embed, 0, 0, ids.size());
        return {add(emb, pos), mask};
    }

    // concatenation along the sequence axis, text first
    FusedSequence fuse(const Var& text_emb, const std::vector<int>& text_mask,
                       const VisualTokenSequence* vis) const {
        FusedSequence f;
        if (text_emb && vis) {
            if (text_emb->value.shape[1] != vis->tokens->value.shape[1])
                throw DimensionError("text/visual embedding dims differ");
            f.embeddings = concat({text_emb, vis->tokens}, 0);
            f.mask = text_mask;
            f.mask.insert(f.mask.end(), vis->mask.begin(), vis->mask.end());
        } else if (text_emb) {
            f.embeddings = text_emb;
            f.mask = text_mask;
        } else if (vis) {
            f.embeddings = vis->tokens;
            f.mask = vis->mask;
        } else {
            throw InputError("fuse needs at least one modality");
        }
        return f;
    }

    Var encode(const FusedSequence& fused) const {
        std::size_t n = fused.mask.size();
        Tensor key_mask = key_padding_mask(n, fused.mask);
        Var x = fused.embeddings;
        for (const auto& blk : enc) x = blk(x, &key_mask);
        return enc_ln(x);
    }

    Var decode_logits(const Var& memory, const std::vector<int>& mem_mask,
                      const std::vector<int>& dec_input_ids) const {
        Var x = embed_text(dec_input_ids).first;
        Tensor causal = causal_mask(dec_input_ids.size());
        Tensor mem = key_padding_mask(dec_input_ids.size(), mem_mask);
        for (const auto& blk : dec) x = blk(x, memory, causal, &mem);
        return out_proj(dec_ln(x)); // (T, V)
    }

    // teacher-forced label-smoothed cross entropy, averaged over non-pad
    // target positions; smoothing spreads eps over the full vocab
    Var decode_train(const FusedSequence& fused, const std::vector<int>& target_ids,
                     double label_smoothing) const {
        if (target_ids.empty()) throw InputError("empty target");
        if (target_ids.back() != synth::Vocabulary::kEos)
            throw InputError("target must end with EOS");
        std::vector<int> dec_in;
        dec_in.push_back(synth::Vocabulary::kBos);
        dec_in.insert(dec_in.end(), target_ids.begin(), target_ids.end() - 1);

        Var memory = encode(fused);
        Var logits = decode_logits(memory, fused.mask, dec_in);
        Var logp = log_softmax_lastdim(logits);

        const double v = static_cast<double>(synth::vocabulary().size());
        std::vector<int> gold;
        std::vector<double> keep;
        for (int id : target_ids) {
            gold.push_back(id);
            keep.push_back(id == synth::Vocabulary::kPad ? 0.0 : 1.0);
        }
        double n_keep = 0.0;
        for (double k : keep) n_keep += k;
        if (n_keep == 0.0) throw InputError("target is all padding");

        Tensor keep_t({gold.size()});
        keep_t.data = keep;
        Var gold_lp = mul(take_lastdim(logp, gold), constant(keep_t)); // (T)
        Var sum_lp = mul(reshape(sum_all_lastdim(logp), {gold.size()}), constant(keep_t));

        double eps = label_smoothing;
        Var ce = add(scale(sum_all(gold_lp), 1.0 - eps), scale(sum_all(sum_lp), eps / v));
        Var loss = scale(ce, -1.0 / n_keep);
        if (!std::isfinite(loss->value.data[0]))
            throw NumericError("non-finite teacher-forcing loss");
        return loss;
    }

    DecoderOutput generate(const FusedSequence& fused, std::size_t max_len,
                           std::size_t beam = 1) const {
        if (max_len < 1) throw InputError("max_len must be >= 1");
        NoGradGuard ng;
        Var memory = encode(fused);
        if (beam <= 1) return greedy_decode(memory, fused.mask, max_len);
        return beam_decode(memory, fused.mask, max_len, beam);
    }

  private:
    static Var sum_all_lastdim(const Var& x) {
        // (T,V) -> (T,1): sum over vocabulary
        Tensor ones({x->value.shape[1], 1}, 1.0);
        return matmul(x, constant(ones));
    }

    DecoderOutput greedy_decode(const Var& memory, const std::vector<int>& mem_mask,
                                std::size_t max_len) const {
        DecoderOutput out;
        std::vector<int> dec_in = {synth::Vocabulary::kBos};
        for (std::size_t step = 0; step < max_len; ++step) {
            Var logits = decode_logits(memory, mem_mask, dec_in);
            std::size_t v = logits->value.shape[1];
            const double* row = logits->value.data.data() + (dec_in.size() - 1) * v;
            int best = 0;
            for (std::size_t j = 1; j < v; ++j)
                if (row[j] > row[best]) best = static_cast<int>(j); // ties keep lowest id
            double mx = row[best];
            double lse = 0.0;
            for (std::size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
            out.ids.push_back(best);
            out.step_logprobs.push_back(-std::log(lse)); // log softmax at argmax
            if (best == synth::Vocabulary::kEos) break;
            dec_in.push_back(best);
        }
        return out;
    }

    DecoderOutput beam_decode(const Var& memory, const std::vector<int>& mem_mask,
                              std::size_t max_len, std::size_t beam) const {
        struct Hyp {
            std::vector<int> ids;
            std::vector<double> lps;
            double score = 0.0;
            bool done = false;
        };
        std::vector<Hyp> beams = {Hyp{}};
        for (std::size_t step = 0; step < max_len; ++step) {
            std::vector<Hyp> cand;
            bool expanded = false;
            for (const auto& h : beams) {
                if (h.done) {
                    cand.push_back(h);
                    continue;
                }
                expanded = true;
                std::vector<int> dec_in = {synth::Vocabulary::kBos};
                dec_in.insert(dec_in.end(), h.ids.begin(), h.ids.end());
                Var logits = decode_logits(memory, mem_mask, dec_in);
                std::size_t v = logits->value.shape[1];
                const double* row = logits->value.data.data() + (dec_in.size() - 1) * v;
                double mx = row[0];
                for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                double lse = 0.0;
                for (std::size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
                double log_z = mx + std::log(lse);
                for (std::size_t j = 0; j < v; ++j) {
                    Hyp next = h;
                    double lp = row[j] - log_z;
                    next.ids.push_back(static_cast<int>(j));
                    next.lps.push_back(lp);
                    next.score += lp;
                    next.done = static_cast<int>(j) == synth::Vocabulary::kEos;
                    cand.push_back(std::move(next));
                }
            }
            if (!expanded) break;
            std::sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.ids < b.ids; // lexicographic tie-break
            });
            if (cand.size() > beam) cand.resize(beam);
            beams = std::move(cand);
        }
        const Hyp* best = &beams[0];
        for (const auto& h : beams)
            if (h.done && (!best->done || h.score > best->score)) best = &h;
        DecoderOutput out;
        out.ids = best->ids;
        out.step_logprobs = best->lps;
        return out;
    }
};

} // namespace vitas::summarize

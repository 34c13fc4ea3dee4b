#include <catch2/catch_amalgamated.hpp>

#include <vitas/summarize/train.hpp>

#include "support/gradcheck.hpp"

using namespace vitas;
using namespace vitas::summarize;
using synth::Vocabulary;

namespace {

SummarizerConfig micro_sum() {
    SummarizerConfig s;
    s.d_model = 8;
    s.heads = 2;
    s.enc_layers = 1;
    s.dec_layers = 1;
    s.max_positions = 64;
    return s;
}

hier::ViTConfig micro_vit() {
    hier::ViTConfig v;
    v.input_side = 16;
    v.patch = 4;
    v.dim = 8;
    v.heads = 2;
    v.depth = 1;
    return v;
}

hier::TokenizerConfig micro_tok() {
    hier::TokenizerConfig t;
    t.d_vit = 8;
    t.d_dec = 8;
    t.vit_grid = 4;
    t.view_tokens = 8;
    t.geom_hidden = 6;
    return t;
}

SummarizerPipeline micro_pipeline(std::uint64_t seed) {
    return SummarizerPipeline(micro_vit(), micro_tok(), micro_sum(), seed);
}

std::vector<int> ids_of(const std::string& text, bool with_eos = false) {
    auto ids = synth::encode(text);
    if (with_eos) ids.push_back(Vocabulary::kEos);
    return ids;
}

SumSample text_sample(const std::string& findings, const std::string& impression,
                      const std::string& id = "t0") {
    SumSample s;
    s.id = id;
    s.findings_ids = ids_of(findings);
    s.target_ids = ids_of(impression, true);
    s.impression_ref = impression;
    return s;
}

} // namespace

TEST_CASE("text embedding looks up rows and flags padding", "[summarizer]") {
    auto p = micro_pipeline(1);
    std::vector<int> ids = {Vocabulary::kPad, Vocabulary::kPad};
    auto [emb, mask] = p.core.embed_text(ids);
    CHECK(mask == std::vector<int>{0, 0});

    std::vector<int> real = ids_of("the lungs are clear .");
    auto [e1, m1] = p.core.embed_text(real);
    auto [e2, m2] = p.core.embed_text(real);
    CHECK(e1->value.data == e2->value.data);
    for (int m : m1) CHECK(m == 1);

    // row oracle: embedding + position
    for (std::size_t t = 0; t < real.size(); ++t)
        for (std::size_t j = 0; j < 8; ++j) {
            double want = p.core.tok_embed->value.at2(static_cast<std::size_t>(real[t]), j) +
                          p.core.pos_embed->value.at2(t, j);
            REQUIRE(e1->value.at2(t, j) == Catch::Approx(want).margin(1e-12));
        }

    CHECK_THROWS_AS(p.core.embed_text({99999}), InputError);
}

TEST_CASE("fusion concatenates text before visual tokens", "[summarizer]") {
    auto p = micro_pipeline(2);
    auto [emb, mask] = p.core.embed_text(ids_of("no acute findings ."));

    Rng rng(3);
    Tensor img({16, 16});
    for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
    SumSample s;
    s.img_f = fusion::quantize(fusion::image_tensor({16, 16, View::Frontal}));
    s.img_f.assign(256, 128);
    auto vis = build_visual_sequence(p, s, Mode::FullImage, nullptr);
    CHECK(vis.tokens->value.shape[0] == 16);

    auto fused = p.core.fuse(emb, mask, &vis);
    CHECK(fused.embeddings->value.shape[0] == emb->value.shape[0] + 16);
    std::size_t popcount = 0;
    for (int m : fused.mask) popcount += static_cast<std::size_t>(m);
    std::size_t want = emb->value.shape[0]; // all text attendable
    for (int m : vis.mask) want += static_cast<std::size_t>(m);
    CHECK(popcount == want);

    // empty text: visual-only sequence
    auto fused_vis = p.core.fuse(Var(), {}, &vis);
    CHECK(fused_vis.embeddings->value.shape[0] == 16);
}

TEST_CASE("teacher-forced loss: uniform logits, saturation limit, oracle", "[summarizer]") {
    auto p = micro_pipeline(4);
    const double v = static_cast<double>(synth::vocabulary().size());

    // zero output projection -> uniform logits -> loss = ln V for any smoothing
    std::fill(p.core.out_proj.w->value.data.begin(), p.core.out_proj.w->value.data.end(), 0.0);
    std::fill(p.core.out_proj.b->value.data.begin(), p.core.out_proj.b->value.data.end(), 0.0);
    auto [emb, mask] = p.core.embed_text(ids_of("the lungs are clear ."));
    FusedSequence fused = p.core.fuse(emb, mask, nullptr);
    auto target = ids_of("no acute findings .", true);
    for (double eps : {0.0, 0.1, 0.5}) {
        Var loss = p.core.decode_train(fused, target, eps);
        CHECK(loss->value.data[0] == Catch::Approx(std::log(v)).epsilon(1e-10));
    }

    // eps=0 with the gold token's logit dominant: loss approaches zero
    std::vector<int> eos_only = {Vocabulary::kEos};
    p.core.out_proj.b->value.data[Vocabulary::kEos] = 60.0;
    Var tiny = p.core.decode_train(fused, eos_only, 0.0);
    CHECK(tiny->value.data[0] < 1e-8);
    p.core.out_proj.b->value.data[Vocabulary::kEos] = 0.0;

    // random small case against a scalar CE oracle with the smoothing convention
    auto p2 = micro_pipeline(5);
    auto [emb2, mask2] = p2.core.embed_text(ids_of("there is evidence of consolidation ."));
    FusedSequence fused2 = p2.core.fuse(emb2, mask2, nullptr);
    auto tgt = ids_of("moderate consolidation in the left mid zone .", true);
    double eps = 0.1;
    Var loss2 = p2.core.decode_train(fused2, tgt, eps);

    std::vector<int> dec_in = {Vocabulary::kBos};
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end() - 1);
    NoGradGuard ng;
    Var memory = p2.core.encode(fused2);
    Var logits = p2.core.decode_logits(memory, fused2.mask, dec_in);
    double total = 0.0;
    std::size_t vv = logits->value.shape[1];
    for (std::size_t t = 0; t < tgt.size(); ++t) {
        const double* row = logits->value.data.data() + t * vv;
        double mx = row[0];
        for (std::size_t j = 1; j < vv; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < vv; ++j) lse += std::exp(row[j] - mx);
        double log_z = mx + std::log(lse);
        double ce = 0.0;
        for (std::size_t j = 0; j < vv; ++j) {
            double q = eps / static_cast<double>(vv) +
                       (static_cast<int>(j) == tgt[t] ? 1.0 - eps : 0.0);
            ce -= q * (row[j] - log_z);
        }
        total += ce;
    }
    total /= static_cast<double>(tgt.size());
    CHECK(loss2->value.data[0] == Catch::Approx(total).epsilon(1e-9));

    CHECK_THROWS_AS(p2.core.decode_train(fused2, ids_of("no eos here"), 0.1), InputError);
}

TEST_CASE("masked fused positions have zero influence on unmasked outputs", "[summarizer]") {
    auto p = micro_pipeline(6);
    std::vector<int> ids = ids_of("the lungs are clear .");
    ids.push_back(Vocabulary::kPad);
    ids.push_back(Vocabulary::kPad);
    auto [emb1, mask1] = p.core.embed_text(ids);
    Var enc1 = p.core.encode(p.core.fuse(emb1, mask1, nullptr));

    // perturb the PAD embedding row arbitrarily and re-run
    for (std::size_t j = 0; j < 8; ++j)
        p.core.tok_embed->value.at2(Vocabulary::kPad, j) = 1e5 * (static_cast<double>(j) + 1);
    auto [emb2, mask2] = p.core.embed_text(ids);
    Var enc2 = p.core.encode(p.core.fuse(emb2, mask2, nullptr));

    for (std::size_t t = 0; t + 2 < ids.size(); ++t)
        for (std::size_t j = 0; j < 8; ++j)
            REQUIRE(enc1->value.at2(t, j) == enc2->value.at2(t, j));
}

TEST_CASE("generation: max_len, beam-1 equivalence, EOS stop", "[summarizer]") {
    auto p = micro_pipeline(7);
    auto [emb, mask] = p.core.embed_text(ids_of("single frontal view of the chest was obtained ."));
    FusedSequence fused = p.core.fuse(emb, mask, nullptr);

    auto one = p.core.generate(fused, 1);
    CHECK(one.ids.size() == 1);

    auto greedy = p.core.generate(fused, 12, 1);
    auto beam1 = p.core.generate(fused, 12, 1);
    CHECK(greedy.ids == beam1.ids);
    CHECK(greedy.ids.size() <= 12);
    for (int id : greedy.ids) {
        CHECK(id >= 0);
        CHECK(id < static_cast<int>(synth::vocabulary().size()));
    }

    // hand-wired position-driven logits: EOS becomes dominant at step 3
    auto q = micro_pipeline(8);
    for (auto& [name, var] : q.ps.items) {
        bool wipe = name.find(".self") != std::string::npos ||
                    name.find(".cross") != std::string::npos ||
                    name.find(".attn") != std::string::npos ||
                    name.find(".ffn") != std::string::npos ||
                    name.find(".enc") == 0;
        if (wipe) std::fill(var->value.data.begin(), var->value.data.end(), 0.0);
    }
    std::fill(q.core.tok_embed->value.data.begin(), q.core.tok_embed->value.data.end(), 0.0);
    std::fill(q.core.pos_embed->value.data.begin(), q.core.pos_embed->value.data.end(), 0.0);
    for (std::size_t t = 0; t < 4; ++t) q.core.pos_embed->value.at2(t, t) = 1.0;
    std::fill(q.core.out_proj.w->value.data.begin(), q.core.out_proj.w->value.data.end(), 0.0);
    std::fill(q.core.out_proj.b->value.data.begin(), q.core.out_proj.b->value.data.end(), 0.0);
    int tok_a = synth::vocabulary().id("lungs");
    int tok_b = synth::vocabulary().id("clear");
    q.core.out_proj.w->value.at2(0, static_cast<std::size_t>(tok_a)) = 10.0;
    q.core.out_proj.w->value.at2(1, static_cast<std::size_t>(tok_b)) = 10.0;
    q.core.out_proj.w->value.at2(2, Vocabulary::kEos) = 10.0;

    auto [qe, qm] = q.core.embed_text(ids_of("the lungs are clear ."));
    auto out = q.core.generate(q.core.fuse(qe, qm, nullptr), 10);
    REQUIRE(out.ids.size() == 3);
    CHECK(out.ids[0] == tok_a);
    CHECK(out.ids[1] == tok_b);
    CHECK(out.ids[2] == Vocabulary::kEos);

    auto beam = q.core.generate(q.core.fuse(qe, qm, nullptr), 10, 4);
    CHECK(beam.ids == out.ids);
}

TEST_CASE("summarizer blocks pass the finite-difference check", "[summarizer][gradcheck]") {
    auto p = micro_pipeline(9);
    Rng rng(10);
    SumSample s = text_sample("there is evidence of pneumothorax .",
                              "large pneumothorax in the left upper zone .");
    Tensor img({16, 16});
    for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
    s.img_f = fusion::quantize(img);
    s.clusters_f = {{{{1, 1}, {2, 1}}, {0.5, 0.3}}};

    std::vector<std::pair<std::string, Var>> leaves;
    for (auto& [n, v] : p.ps.items) leaves.push_back({n, v});
    auto res = testsupport::gradcheck([&] { return forward_loss(p, s, Mode::Vitas); },
                                      leaves, 1e-5);
    INFO(res.worst);
    CHECK(res.ok(1e-3));
}

TEST_CASE("training: zero lr freezes, fixed seed reproduces, loss descends",
          "[summarizer][train]") {
    std::vector<SumSample> train = {
        text_sample("there is evidence of cardiomegaly .",
                    "moderate cardiomegaly in the left lower zone .", "a"),
        text_sample("findings consistent with pulmonary edema are seen .",
                    "small pulmonary edema in the right mid zone .", "b"),
        text_sample("the lungs are clear .", "no acute cardiopulmonary process .", "c"),
        text_sample("pneumothorax is noted on the current exam .",
                    "large pneumothorax in the right upper zone .", "d"),
    };

    SumTrainConfig tc;
    tc.epochs = 1;
    tc.batch = 2;
    tc.lr = 0.0;
    tc.seed = 3;
    auto frozen = micro_pipeline(11);
    auto before = frozen.ps.items[5].second->value.data;
    train_summarizer(frozen, train, {}, Mode::TextOnly, tc);
    CHECK(frozen.ps.items[5].second->value.data == before);

    tc.lr = 3e-3;
    tc.epochs = 10;
    auto m1 = micro_pipeline(11);
    auto m2 = micro_pipeline(11);
    auto r1 = train_summarizer(m1, train, {}, Mode::TextOnly, tc);
    auto r2 = train_summarizer(m2, train, {}, Mode::TextOnly, tc);
    CHECK(r1.train_losses == r2.train_losses);

    // teacher-forced loss decreases monotonically over the first 10 epochs
    for (std::size_t e = 1; e < r1.train_losses.size(); ++e)
        CHECK(r1.train_losses[e] < r1.train_losses[e - 1]);
}

TEST_CASE("summarizer overfits a small set to exact-match generation",
          "[summarizer][train][slow]") {
    std::vector<SumSample> train;
    const char* findings[] = {
        "there is evidence of cardiomegaly .",
        "findings consistent with pleural effusion are seen .",
        "consolidation is noted on the current exam .",
        "the lungs are clear .",
        "there is evidence of support devices .",
        "pulmonary edema is noted on the current exam .",
    };
    const char* impressions[] = {
        "moderate cardiomegaly in the left lower zone .",
        "large pleural effusion in the right lower zone .",
        "small consolidation in the left upper zone .",
        "no acute cardiopulmonary process .",
        "moderate support devices in the right mid zone .",
        "severe pulmonary edema in the left mid zone .",
    };
    for (int i = 0; i < 6; ++i)
        train.push_back(text_sample(findings[i], impressions[i], "s" + std::to_string(i)));

    SummarizerConfig scfg = micro_sum();
    scfg.d_model = 32;
    scfg.heads = 4;
    SummarizerPipeline model(micro_vit(), micro_tok(), scfg, 13);

    SumTrainConfig tc;
    tc.epochs = 120;
    tc.batch = 6;
    tc.lr = 3e-3;
    tc.seed = 13;
    tc.threads = 2;
    train_summarizer(model, train, {}, Mode::TextOnly, tc);

    std::size_t exact = 0;
    for (const auto& s : train) {
        auto out = generate_one(model, s, Mode::TextOnly, 24, 1);
        std::vector<int> want = s.target_ids; // includes EOS
        if (out.ids == want) ++exact;
    }
    INFO("exact matches: " << exact << "/6");
    CHECK(exact >= 6 * 95 / 100);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include <vitas/fusion/model.hpp>
#include <vitas/fusion/train.hpp>

#include "support/gradcheck.hpp"

using namespace vitas;
using namespace vitas::fusion;

namespace {

FusionConfig tiny_cfg() {
    FusionConfig cfg;
    cfg.input_side = 8;
    cfg.patch = 4; // N = 4 tokens
    cfg.dim = 4;
    cfg.heads = 2;
    cfg.pre_stages = 1;
    cfg.fusion_layers = 1;
    cfg.post_stages = 1;
    cfg.feature_dim = 4;
    return cfg;
}

Tensor random_image(Rng& rng, std::size_t side) {
    Tensor t({side, side});
    for (auto& v : t.data) v = rng.uniform(0.0, 1.0);
    return t;
}

void set_identity(Dense& d) {
    std::size_t n = d.w->value.shape[0];
    std::fill(d.w->value.data.begin(), d.w->value.data.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) d.w->value.at2(i, i) = 1.0;
    std::fill(d.b->value.data.begin(), d.b->value.data.end(), 0.0);
}

} // namespace

TEST_CASE("patch embedding token counts and bias row", "[fusion]") {
    FusionConfig c256;
    c256.input_side = 256;
    c256.patch = 16;
    CHECK(c256.num_tokens() == 256);
    c256.patch = 32;
    CHECK(c256.num_tokens() == 64);
    c256.patch = 24; // 256 % 24 != 0
    CHECK_THROWS_AS(c256.validate(), DimensionError);

    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 7);
    std::fill(model.backbone_f.pos_emb->value.data.begin(),
              model.backbone_f.pos_emb->value.data.end(), 0.0);
    Tensor zero_img({cfg.input_side, cfg.input_side}, 0.0);
    Var tokens = model.patch_embed(patchify(zero_img, cfg.patch), model.backbone_f);
    for (std::size_t i = 0; i < cfg.num_tokens(); ++i)
        for (std::size_t j = 0; j < cfg.dim; ++j)
            CHECK(tokens->value.at2(i, j) == model.backbone_f.patch_proj.b->value.data[j]);
}

TEST_CASE("patchify is grid row-major", "[fusion]") {
    Tensor img({4, 4});
    for (std::size_t i = 0; i < 16; ++i) img.data[i] = static_cast<double>(i);
    Tensor p = patchify(img, 2);
    REQUIRE(p.shape == std::vector<std::size_t>{4, 4});
    // cell (0,0) holds pixels (0,0),(0,1),(1,0),(1,1)
    CHECK(p.at2(0, 0) == 0.0);
    CHECK(p.at2(0, 1) == 1.0);
    CHECK(p.at2(0, 2) == 4.0);
    CHECK(p.at2(0, 3) == 5.0);
    // cell (1,0) is grid index 2
    CHECK(p.at2(2, 0) == 8.0);
}

TEST_CASE("cross attention matches a hand-built single-head oracle", "[fusion]") {
    Rng rng(3);
    ParamStore ps;
    Mha mha(ps, "t", 2, 1, rng);
    set_identity(mha.wq);
    set_identity(mha.wk);
    set_identity(mha.wv);
    set_identity(mha.wo);

    Tensor fv({2, 2});
    fv.data = {1.0, 0.0, 0.0, 1.0};
    Tensor lv({2, 2});
    lv.data = {1.0, 2.0, 3.0, 4.0};
    auto out = mha(constant(fv), constant(lv));

    // oracle with explicit loops
    double scale = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < 2; ++i) {
        double s0 = scale * (fv.at2(i, 0) * lv.at2(0, 0) + fv.at2(i, 1) * lv.at2(0, 1));
        double s1 = scale * (fv.at2(i, 0) * lv.at2(1, 0) + fv.at2(i, 1) * lv.at2(1, 1));
        double m = std::max(s0, s1);
        double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
        double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        for (std::size_t j = 0; j < 2; ++j) {
            double want = a0 * lv.at2(0, j) + a1 * lv.at2(1, j);
            CHECK(out.out->value.at2(i, j) == Catch::Approx(want).epsilon(1e-12));
        }
        CHECK(out.attn->value.at3(0, i, 0) == Catch::Approx(a0).epsilon(1e-12));
        CHECK(out.attn->value.at3(0, i, 1) == Catch::Approx(a1).epsilon(1e-12));
    }
}

TEST_CASE("attention rows sum to one over unmasked keys", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 9);
    Rng rng(4);
    SampleViews views;
    views.frontal = patchify(random_image(rng, cfg.input_side), cfg.patch);
    views.lateral = patchify(random_image(rng, cfg.input_side), cfg.patch);
    auto res = model.forward(views);
    const Tensor& a = res.attn_f_to_l->value;
    for (std::size_t h = 0; h < a.shape[0]; ++h)
        for (std::size_t i = 0; i < a.shape[1]; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.shape[2]; ++j) s += a.at3(h, i, j);
            REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
        }
}

TEST_CASE("missing lateral view leaves the frontal branch bit-identical", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 21);
    Rng rng(5);
    SampleViews a, b;
    a.frontal = patchify(random_image(rng, cfg.input_side), cfg.patch);
    b.frontal = a.frontal;
    a.lateral = patchify(random_image(rng, cfg.input_side), cfg.patch);
    b.lateral = patchify(random_image(rng, cfg.input_side), cfg.patch); // different contents

    auto ra = model.forward(a, true, false);
    auto rb = model.forward(b, true, false);
    CHECK(ra.tokens_f->value.data == rb.tokens_f->value.data);
    CHECK(ra.logits->value.data == rb.logits->value.data);

    // cross update is exactly the zero tensor when the source view is absent:
    // output equals f + FFN(LN(f)) computed directly
    const FusionLayer& layer = model.fusion[0];
    Var f = model.patch_embed(a.frontal, model.backbone_f);
    for (const auto& blk : model.backbone_f.pre) f = blk(f);
    auto crossed = model.cross_attend(f, constant(Tensor({cfg.num_tokens(), cfg.dim}, 1e9)),
                                      true, false, layer);
    Var manual = add(f, layer.ffn_f(layer.ln_f(f)));
    CHECK(crossed.f->value.data == manual->value.data);
}

TEST_CASE("missing-view substitution broadcasts the learned token", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 2);
    Rng rng(6);
    Var tokens = constant(patchify(random_image(rng, cfg.input_side), cfg.patch));

    Var same = model.substitute_missing_view(tokens, true, model.missing_f);
    CHECK(same.get() == tokens.get());

    Var replaced = model.substitute_missing_view(tokens, false, model.missing_f);
    for (std::size_t i = 0; i < cfg.num_tokens(); ++i)
        for (std::size_t j = 0; j < cfg.dim; ++j)
            CHECK(replaced->value.at2(i, j) == model.missing_f->value.data[j]);
}

TEST_CASE("global pooling is a mean with projection", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 33);
    Rng rng(8);

    Tensor one_token({1, cfg.dim});
    for (auto& v : one_token.data) v = rng.normal();
    Tensor identical({cfg.num_tokens(), cfg.dim});
    for (std::size_t i = 0; i < cfg.num_tokens(); ++i)
        for (std::size_t j = 0; j < cfg.dim; ++j) identical.at2(i, j) = one_token.data[j];
    Var pooled_mean = mean_rows(constant(identical));
    for (std::size_t j = 0; j < cfg.dim; ++j)
        CHECK(pooled_mean->value.data[j] == Catch::Approx(one_token.data[j]).epsilon(1e-12));

    // permutation invariance and brute-force mean
    Tensor tokens({cfg.num_tokens(), cfg.dim});
    for (auto& v : tokens.data) v = rng.normal();
    Tensor shuffled = tokens;
    std::swap_ranges(shuffled.data.begin(), shuffled.data.begin() + cfg.dim,
                     shuffled.data.begin() + 2 * cfg.dim);
    Var za = model.global_pool(constant(tokens), model.pool_f);
    Var zb = model.global_pool(constant(shuffled), model.pool_f);
    for (std::size_t j = 0; j < cfg.feature_dim; ++j)
        CHECK(za->value.data[j] == Catch::Approx(zb->value.data[j]).margin(1e-12));

    for (std::size_t j = 0; j < cfg.dim; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < cfg.num_tokens(); ++i) s += tokens.at2(i, j);
        s /= static_cast<double>(cfg.num_tokens());
        CHECK(mean_rows(constant(tokens))->value.data[j] == Catch::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("late fusion concatenates two single-query attention outputs", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 44);
    Rng rng(9);
    Tensor zf({1, cfg.feature_dim}), zl({1, cfg.feature_dim});
    for (auto& v : zf.data) v = rng.normal();
    for (auto& v : zl.data) v = rng.normal();

    Var fused = model.late_fuse(constant(zf), constant(zl));
    CHECK(fused->value.shape == std::vector<std::size_t>{1, 2 * cfg.feature_dim});

    // identity projections + single key: each half equals the other side's value
    set_identity(model.late_lf.wq);
    set_identity(model.late_lf.wk);
    set_identity(model.late_lf.wv);
    set_identity(model.late_lf.wo);
    set_identity(model.late_fl.wq);
    set_identity(model.late_fl.wk);
    set_identity(model.late_fl.wv);
    set_identity(model.late_fl.wo);
    Var fused_id = model.late_fuse(constant(zf), constant(zl));
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
        CHECK(fused_id->value.data[j] == Catch::Approx(zl.data[j]).epsilon(1e-12));
        CHECK(fused_id->value.data[cfg.feature_dim + j] ==
              Catch::Approx(zf.data[j]).epsilon(1e-12));
    }
    // tied weights: swapping inputs swaps the halves
    Var swapped = model.late_fuse(constant(zl), constant(zf));
    for (std::size_t j = 0; j < cfg.feature_dim; ++j)
        CHECK(swapped->value.data[j] ==
              Catch::Approx(fused_id->value.data[cfg.feature_dim + j]).epsilon(1e-12));
}

TEST_CASE("classifier outputs sigmoid probabilities", "[fusion]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 55);

    std::fill(model.cls_hidden.w->value.data.begin(), model.cls_hidden.w->value.data.end(), 0.0);
    std::fill(model.cls_hidden.b->value.data.begin(), model.cls_hidden.b->value.data.end(), 0.0);
    std::fill(model.cls_out.w->value.data.begin(), model.cls_out.w->value.data.end(), 0.0);
    std::fill(model.cls_out.b->value.data.begin(), model.cls_out.b->value.data.end(), 0.0);

    Tensor z({1, 2 * cfg.feature_dim}, 0.7);
    Var probs = model.classify(constant(z));
    for (double p : probs->value.data) CHECK(p == 0.5);

    // +20 logit saturates within 1e-8
    std::fill(model.cls_out.b->value.data.begin(), model.cls_out.b->value.data.end(), 20.0);
    Var hot = model.classify(constant(z));
    for (double p : hot->value.data) {
        CHECK(p > 1.0 - 1e-8);
        CHECK(p < 1.0);
    }

    Rng rng(10);
    for (auto& v : model.cls_out.w->value.data) v = rng.normal(0, 3.0);
    for (auto& v : model.cls_hidden.w->value.data) v = rng.normal(0, 3.0);
    Var any = model.classify(constant(z));
    for (double p : any->value.data) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("bce loss matches the scalar-loop oracle", "[fusion]") {
    Rng rng(12);
    Tensor p({1, 8}), y({1, 8});
    for (auto& v : p.data) v = rng.uniform(0.01, 0.99);
    for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

    Var loss = bce_loss(constant(p), y);
    double want = 0.0;
    for (std::size_t c = 0; c < 8; ++c)
        want += -(y.data[c] * std::log(p.data[c]) + (1 - y.data[c]) * std::log(1 - p.data[c]));
    want /= 8.0;
    CHECK(loss->value.data[0] == Catch::Approx(want).epsilon(1e-12));

    Tensor half({1, 8}, 0.5), any_y({1, 8}, 1.0);
    CHECK(bce_loss(constant(half), any_y)->value.data[0] ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor exact({1, 8});
    for (std::size_t c = 0; c < 8; ++c) exact.data[c] = y.data[c];
    CHECK(bce_loss(constant(exact), y)->value.data[0] < 1e-11);
    CHECK(bce_loss(constant(exact), y)->value.data[0] >= 0.0);
}

TEST_CASE("every fusion block passes the finite-difference check", "[fusion][gradcheck]") {
    FusionConfig cfg = tiny_cfg();
    FusionModel model(cfg, 77);
    Rng rng(13);
    SampleViews views;
    views.frontal = patchify(random_image(rng, cfg.input_side), cfg.patch);
    views.lateral = patchify(random_image(rng, cfg.input_side), cfg.patch);
    Tensor y({1, synth::kNumClasses});
    for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

    std::vector<std::pair<std::string, Var>> leaves;
    for (auto& [n, v] : model.ps.items) leaves.push_back({n, v});

    auto res = testsupport::gradcheck(
        [&] { return bce_loss(model.forward(views).probs, y); }, leaves);
    INFO(res.worst);
    CHECK(res.ok(1e-3));
}

TEST_CASE("classifier training is deterministic and respects zero lr", "[fusion][train]") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vitas_fusion_train";
    fs::remove_all(dir);
    synth::SynthConfig scfg;
    scfg.img_side = 32;
    scfg.blob_r_min = 3;
    scfg.blob_r_max = 6;
    auto man = synth::build_dataset(12, {0.7, 0.15, 0.15}, scfg, dir.string(), 3);

    FusionConfig cfg;
    cfg.input_side = 32;
    cfg.patch = 8;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.pre_stages = 1;
    cfg.fusion_layers = 1;
    cfg.post_stages = 1;
    cfg.feature_dim = 8;

    ClsTrainConfig tc;
    tc.epochs = 1;
    tc.batch = 4;
    tc.lr = 0.0;
    tc.seed = 5;

    FusionModel zero_lr(cfg, 5);
    auto before = zero_lr.ps.items[3].second->value.data;
    train_classifier(zero_lr, man, tc);
    CHECK(zero_lr.ps.items[3].second->value.data == before);

    tc.lr = 1e-3;
    tc.epochs = 2;
    FusionModel m1(cfg, 5), m2(cfg, 5);
    auto r1 = train_classifier(m1, man, tc);
    auto r2 = train_classifier(m2, man, tc);
    CHECK(r1.epoch_losses == r2.epoch_losses);
    CHECK(r1.epoch_val_auroc == r2.epoch_val_auroc);
    fs::remove_all(dir);
}

TEST_CASE("classifier overfits a small two-class set", "[fusion][train][slow]") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vitas_fusion_overfit";
    fs::remove_all(dir);
    synth::SynthConfig scfg;
    scfg.img_side = 64;
    scfg.blob_r_min = 5;
    scfg.blob_r_max = 10;
    scfg.class_priors = {0.5, 0, 0, 0, 0, 0, 0.5, 0}; // two separable classes
    scfg.missing_lateral_prob = 1.0;                  // frontal-only keeps it fast
    auto man = synth::build_dataset(40, {0.8, 0.1, 0.1}, scfg, dir.string(), 11);

    FusionConfig cfg;
    cfg.input_side = 64;
    cfg.patch = 16;
    cfg.dim = 32;
    cfg.heads = 4;
    cfg.pre_stages = 1;
    cfg.fusion_layers = 1;
    cfg.post_stages = 1;
    cfg.feature_dim = 32;

    ClsTrainConfig tc;
    tc.epochs = 200;
    tc.batch = 8;
    tc.lr = 1e-3;
    tc.seed = 17;
    tc.target_val_auroc = 1.0;
    tc.threads = 2;

    FusionModel model(cfg, 17);
    // train AUROC target: evaluate on the train split after training
    auto result = train_classifier(model, man, tc);

    std::vector<CachedSample> train_set;
    for (auto* r : man.split("train")) train_set.push_back(cache_sample(man, *r, cfg));
    auto probs = predict_probs(model, train_set, 2);
    std::vector<std::array<int, synth::kNumClasses>> labels;
    for (const auto& cs : train_set) labels.push_back(cs.labels);
    double train_auroc = macro_auroc(probs, labels);
    INFO("train AUROC " << train_auroc << " best val " << result.best_val_auroc);
    CHECK(train_auroc >= 0.99);
    fs::remove_all(dir);
}

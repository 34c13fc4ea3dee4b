#include <catch2/catch_amalgamated.hpp>

#include <vitas/core/rng.hpp>
#include <vitas/roi/segmentation.hpp>
#include <vitas/synth/generator.hpp>

using namespace vitas;
using namespace vitas::roi;

namespace {

RoiMask random_mask(Rng& rng, std::size_t h, std::size_t w, double density = 0.4) {
    RoiMask m(h, w);
    for (auto& v : m.grid) v = rng.bernoulli(density) ? 1 : 0;
    return m;
}

// literal double-loop closing oracle with the same clipped-border rule
RoiMask brute_close(const RoiMask& m, int k) {
    int half = k / 2;
    auto nbhd_any = [&](const RoiMask& src, long r, long c) {
        for (long dr = -half; dr <= half; ++dr)
            for (long dc = -half; dc <= half; ++dc) {
                long rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= (long)src.h || cc >= (long)src.w) continue;
                if (src.at((std::size_t)rr, (std::size_t)cc)) return true;
            }
        return false;
    };
    auto nbhd_all = [&](const RoiMask& src, long r, long c) {
        for (long dr = -half; dr <= half; ++dr)
            for (long dc = -half; dc <= half; ++dc) {
                long rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= (long)src.h || cc >= (long)src.w) continue;
                if (!src.at((std::size_t)rr, (std::size_t)cc)) return false;
            }
        return true;
    };
    RoiMask dil(m.h, m.w), out(m.h, m.w);
    for (std::size_t r = 0; r < m.h; ++r)
        for (std::size_t c = 0; c < m.w; ++c)
            dil.at(r, c) = nbhd_any(m, (long)r, (long)c) ? 1 : 0;
    for (std::size_t r = 0; r < m.h; ++r)
        for (std::size_t c = 0; c < m.w; ++c)
            out.at(r, c) = nbhd_all(dil, (long)r, (long)c) ? 1 : 0;
    return out;
}

} // namespace

TEST_CASE("box ensemble applies the five shifts in order", "[roi]") {
    BBox b0{100, 50, 400, 500};
    auto e = make_box_ensemble(b0, 32, 16, 512, 512);
    CHECK(e.boxes[0].x1 == 100);
    CHECK(e.boxes[0].y2 == 500);
    CHECK((e.boxes[1].x1 == 68 && e.boxes[1].y1 == 50 && e.boxes[1].x2 == 368 && e.boxes[1].y2 == 500));
    CHECK((e.boxes[2].x1 == 132 && e.boxes[2].y1 == 50 && e.boxes[2].x2 == 432 && e.boxes[2].y2 == 500));
    CHECK((e.boxes[3].x1 == 100 && e.boxes[3].y1 == 18 && e.boxes[3].x2 == 400 && e.boxes[3].y2 == 468));
    CHECK((e.boxes[4].x1 == 100 && e.boxes[4].y1 == 98 && e.boxes[4].x2 == 448 && e.boxes[4].y2 == 500));
}

TEST_CASE("ensemble boxes clip to the image and reject degeneracy", "[roi]") {
    auto e = make_box_ensemble(BBox{0, 0, 500, 500}, 32, 0, 512, 512);
    CHECK((e.boxes[1].x1 == 0 && e.boxes[1].x2 == 468));

    // default shift range stays valid for a centered box
    for (int s : {32, 40, 48}) {
        auto ok = make_box_ensemble(BBox{128, 64, 448, 460}, s, 16, 512, 512);
        for (const auto& b : ok.boxes) CHECK(b.valid());
    }

    try {
        make_box_ensemble(BBox{0, 0, 20, 500}, 32, 0, 512, 512);
        FAIL("expected degenerate ensemble error");
    } catch (const SegmentationError& err) {
        CHECK(std::string(err.what()).find("k=1") != std::string::npos);
    }
}

TEST_CASE("stand-in segmenter respects box bounds and threshold", "[roi]") {
    ThresholdSegmenter seg(0.5);
    ImageGrid zero(32, 32);
    auto m = segment_with_box(zero, BBox{4, 4, 28, 28}, seg);
    CHECK(m.popcount() == 0);

    // bright corner outside the box must not leak in
    ImageGrid img(32, 32);
    img.at(1, 1) = 1.0;
    auto m2 = segment_with_box(img, BBox{8, 8, 30, 30}, seg);
    CHECK(m2.popcount() == 0);
}

TEST_CASE("segmented synthetic lungs cover the analytic polygon inside the box", "[roi]") {
    synth::SynthConfig cfg;
    cfg.img_side = 128;
    cfg.blob_r_min = 6;
    cfg.blob_r_max = 13;
    auto s = synth::gen_sample(11, cfg);
    ThresholdSegmenter seg(0.5);
    BBox box{10, 10, 118, 118};
    auto m = segment_with_box(s.frontal, box, seg);
    const auto& lungs = cfg.lungs(View::Frontal);
    for (std::size_t r = 0; r < 128; ++r)
        for (std::size_t c = 0; c < 128; ++c) {
            double x = (c + 0.5) / 128.0, y = (r + 0.5) / 128.0;
            bool poly = lungs[0].contains(x, y) || lungs[1].contains(x, y);
            bool in_box = box.contains((int)c, (int)r);
            if (poly && in_box) REQUIRE(m.at(r, c) == 1);
            if (!in_box) REQUIRE(m.at(r, c) == 0);
        }

    // a box over background only produces an empty mask
    auto m3 = segment_with_box(s.frontal, BBox{0, 0, 12, 12}, seg);
    CHECK(m3.popcount() == 0);
}

TEST_CASE("mask union matches brute force and its algebra holds", "[roi]") {
    Rng rng(99);
    auto a = random_mask(rng, 16, 16);
    auto b = random_mask(rng, 16, 16);
    auto c = random_mask(rng, 16, 16);
    RoiMask zeros(16, 16, 0);

    CHECK(union_masks({a, zeros}).grid == a.grid);
    CHECK(union_masks({a, a}).grid == a.grid);

    std::vector<RoiMask> five;
    for (int i = 0; i < 5; ++i) five.push_back(random_mask(rng, 16, 16));
    auto u = union_masks(five);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t cc = 0; cc < 16; ++cc) {
            std::uint8_t expect = 0;
            for (const auto& m : five) expect |= m.at(r, cc);
            REQUIRE(u.at(r, cc) == expect);
        }

    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_mask(rng, 8, 8);
        auto y = random_mask(rng, 8, 8);
        auto z = random_mask(rng, 8, 8);
        CHECK(union_masks({x, y}).grid == union_masks({y, x}).grid);
        CHECK(union_masks({union_masks({x, y}), z}).grid ==
              union_masks({x, union_masks({y, z})}).grid);
        CHECK(union_masks({x, x}).grid == x.grid);
        auto uu = union_masks({x, y, z});
        for (std::size_t i = 0; i < uu.grid.size(); ++i) REQUIRE(uu.grid[i] >= x.grid[i]);
    }

    RoiMask wrong(8, 9);
    CHECK_THROWS_AS(union_masks({a, wrong}), DimensionError);
    CHECK_THROWS_AS(union_masks({}), DimensionError);
}

TEST_CASE("morphological closing fills holes and matches the naive oracle", "[roi]") {
    Rng rng(1234);
    auto m = random_mask(rng, 32, 32);
    CHECK(close_mask(m, 1).grid == m.grid);

    RoiMask rect(16, 16, 0);
    for (std::size_t r = 4; r < 12; ++r)
        for (std::size_t c = 4; c < 12; ++c) rect.at(r, c) = 1;
    rect.at(8, 8) = 0;
    auto closed = close_mask(rect, 5);
    CHECK(closed.at(8, 8) == 1);

    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_mask(rng, 32, 32, 0.35);
        auto got = close_mask(x, 5);
        auto want = brute_close(x, 5);
        REQUIRE(got.grid == want.grid);
        for (std::size_t i = 0; i < x.grid.size(); ++i) REQUIRE(got.grid[i] >= x.grid[i]);
    }

    CHECK_THROWS_AS(close_mask(m, 4), SegmentationError);
}

TEST_CASE("apply_mask is a hadamard gate and idempotent", "[roi]") {
    Rng rng(555);
    ImageGrid img(16, 16);
    for (auto& v : img.pix) v = rng.uniform(0.05, 1.0);

    RoiMask ones(16, 16, 1);
    CHECK(apply_mask(img, ones).pix == img.pix);

    RoiMask zeros(16, 16, 0);
    auto dark = apply_mask(img, zeros);
    for (double v : dark.pix) CHECK(v == 0.0);

    RoiMask checker(16, 16, 0);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 16; ++c) checker.at(r, c) = (r + c) % 2;
    auto out = apply_mask(img, checker);
    std::size_t nonzero = 0;
    for (double v : out.pix) nonzero += v != 0.0;
    CHECK(nonzero == checker.popcount());

    for (int trial = 0; trial < 50; ++trial) {
        auto m = random_mask(rng, 16, 16);
        auto once = apply_mask(img, m);
        auto twice = apply_mask(once, m);
        REQUIRE(once.pix == twice.pix);
    }

    RoiMask wrong(8, 8);
    CHECK_THROWS_AS(apply_mask(img, wrong), DimensionError);
}

TEST_CASE("ensemble roi mask tracks the analytic lung fields closely", "[roi]") {
    synth::SynthConfig cfg; // default 256
    auto s = synth::gen_sample(21, cfg);
    ThresholdSegmenter seg(0.5);
    auto ref = default_reference_box((int)s.frontal.w, (int)s.frontal.h);
    auto mask = ensemble_roi_mask(s.frontal, ref, 32, 16, 5, seg);

    const auto& lungs = cfg.lungs(View::Frontal);
    std::size_t inter = 0, uni = 0;
    for (std::size_t r = 0; r < s.frontal.h; ++r)
        for (std::size_t c = 0; c < s.frontal.w; ++c) {
            double x = (c + 0.5) / (double)s.frontal.w, y = (r + 0.5) / (double)s.frontal.h;
            bool poly = lungs[0].contains(x, y) || lungs[1].contains(x, y);
            bool got = mask.at(r, c) != 0;
            inter += poly && got;
            uni += poly || got;
        }
    double iou = (double)inter / (double)uni;
    INFO("IoU = " << iou);
    CHECK(iou >= 0.95);
}

#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "../core/image.hpp"

namespace vitas::roi {

struct SegmentationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pixel-coordinate box. Stored closed on paper ([x1,y1,x2,y2] with x2<=W),
// indexed half-open [x1,x2) x [y1,y2) internally, so x2==W addresses the last
// column without overflow.
struct BBox {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    bool valid() const { return x1 < x2 && y1 < y2 && x1 >= 0 && y1 >= 0; }
    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    bool contains(int x, int y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
};

struct BoxEnsemble {
    std::array<BBox, 5> boxes;
    int shift = 0;
    int bias = 0;
};

struct RoiMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> grid; // 0/1

    RoiMask() = default;
    RoiMask(std::size_t hh, std::size_t ww, std::uint8_t fill = 0)
        : h(hh), w(ww), grid(hh * ww, fill) {}
    std::uint8_t& at(std::size_t r, std::size_t c) { return grid[r * w + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return grid[r * w + c]; }
    std::size_t popcount() const {
        std::size_t n = 0;
        for (auto v : grid) n += v;
        return n;
    }
};

// The five directional shifts applied to the reference box, in paper order.
// The fifth entry carries the extra downward bias on y1/x2 as printed.
inline std::array<std::array<int, 4>, 5> shift_set(int s, int bias) {
    return {{{0, 0, 0, 0},
             {-s, 0, -s, 0},
             {+s, 0, +s, 0},
             {0, -s, 0, -s},
             {0, s + bias, s + bias, 0}}};
}

inline BoxEnsemble make_box_ensemble(const BBox& b0, int shift, int bias, int w, int h) {
    if (!b0.valid() || b0.x2 > w || b0.y2 > h)
        throw SegmentationError("reference box invalid for image dimensions");
    if (shift <= 0) throw SegmentationError("shift must be > 0");
    if (bias < 0) throw SegmentationError("bias must be >= 0");
    BoxEnsemble e;
    e.shift = shift;
    e.bias = bias;
    auto deltas = shift_set(shift, bias);
    for (std::size_t k = 0; k < 5; ++k) {
        BBox b{b0.x1 + deltas[k][0], b0.y1 + deltas[k][1], b0.x2 + deltas[k][2],
               b0.y2 + deltas[k][3]};
        b.x1 = std::clamp(b.x1, 0, w);
        b.x2 = std::clamp(b.x2, 0, w);
        b.y1 = std::clamp(b.y1, 0, h);
        b.y2 = std::clamp(b.y2, 0, h);
        if (b.x1 >= b.x2 || b.y1 >= b.y2)
            throw SegmentationError("ensemble box k=" + std::to_string(k) +
                                    " degenerate after clipping");
        e.boxes[k] = b;
    }
    return e;
}

// Box-prompted segmenter contract: binary mask for the pixels inside the box.
// A promptable-segmentation backend slots in here; the bundled stand-in
// thresholds intensities.
class SegmenterInterface {
  public:
    virtual ~SegmenterInterface() = default;
    virtual RoiMask segment(const ImageGrid& img, const BBox& box) const = 0;
};

class ThresholdSegmenter final : public SegmenterInterface {
  public:
    explicit ThresholdSegmenter(double threshold = 0.5) : threshold_(threshold) {}
    RoiMask segment(const ImageGrid& img, const BBox& box) const override {
        RoiMask m(img.h, img.w, 0);
        for (int r = box.y1; r < box.y2; ++r)
            for (int c = box.x1; c < box.x2; ++c)
                if (img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) >=
                    threshold_)
                    m.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
        return m;
    }
    double threshold() const { return threshold_; }

  private:
    double threshold_;
};

inline RoiMask segment_with_box(const ImageGrid& img, const BBox& box,
                                const SegmenterInterface& seg) {
    if (!box.valid() || box.x2 > static_cast<int>(img.w) || box.y2 > static_cast<int>(img.h))
        throw SegmentationError("box invalid for image dimensions");
    RoiMask m = seg.segment(img, box);
    if (m.h != img.h || m.w != img.w)
        throw SegmentationError("segmenter returned wrong mask shape");
    // zero outside the box regardless of backend behavior
    for (std::size_t r = 0; r < m.h; ++r)
        for (std::size_t c = 0; c < m.w; ++c)
            if (!box.contains(static_cast<int>(c), static_cast<int>(r))) m.at(r, c) = 0;
    return m;
}

inline RoiMask union_masks(const std::vector<RoiMask>& masks) {
    if (masks.empty()) throw DimensionError("union of empty mask list");
    RoiMask out(masks[0].h, masks[0].w, 0);
    for (const auto& m : masks) {
        if (m.h != out.h || m.w != out.w) throw DimensionError("mask shape mismatch in union");
        for (std::size_t i = 0; i < out.grid.size(); ++i) out.grid[i] |= m.grid[i];
    }
    return out;
}

namespace detail {

inline RoiMask dilate(const RoiMask& m, int k) {
    int half = k / 2;
    RoiMask out(m.h, m.w, 0);
    for (std::size_t r = 0; r < m.h; ++r)
        for (std::size_t c = 0; c < m.w; ++c) {
            std::uint8_t v = 0;
            for (int dr = -half; dr <= half && !v; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(m.h) ||
                        cc >= static_cast<long>(m.w))
                        continue;
                    if (m.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))) {
                        v = 1;
                        break;
                    }
                }
            out.at(r, c) = v;
        }
    return out;
}

// erosion with the structuring element clipped at the image border
inline RoiMask erode(const RoiMask& m, int k) {
    int half = k / 2;
    RoiMask out(m.h, m.w, 0);
    for (std::size_t r = 0; r < m.h; ++r)
        for (std::size_t c = 0; c < m.w; ++c) {
            std::uint8_t v = 1;
            for (int dr = -half; dr <= half && v; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(m.h) ||
                        cc >= static_cast<long>(m.w))
                        continue;
                    if (!m.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))) {
                        v = 0;
                        break;
                    }
                }
            out.at(r, c) = v;
        }
    return out;
}

} // namespace detail

inline RoiMask close_mask(const RoiMask& m, int k) {
    if (k < 1 || k % 2 == 0) throw SegmentationError("closing kernel must be odd and >= 1");
    if (k == 1) return m;
    return detail::erode(detail::dilate(m, k), k);
}

inline ImageGrid apply_mask(const ImageGrid& img, const RoiMask& m) {
    if (img.h != m.h || img.w != m.w) throw DimensionError("mask/image shape mismatch");
    ImageGrid out = img;
    for (std::size_t i = 0; i < out.pix.size(); ++i)
        out.pix[i] = m.grid[i] ? out.pix[i] : 0.0;
    return out;
}

// full pipeline for one view: ensemble -> per-box masks -> union -> closing
inline RoiMask ensemble_roi_mask(const ImageGrid& img, const BBox& reference, int shift,
                                 int bias, int close_kernel, const SegmenterInterface& seg) {
    auto ens = make_box_ensemble(reference, shift, bias, static_cast<int>(img.w),
                                 static_cast<int>(img.h));
    std::vector<RoiMask> masks;
    masks.reserve(5);
    for (const auto& b : ens.boxes) masks.push_back(segment_with_box(img, b, seg));
    return close_mask(union_masks(masks), close_kernel);
}

// documented default reference box: 20-80% of width, 10-90% of height
inline BBox default_reference_box(int w, int h) {
    return BBox{static_cast<int>(0.20 * w), static_cast<int>(0.10 * h),
                static_cast<int>(0.80 * w), static_cast<int>(0.90 * h)};
}

inline void write_mask_pgm(const RoiMask& m, const std::string& path) {
    ImageGrid img(m.h, m.w);
    for (std::size_t i = 0; i < m.grid.size(); ++i) img.pix[i] = m.grid[i] ? 1.0 : 0.0;
    write_pgm(img, path);
}

inline RoiMask read_mask_pgm(const std::string& path) {
    ImageGrid img = read_pgm(path);
    RoiMask m(img.h, img.w, 0);
    for (std::size_t i = 0; i < img.pix.size(); ++i) m.grid[i] = img.pix[i] >= 0.5 ? 1 : 0;
    return m;
}

} // namespace vitas::roi

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace vitas {

enum class View : std::uint8_t { Frontal, Lateral };

inline const char* view_name(View v) { return v == View::Frontal ? "F" : "L"; }

// Single-channel raster, intensities in [0,1], row-major.
struct ImageGrid {
    std::size_t h = 0, w = 0;
    View view = View::Frontal;
    std::vector<double> pix;

    ImageGrid() = default;
    ImageGrid(std::size_t hh, std::size_t ww, View v = View::Frontal, double fill = 0.0)
        : h(hh), w(ww), view(v), pix(hh * ww, fill) {}

    double& at(std::size_t r, std::size_t c) { return pix[r * w + c]; }
    double at(std::size_t r, std::size_t c) const { return pix[r * w + c]; }
    std::size_t numel() const { return pix.size(); }
};

inline void write_pgm(const ImageGrid& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> row(img.w);
    for (std::size_t r = 0; r < img.h; ++r) {
        for (std::size_t c = 0; c < img.w; ++c) {
            double v = std::clamp(img.at(r, c), 0.0, 1.0);
            row[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(img.w));
    }
}

inline ImageGrid read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error(path + ": not a P5 PGM");
    auto next_token = [&f]() {
        std::string t;
        while (f >> t) {
            if (t[0] == '#') { std::string line; std::getline(f, line); continue; }
            return t;
        }
        throw std::runtime_error("truncated PGM header");
    };
    std::size_t w = std::stoul(next_token());
    std::size_t h = std::stoul(next_token());
    std::size_t maxval = std::stoul(next_token());
    f.get(); // single whitespace after maxval
    ImageGrid img(h, w);
    std::vector<std::uint8_t> buf(w * h);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": truncated PGM data");
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.pix[i] = static_cast<double>(buf[i]) / static_cast<double>(maxval);
    return img;
}

inline ImageGrid resize_bilinear(const ImageGrid& src, std::size_t oh, std::size_t ow) {
    ImageGrid out(oh, ow, src.view);
    const double sy = static_cast<double>(src.h) / static_cast<double>(oh);
    const double sx = static_cast<double>(src.w) / static_cast<double>(ow);
    for (std::size_t r = 0; r < oh; ++r) {
        double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
        double y0 = std::floor(fy);
        double wy = fy - y0;
        long r0 = std::clamp<long>(static_cast<long>(y0), 0, static_cast<long>(src.h) - 1);
        long r1 = std::clamp<long>(r0 + 1, 0, static_cast<long>(src.h) - 1);
        for (std::size_t c = 0; c < ow; ++c) {
            double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
            double x0 = std::floor(fx);
            double wx = fx - x0;
            long c0 = std::clamp<long>(static_cast<long>(x0), 0, static_cast<long>(src.w) - 1);
            long c1 = std::clamp<long>(c0 + 1, 0, static_cast<long>(src.w) - 1);
            double top = src.at(r0, c0) * (1 - wx) + src.at(r0, c1) * wx;
            double bot = src.at(r1, c0) * (1 - wx) + src.at(r1, c1) * wx;
            out.at(r, c) = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

// Minimal 8-bit grayscale PNG writer (one IDAT, zlib-compressed).
inline void write_png_gray(const ImageGrid& img, const std::string& path) {
    auto u32be = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
        v.push_back(static_cast<std::uint8_t>(x >> 24));
        v.push_back(static_cast<std::uint8_t>(x >> 16));
        v.push_back(static_cast<std::uint8_t>(x >> 8));
        v.push_back(static_cast<std::uint8_t>(x));
    };
    auto chunk = [&](std::ofstream& f, const char* tag, const std::vector<std::uint8_t>& payload) {
        std::vector<std::uint8_t> head;
        u32be(head, static_cast<std::uint32_t>(payload.size()));
        f.write(reinterpret_cast<const char*>(head.data()), 4);
        std::vector<std::uint8_t> body(tag, tag + 4);
        body.insert(body.end(), payload.begin(), payload.end());
        f.write(reinterpret_cast<const char*>(body.data()),
                static_cast<std::streamsize>(body.size()));
        std::uint32_t crc = static_cast<std::uint32_t>(
            crc32(0L, body.data(), static_cast<uInt>(body.size())));
        std::vector<std::uint8_t> tail;
        u32be(tail, crc);
        f.write(reinterpret_cast<const char*>(tail.data()), 4);
    };

    std::vector<std::uint8_t> raw;
    raw.reserve(img.h * (img.w + 1));
    for (std::size_t r = 0; r < img.h; ++r) {
        raw.push_back(0); // filter: none
        for (std::size_t c = 0; c < img.w; ++c) {
            double v = std::clamp(img.at(r, c), 0.0, 1.0);
            raw.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        }
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png deflate failed");
    z.resize(zlen);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<std::uint8_t> ihdr;
    u32be(ihdr, static_cast<std::uint32_t>(img.w));
    u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk(f, "IHDR", ihdr);
    chunk(f, "IDAT", z);
    chunk(f, "IEND", {});
}

} // namespace vitas

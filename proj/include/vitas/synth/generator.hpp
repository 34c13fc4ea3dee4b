#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "../core/image.hpp"
#include "../core/rng.hpp"
#include "vocab.hpp"

namespace vitas::synth {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Lung fields are fixed ellipses (fractions of the image side), two per view.
// They are the analytic ROI ground truth that segmentation is scored against.
struct LungEllipse {
    double cx, cy, rx, ry;
    bool contains(double x, double y) const {
        double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
};

struct SynthConfig {
    std::size_t img_side = 256;
    std::array<double, kNumClasses> class_priors = {0.22, 0.18, 0.20, 0.18,
                                                    0.0,  0.20, 0.16, 0.18};
    double missing_lateral_prob = 0.25;
    double blob_r_min = 13.0;
    double blob_r_max = 27.0;
    double min_contrast = 0.30;
    double lung_intensity = 0.62;
    double background_intensity = 0.14;
    double mediastinum_boost = 0.20;
    double noise_amp = 0.05;
    int max_negations = 2;
    std::array<LungEllipse, 2> frontal_lungs = {{{0.33, 0.47, 0.155, 0.30},
                                                 {0.67, 0.47, 0.155, 0.30}}};
    std::array<LungEllipse, 2> lateral_lungs = {{{0.42, 0.50, 0.165, 0.32},
                                                 {0.60, 0.50, 0.165, 0.32}}};

    void validate() const {
        if (img_side == 0) throw ConfigError("img_side must be positive");
        for (double p : class_priors)
            if (p < 0.0 || p > 1.0) throw ConfigError("class prior outside [0,1]");
        if (missing_lateral_prob < 0.0 || missing_lateral_prob > 1.0)
            throw ConfigError("missing_lateral_prob outside [0,1]");
        if (blob_r_min <= 0.0 || blob_r_max < blob_r_min)
            throw ConfigError("invalid blob radius range");
        if (min_contrast < 0.0) throw ConfigError("min_contrast must be >= 0");
        if (lung_intensity - noise_amp <= background_intensity + mediastinum_boost + noise_amp)
            throw ConfigError("lung/background intensities do not separate");
    }

    const std::array<LungEllipse, 2>& lungs(View v) const {
        return v == View::Frontal ? frontal_lungs : lateral_lungs;
    }
};

struct BlobRecord {
    View view;
    double cx, cy, r; // pixels
    int cls;
};

struct SynthSample {
    std::string id;
    ImageGrid frontal;
    std::optional<ImageGrid> lateral;
    std::array<int, kNumClasses> labels{};
    std::vector<BlobRecord> blobs;
    std::vector<std::string> findings;
    std::vector<std::string> impression;
};

namespace detail {

inline double pixel_noise(std::uint64_t seed, View view, std::size_t r, std::size_t c,
                          double amp) {
    std::uint64_t h = splitmix64(seed ^ (static_cast<std::uint64_t>(view) << 56) ^
                                 (static_cast<std::uint64_t>(r) << 28) ^ c);
    double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
    return (2.0 * u - 1.0) * amp;
}

// Class-specific intensity motif inside the blob disc; returns <0 where the
// motif leaves the pixel untouched (shape carving), else detail in [0,1].
inline double blob_motif(int cls, double dx, double dy, double r) {
    double d = std::sqrt(dx * dx + dy * dy);
    if (d > r) return -1.0;
    switch (cls) {
        case 0: return 1.0;                                  // solid disc
        case 1: return 0.6 + 0.4 * (1.0 - d / r);            // radial falloff
        case 2: {                                            // coarse speckle
            int px = static_cast<int>(std::floor(dx / 4.0)) +
                     static_cast<int>(std::floor(dy / 4.0));
            return (px & 1) ? 1.0 : 0.25;
        }
        case 3: {                                            // concentric rings
            double w = std::cos(d * 1.1);
            return 0.5 + 0.5 * w * w;
        }
        case 5: return dy >= 0.0 ? 1.0 : -1.0;               // bottom half-moon
        case 6: return d >= 0.55 * r ? 1.0 : -1.0;           // annulus
        case 7:                                              // plus shape
            return (std::abs(dx) < r * 0.28 || std::abs(dy) < r * 0.28) ? 1.0 : -1.0;
        default: return 1.0;
    }
}

struct BlobPlacement {
    double fx, fy; // offsets in ellipse-normalized coords
};

inline BlobPlacement place_in_ellipse(Rng& rng, int cls) {
    auto disc = [&rng](double lo_r, double hi_r) {
        double ang = rng.uniform(0.0, 6.283185307179586);
        double rad = std::sqrt(rng.uniform()) * (hi_r - lo_r) + lo_r;
        return BlobPlacement{rad * std::cos(ang), rad * std::sin(ang)};
    };
    switch (cls) {
        case 5: return {rng.uniform(-0.55, 0.55), rng.uniform(0.45, 0.75)};  // basal
        case 6: return {rng.uniform(-0.55, 0.55), rng.uniform(-0.75, -0.45)}; // apical
        case 1: return {rng.uniform(-0.45, 0.45), rng.uniform(0.15, 0.65)};  // low-central
        default: return disc(0.0, 0.72);
    }
}

} // namespace detail

inline ImageGrid render_view(std::uint64_t noise_seed, const SynthConfig& cfg, View view,
                             const std::vector<BlobRecord>& blobs) {
    const std::size_t side = cfg.img_side;
    ImageGrid img(side, side, view);
    const auto& lungs = cfg.lungs(view);
    const double s = static_cast<double>(side);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            double x = (static_cast<double>(c) + 0.5) / s;
            double y = (static_cast<double>(r) + 0.5) / s;
            double v = cfg.background_intensity + 0.03 * y;
            if (std::abs(x - 0.5) < 0.055) v += cfg.mediastinum_boost; // mediastinal band
            // faint rib stripes outside the lung fields
            v += 0.035 * std::max(0.0, std::sin(y * 55.0));
            bool in_lung = lungs[0].contains(x, y) || lungs[1].contains(x, y);
            if (in_lung) v = cfg.lung_intensity + 0.02 * std::sin(x * 9.0);
            v += detail::pixel_noise(noise_seed, view, r, c, cfg.noise_amp);
            img.at(r, c) = std::clamp(v, 0.0, 1.0);
        }
    }
    for (const auto& b : blobs) {
        if (b.view != view) continue;
        long lo_r = std::max(0L, static_cast<long>(std::floor(b.cy - b.r)));
        long hi_r = std::min(static_cast<long>(side) - 1, static_cast<long>(std::ceil(b.cy + b.r)));
        long lo_c = std::max(0L, static_cast<long>(std::floor(b.cx - b.r)));
        long hi_c = std::min(static_cast<long>(side) - 1, static_cast<long>(std::ceil(b.cx + b.r)));
        for (long r = lo_r; r <= hi_r; ++r) {
            for (long c = lo_c; c <= hi_c; ++c) {
                double m = detail::blob_motif(b.cls, static_cast<double>(c) + 0.5 - b.cx,
                                              static_cast<double>(r) + 0.5 - b.cy, b.r);
                if (m < 0.0) continue;
                double v = cfg.lung_intensity + cfg.min_contrast + 0.12 * m;
                std::size_t ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
                img.at(ur, uc) = std::clamp(std::max(img.at(ur, uc), v), 0.0, 1.0);
            }
        }
    }
    return img;
}

inline SynthSample gen_sample(std::uint64_t seed, const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(splitmix64(seed ^ 0xA5EED0001ULL));
    SynthSample s;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "s%06llu", static_cast<unsigned long long>(seed));
        s.id = buf;
    }

    std::vector<int> planted;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (c == kNoFindingClass) continue;
        if (rng.bernoulli(cfg.class_priors[c])) planted.push_back(static_cast<int>(c));
    }
    bool has_lateral = !rng.bernoulli(cfg.missing_lateral_prob);

    for (std::size_t c = 0; c < kNumClasses; ++c) s.labels[c] = 0;
    for (int c : planted) s.labels[static_cast<std::size_t>(c)] = 1;
    if (planted.empty()) s.labels[kNoFindingClass] = 1;

    const double side = static_cast<double>(cfg.img_side);
    struct Attrib {
        int cls, side_idx, zone_idx, sev_idx;
    };
    std::vector<Attrib> attribs;

    for (int cls : planted) {
        double r = rng.uniform(cfg.blob_r_min, cfg.blob_r_max);
        int ell = rng.uniform_int(0, 1);
        auto put = [&](View view, int ellipse_idx) {
            const LungEllipse& e = cfg.lungs(view)[static_cast<std::size_t>(ellipse_idx)];
            auto pl = detail::place_in_ellipse(rng, cls);
            double cx = (e.cx + pl.fx * e.rx) * side;
            double cy = (e.cy + pl.fy * e.ry) * side;
            s.blobs.push_back({view, cx, cy, r, cls});
            return pl;
        };
        auto pl = put(View::Frontal, ell);
        if (has_lateral) put(View::Lateral, rng.uniform_int(0, 1));

        int zone = pl.fy < -0.25 ? 0 : (pl.fy > 0.25 ? 2 : 1);
        double t = (r - cfg.blob_r_min) / std::max(1e-9, cfg.blob_r_max - cfg.blob_r_min);
        int sev = t < 1.0 / 3 ? 0 : (t < 2.0 / 3 ? 1 : 2);
        attribs.push_back({cls, ell, zone, sev});
    }

    s.frontal = render_view(seed, cfg, View::Frontal, s.blobs);
    if (has_lateral) s.lateral = render_view(seed, cfg, View::Lateral, s.blobs);

    // findings mention each planted class; location/severity words appear only
    // in the impression and are derivable only from the image
    auto& f = s.findings;
    auto emit = [](std::vector<std::string>& dst, std::initializer_list<const char*> words) {
        for (const char* w : words) dst.push_back(w);
    };
    auto emit_phrase = [](std::vector<std::string>& dst, int cls) {
        for (const auto& w : class_phrases()[static_cast<std::size_t>(cls)]) dst.push_back(w);
    };
    if (has_lateral)
        emit(f, {"frontal", "and", "lateral", "views", "of", "the", "chest", "were",
                 "obtained", "."});
    else
        emit(f, {"single", "frontal", "view", "of", "the", "chest", "was", "obtained", "."});
    for (const auto& a : attribs) {
        switch (rng.uniform_int(0, 2)) {
            case 0:
                emit(f, {"there", "is", "evidence", "of"});
                emit_phrase(f, a.cls);
                emit(f, {"."});
                break;
            case 1:
                emit(f, {"findings", "consistent", "with"});
                emit_phrase(f, a.cls);
                emit(f, {"are", "seen", "."});
                break;
            default:
                emit_phrase(f, a.cls);
                emit(f, {"is", "noted", "on", "the", "current", "exam", "."});
                break;
        }
    }
    if (planted.empty()) emit(f, {"the", "lungs", "are", "clear", "."});
    std::vector<int> absent;
    for (std::size_t c = 0; c < kNumClasses; ++c)
        if (c != kNoFindingClass && !s.labels[c]) absent.push_back(static_cast<int>(c));
    rng.shuffle(absent);
    int n_neg = cfg.max_negations > 0 ? rng.uniform_int(0, cfg.max_negations) : 0;
    for (int i = 0; i < n_neg && i < static_cast<int>(absent.size()); ++i) {
        emit(f, {"no"});
        emit_phrase(f, absent[static_cast<std::size_t>(i)]);
        emit(f, {"is", "identified", "."});
    }

    auto& imp = s.impression;
    if (attribs.empty()) {
        emit(imp, {"no", "acute", "cardiopulmonary", "process", "."});
    } else {
        for (const auto& a : attribs) {
            imp.push_back(severity_words()[static_cast<std::size_t>(a.sev_idx)]);
            emit_phrase(imp, a.cls);
            emit(imp, {"in", "the"});
            imp.push_back(side_words()[static_cast<std::size_t>(a.side_idx)]);
            imp.push_back(zone_words()[static_cast<std::size_t>(a.zone_idx)]);
            emit(imp, {"zone", "."});
        }
    }
    return s;
}

// ---- dataset manifest ----

struct SampleRecord {
    std::string id;
    std::string split;
    std::string frontal_path; // relative to manifest dir
    std::optional<std::string> lateral_path;
    std::array<int, kNumClasses> labels{};
    std::string findings;
    std::string impression;
    std::vector<BlobRecord> blobs;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<SampleRecord> records;

    std::vector<const SampleRecord*> split(const std::string& name) const {
        std::vector<const SampleRecord*> out;
        for (const auto& r : records)
            if (r.split == name) out.push_back(&r);
        return out;
    }
    std::string resolve(const std::string& rel) const { return (root / rel).string(); }
};

inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = static_cast<double>(n) * ratios[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    // largest remainder, ties to the earlier split
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (frac[i] > frac[best] + 1e-12) best = i;
        counts[best]++;
        frac[best] = -1.0;
        ++assigned;
    }
    return counts;
}

inline const char* kSplitNames[3] = {"train", "val", "test"};

inline nlohmann::json record_to_json(const SampleRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["split"] = r.split;
    j["frontal_path"] = r.frontal_path;
    if (r.lateral_path)
        j["lateral_path"] = *r.lateral_path;
    else
        j["lateral_path"] = nullptr;
    j["labels"] = r.labels;
    j["findings"] = r.findings;
    j["impression"] = r.impression;
    j["blobs"] = nlohmann::json::array();
    for (const auto& b : r.blobs)
        j["blobs"].push_back({{"view", view_name(b.view)},
                              {"cx", b.cx},
                              {"cy", b.cy},
                              {"r", b.r},
                              {"cls", b.cls}});
    return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.split = j.value("split", "");
    r.frontal_path = j.at("frontal_path").get<std::string>();
    if (!j.at("lateral_path").is_null())
        r.lateral_path = j.at("lateral_path").get<std::string>();
    auto labels = j.at("labels").get<std::vector<int>>();
    for (std::size_t i = 0; i < kNumClasses && i < labels.size(); ++i) r.labels[i] = labels[i];
    r.findings = j.at("findings").get<std::string>();
    r.impression = j.at("impression").get<std::string>();
    for (const auto& bj : j.at("blobs")) {
        BlobRecord b;
        b.view = bj.at("view").get<std::string>() == "F" ? View::Frontal : View::Lateral;
        b.cx = bj.at("cx").get<double>();
        b.cy = bj.at("cy").get<double>();
        b.r = bj.at("r").get<double>();
        b.cls = bj.at("cls").get<int>();
        r.blobs.push_back(b);
    }
    return r;
}

inline DatasetManifest build_dataset(std::size_t n, const std::array<double, 3>& ratios,
                                     const SynthConfig& cfg, const std::string& out_dir,
                                     std::uint64_t base_seed = 0) {
    cfg.validate();
    if (n < 3) throw DatasetError("n < 3 cannot populate all splits");
    auto counts = split_counts(n, ratios);
    for (int i = 0; i < 3; ++i)
        if (ratios[i] > 0.0 && counts[i] == 0)
            throw DatasetError(std::string("cannot populate split ") + kSplitNames[i]);

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");

    // split assignment: shuffle sample order, then carve contiguous blocks
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng srng(splitmix64(base_seed ^ 0x5917117ULL));
    srng.shuffle(order);
    std::vector<std::string> split_of(n);
    std::size_t pos = 0;
    for (int sidx = 0; sidx < 3; ++sidx)
        for (std::size_t k = 0; k < counts[sidx]; ++k) split_of[order[pos++]] = kSplitNames[sidx];

    DatasetManifest man;
    man.root = out_dir;
    std::ofstream jf(fs::path(out_dir) / "manifest.jsonl");
    if (!jf) throw DatasetError("cannot write manifest in " + out_dir);
    for (std::size_t i = 0; i < n; ++i) {
        SynthSample s = gen_sample(base_seed + i, cfg);
        SampleRecord r;
        r.id = s.id;
        r.split = split_of[i];
        r.frontal_path = "images/" + s.id + "_f.pgm";
        write_pgm(s.frontal, man.resolve(r.frontal_path));
        if (s.lateral) {
            r.lateral_path = "images/" + s.id + "_l.pgm";
            write_pgm(*s.lateral, man.resolve(*r.lateral_path));
        }
        r.labels = s.labels;
        r.findings = join_tokens(s.findings);
        r.impression = join_tokens(s.impression);
        r.blobs = s.blobs;
        jf << record_to_json(r).dump() << "\n";
        man.records.push_back(std::move(r));
    }
    return man;
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DatasetError("cannot read manifest " + path);
    DatasetManifest man;
    man.root = std::filesystem::path(path).parent_path();
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        man.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return man;
}

} // namespace vitas::synth

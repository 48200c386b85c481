#include "partpool/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "partpool/errors.hpp"
#include "partpool/rng.hpp"

namespace partpool {

namespace {

constexpr double kBodyRadiusX = 24.0; // canonical ellipse, pixels
constexpr double kBodyRadiusY = 15.0;
constexpr double kPartRingFrac = 0.7;
// Two-tone part blobs: the outer annulus color identifies the part (fixed
// across classes, so global color statistics stay class-independent) and
// the inner disc carries the class-specific palette color.
constexpr double kBlobRadius = 5.0;
constexpr double kDiscRadius = 3.0;

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h / 60.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto q = [&](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

std::vector<Rgb> shared_palette(std::size_t num_parts) {
    std::vector<Rgb> pal;
    const std::size_t count = std::max<std::size_t>(num_parts, 2);
    for (std::size_t i = 0; i < count; ++i)
        pal.push_back(hsv_to_rgb(360.0 * i / count, 0.85, 0.9));
    return pal;
}

// Darker hues, offset by half a palette step so they never collide with
// the class palette.
std::vector<Rgb> part_ring_palette(std::size_t num_parts) {
    std::vector<Rgb> pal;
    const std::size_t count = std::max<std::size_t>(num_parts, 2);
    for (std::size_t i = 0; i < count; ++i)
        pal.push_back(hsv_to_rgb(360.0 * (i + 0.5) / count, 0.85, 0.55));
    return pal;
}

std::size_t hamming(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

// Per-class color assignment: class k paints part p with palette color
// assignments[k][p]. Assignments are permutations when possible so that
// global color histograms are identical across classes; pairwise Hamming
// distance >= min(3, P) keeps classes separable under part occlusion.
std::vector<std::vector<std::size_t>> color_assignments(const GeneratorConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, 0xA551));
    const std::size_t p = cfg.num_parts;
    const std::size_t palette_size = std::max<std::size_t>(p, 2);
    std::vector<std::vector<std::size_t>> out;
    std::size_t min_dist = std::min<std::size_t>(3, p);
    std::size_t attempts = 0;
    while (out.size() < cfg.num_classes) {
        std::vector<std::size_t> cand(p);
        for (std::size_t i = 0; i < p; ++i) cand[i] = i % palette_size;
        // Fisher-Yates over the identity-ish base gives a permutation for
        // p <= palette_size; beyond exhaustion fall back to random codes.
        if (attempts < 4000) {
            for (std::size_t i = p; i > 1; --i)
                std::swap(cand[i - 1], cand[rng.uniform_int(i)]);
        } else {
            for (std::size_t i = 0; i < p; ++i) cand[i] = rng.uniform_int(palette_size);
        }
        bool ok = true;
        for (const auto& prev : out)
            if (hamming(cand, prev) < min_dist) { ok = false; break; }
        if (ok) out.push_back(std::move(cand));
        if (++attempts > 20000) {
            if (min_dist > 1) { min_dist -= 1; attempts = 0; continue; }
            throw ConfigError("cannot construct distinct class color codes; "
                              "reduce num_classes or increase num_parts");
        }
    }
    return out;
}

struct Pose {
    double rotation = 0.0;
    double tx = 0.0, ty = 0.0;
    double scale = 1.0;
};

Sample render_sample(const GeneratorConfig& cfg,
                     const std::vector<std::vector<std::size_t>>& assignments,
                     std::size_t class_label, const Pose& pose,
                     const std::vector<bool>& occluded, std::uint64_t noise_seed) {
    const std::size_t s = cfg.image_size;
    const double cx = s / 2.0 + pose.tx;
    const double cy = s / 2.0 + pose.ty;
    const double cosr = std::cos(pose.rotation);
    const double sinr = std::sin(pose.rotation);

    Sample out;
    out.class_label = class_label;
    out.image.width = s;
    out.image.height = s;
    out.image.channels = 3;
    out.image.pixels.resize(s * s * 3);

    // Per-image uniform noise background.
    Rng noise(noise_seed);
    for (auto& px : out.image.pixels)
        px = static_cast<std::uint8_t>(30 + noise.uniform_int(81));

    const auto offsets = canonical_part_offsets(cfg.num_parts);
    std::vector<std::pair<double, double>> centers(cfg.num_parts);
    for (std::size_t p = 0; p < cfg.num_parts; ++p) {
        const auto [ox, oy] = offsets[p];
        centers[p] = {cx + pose.scale * (cosr * ox - sinr * oy),
                      cy + pose.scale * (sinr * ox + cosr * oy)};
    }

    std::vector<Rgb> palette;
    if (cfg.palette_mode == PaletteMode::SharedPermuted) {
        palette = shared_palette(cfg.num_parts);
    } else {
        // Disjoint palettes: every class gets its own hue band.
        const std::size_t count = std::max<std::size_t>(cfg.num_parts, 2);
        for (std::size_t i = 0; i < count; ++i) {
            const double hue = 360.0 * (class_label + static_cast<double>(i) / count /
                                        (cfg.num_classes + 1)) / cfg.num_classes;
            palette.push_back(hsv_to_rgb(hue, 0.85, 0.9));
        }
    }
    const auto& code = assignments[class_label];
    const auto ring_palette = part_ring_palette(cfg.num_parts);

    const double blob_r = pose.scale * kBlobRadius;
    const double disc_r = pose.scale * kDiscRadius;
    double min_x = 1e9, min_y = 1e9, max_x = -1e9, max_y = -1e9;
    bool rendered = false;
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            // Body test in canonical coordinates.
            const double dx = px - cx, dy = py - cy;
            const double ux = (cosr * dx + sinr * dy) / pose.scale;
            const double uy = (-sinr * dx + cosr * dy) / pose.scale;
            const double be = (ux / kBodyRadiusX) * (ux / kBodyRadiusX) +
                              (uy / kBodyRadiusY) * (uy / kBodyRadiusY);
            bool object = false;
            Rgb color{128, 128, 128};
            if (be <= 1.0) object = true;
            for (std::size_t p = 0; p < cfg.num_parts; ++p) {
                if (occluded[p]) continue;
                const double ddx = px - centers[p].first;
                const double ddy = py - centers[p].second;
                const double d2 = ddx * ddx + ddy * ddy;
                if (d2 <= blob_r * blob_r) {
                    object = true;
                    color = d2 <= disc_r * disc_r ? palette[code[p]]
                                                  : ring_palette[p % ring_palette.size()];
                }
            }
            if (!object) continue;
            rendered = true;
            out.image.at(y, x, 0) = color.r;
            out.image.at(y, x, 1) = color.g;
            out.image.at(y, x, 2) = color.b;
            min_x = std::min(min_x, px - 0.5);
            min_y = std::min(min_y, py - 0.5);
            max_x = std::max(max_x, px + 0.5);
            max_y = std::max(max_y, py + 0.5);
        }
    if (!rendered) throw DataError("pose rendered no object pixels");
    out.object_box = {min_x, min_y, max_x - min_x, max_y - min_y};

    out.keypoints.resize(cfg.num_parts);
    for (std::size_t p = 0; p < cfg.num_parts; ++p) {
        const auto [kx, ky] = centers[p];
        const bool inside = kx >= 0 && ky >= 0 && kx <= static_cast<double>(s) &&
                            ky <= static_cast<double>(s);
        out.keypoints[p] = {p, kx, ky, !occluded[p] && inside};
    }
    return out;
}

Sample make_sample(const GeneratorConfig& cfg,
                   const std::vector<std::vector<std::size_t>>& assignments,
                   std::size_t class_label, std::uint64_t sample_seed) {
    Rng rng(sample_seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Pose pose;
        pose.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
        const double t = cfg.max_translation_frac * cfg.image_size;
        pose.tx = rng.uniform(-t, t);
        pose.ty = rng.uniform(-t, t);
        pose.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
        std::vector<bool> occluded(cfg.num_parts);
        for (std::size_t p = 0; p < cfg.num_parts; ++p)
            occluded[p] = rng.uniform() < cfg.occlusion_prob;
        try {
            return render_sample(cfg, assignments, class_label, pose, occluded,
                                 Rng::mix(sample_seed, 0xBA5E));
        } catch (const DataError&) {
            continue; // degenerate pose, resample
        }
    }
    throw DataError("could not render a valid pose after 100 attempts");
}

} // namespace

void GeneratorConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (num_parts < 1) throw ConfigError("num_parts must be >= 1");
    if (image_size < 16) throw ConfigError("image_size must be >= 16");
    if (min_scale <= 0 || max_scale < min_scale) throw ConfigError("bad scale range");
    if (occlusion_prob < 0 || occlusion_prob >= 1) throw ConfigError("bad occlusion_prob");
}

std::vector<std::pair<double, double>> canonical_part_offsets(std::size_t num_parts) {
    std::vector<std::pair<double, double>> out;
    for (std::size_t p = 0; p < num_parts; ++p) {
        const double a = 2.0 * M_PI * p / num_parts;
        out.emplace_back(kPartRingFrac * kBodyRadiusX * std::cos(a),
                         kPartRingFrac * kBodyRadiusY * std::sin(a));
    }
    return out;
}

Sample render_posed_sample(const GeneratorConfig& config, std::size_t class_label,
                           double rotation, double tx, double ty, double scale,
                           const std::vector<bool>& occluded, std::uint64_t noise_seed) {
    config.validate();
    if (class_label >= config.num_classes) throw DataError("class label out of range");
    if (occluded.size() != config.num_parts) throw UsageError("occlusion mask size mismatch");
    const auto assignments = color_assignments(config);
    return render_sample(config, assignments, class_label, {rotation, tx, ty, scale},
                         occluded, noise_seed);
}

Dataset generate(const GeneratorConfig& config) {
    config.validate();
    const auto assignments = color_assignments(config);
    Dataset ds;
    ds.config = config;
    auto fill = [&](std::vector<Sample>& split, std::size_t per_class, std::uint64_t tag) {
        for (std::size_t k = 0; k < config.num_classes; ++k)
            for (std::size_t i = 0; i < per_class; ++i) {
                const std::uint64_t idx = tag + k * per_class + i;
                split.push_back(make_sample(config, assignments, k, Rng::mix(config.seed, idx)));
            }
    };
    fill(ds.train, config.train_per_class, 0x100000);
    fill(ds.test, config.test_per_class, 0x200000);
    const auto report = holistic_confusability_check(ds.train, config.num_classes);
    if (!report.pass)
        throw ConfigError("generator config rejected: classes separable by global "
                          "color statistics (chi-square " +
                          std::to_string(report.max_class_distance) + " >= " +
                          std::to_string(report.threshold) + ")");
    return ds;
}

ConfusabilityReport holistic_confusability_check(const std::vector<Sample>& samples,
                                                 std::size_t num_classes, double threshold) {
    // 4x4x4 RGB histogram means per class.
    constexpr std::size_t kBins = 64;
    std::vector<std::vector<double>> hist(num_classes, std::vector<double>(kBins, 0.0));
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : samples) {
        std::vector<double> h(kBins, 0.0);
        const std::size_t npx = s.image.width * s.image.height;
        for (std::size_t i = 0; i < npx; ++i) {
            const std::size_t r = s.image.pixels[3 * i] >> 6;
            const std::size_t g = s.image.pixels[3 * i + 1] >> 6;
            const std::size_t b = s.image.pixels[3 * i + 2] >> 6;
            h[(r * 4 + g) * 4 + b] += 1.0 / npx;
        }
        for (std::size_t k = 0; k < kBins; ++k) hist[s.class_label][k] += h[k];
        counts[s.class_label] += 1;
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw DataError("confusability check: empty class");
        for (double& v : hist[c]) v /= counts[c];
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < num_classes; ++a)
        for (std::size_t b = a + 1; b < num_classes; ++b) {
            double chi = 0.0;
            for (std::size_t k = 0; k < kBins; ++k) {
                const double s = hist[a][k] + hist[b][k];
                if (s > 1e-12) {
                    const double d = hist[a][k] - hist[b][k];
                    chi += 0.5 * d * d / s;
                }
            }
            worst = std::max(worst, chi);
        }
    return {worst, threshold, worst < threshold};
}

namespace {

std::string sample_name(const std::string& split, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu.ppm", split.c_str(), i);
    return buf;
}

void save_split(const std::string& dir, const std::string& split,
                const std::vector<Sample>& samples) {
    nlohmann::json ann = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::string file = sample_name(split, i);
        write_ppm(dir + "/" + file, s.image);
        nlohmann::json kps = nlohmann::json::array();
        for (const auto& kp : s.keypoints)
            kps.push_back({{"part", kp.part}, {"x", kp.x}, {"y", kp.y},
                           {"visible", kp.visible}});
        ann.push_back({{"file", file},
                       {"class", s.class_label},
                       {"box", {s.object_box.x, s.object_box.y, s.object_box.w,
                                s.object_box.h}},
                       {"keypoints", kps}});
    }
    std::ofstream os(dir + "/" + split + ".json");
    if (!os) throw DataError("cannot write annotations for split " + split);
    os << ann.dump(2) << "\n";
}

} // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    save_split(dir, "train", ds.train);
    save_split(dir, "test", ds.test);
}

LoadedSplit load_split(const std::string& dir, const std::string& split) {
    const std::string ann_path = dir + "/" + split + ".json";
    std::ifstream is(ann_path);
    if (!is) throw DataError("cannot open annotations: " + ann_path);
    nlohmann::json ann;
    try {
        is >> ann;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotations in " + ann_path + ": " + e.what());
    }
    LoadedSplit out;
    try {
        for (const auto& rec : ann) {
            Sample s;
            s.image = read_ppm(dir + "/" + rec.at("file").get<std::string>());
            s.class_label = rec.at("class").get<std::size_t>();
            const auto& box = rec.at("box");
            s.object_box = {box.at(0).get<double>(), box.at(1).get<double>(),
                            box.at(2).get<double>(), box.at(3).get<double>()};
            for (const auto& kp : rec.at("keypoints"))
                s.keypoints.push_back({kp.at("part").get<std::size_t>(),
                                       kp.at("x").get<double>(), kp.at("y").get<double>(),
                                       kp.at("visible").get<bool>()});
            out.num_parts = std::max(out.num_parts, s.keypoints.size());
            out.num_classes = std::max(out.num_classes, s.class_label + 1);
            out.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotation record in " + ann_path + ": " + e.what());
    }
    if (out.samples.empty()) throw DataError("empty split " + split + " in " + dir);
    return out;
}

Tensor4<float> images_to_tensor(const std::vector<Sample>& samples, std::size_t first,
                                std::size_t count) {
    if (first + count > samples.size()) throw UsageError("images_to_tensor out of range");
    const std::size_t s = samples[first].image.width;
    Tensor4<float> out(count, 3, s, s);
    for (std::size_t n = 0; n < count; ++n) {
        const ImageU8& img = samples[first + n].image;
        if (img.width != s || img.height != s)
            throw DataError("inconsistent image sizes in dataset");
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    out.at(n, c, y, x) = img.at(y, x, c) / 255.0f;
    }
    return out;
}

} // namespace partpool

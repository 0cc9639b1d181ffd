#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include "ncdlab/errors.hpp"
#include "ncdlab/rng.hpp"
#include "ncdlab/tensor.hpp"

namespace ncdlab {

enum class Corruption { none, gaussian_blur, jpeg_like, impulse_noise };
enum class ShiftMode { none, cmix, call };

inline const char* to_string(Corruption c) {
    switch (c) {
        case Corruption::none: return "none";
        case Corruption::gaussian_blur: return "gaussian_blur";
        case Corruption::jpeg_like: return "jpeg_like";
        case Corruption::impulse_noise: return "impulse_noise";
    }
    return "?";
}

inline const char* to_string(ShiftMode m) {
    switch (m) {
        case ShiftMode::none: return "none";
        case ShiftMode::cmix: return "cmix";
        case ShiftMode::call: return "call";
    }
    return "?";
}

inline Corruption corruption_from_string(const std::string& s) {
    if (s == "none") return Corruption::none;
    if (s == "gaussian_blur" || s == "gaussian") return Corruption::gaussian_blur;
    if (s == "jpeg_like" || s == "jpeg") return Corruption::jpeg_like;
    if (s == "impulse_noise" || s == "impulse") return Corruption::impulse_noise;
    throw config_error("unknown corruption kind: " + s);
}

inline ShiftMode shift_from_string(const std::string& s) {
    if (s == "none") return ShiftMode::none;
    if (s == "cmix") return ShiftMode::cmix;
    if (s == "call") return ShiftMode::call;
    throw config_error("unknown shift mode: " + s);
}

/// Recipe for one synthetic cross-domain dataset: content classes are
/// parametric shape families, style shift comes from a pixel corruption
/// applied to the novel half (cmix), to everything (call), or to nothing.
struct SyntheticSpec {
    int image_size = 16;
    int num_classes = 10;
    int samples_per_class = 100;
    Corruption corruption = Corruption::gaussian_blur;
    int severity = 3;
    ShiftMode shift_mode = ShiftMode::cmix;
    std::uint64_t seed = 1;

    void validate() const {
        if (image_size < 8) throw config_error("image_size must be >= 8");
        if (num_classes < 2 || num_classes % 2 != 0)
            throw config_error("num_classes must be even and >= 2 (half seen, half novel)");
        if (num_classes > 10) throw config_error("at most 10 shape families are defined");
        if (samples_per_class < 1) throw config_error("samples_per_class must be >= 1");
        if (severity < 1 || severity > 5) throw config_error("severity must be in 1..5");
    }

    int num_seen() const { return num_classes / 2; }
    int num_novel() const { return num_classes - num_classes / 2; }
};

/// Labeled (seen-class) and unlabeled (novel-class) halves. Unlabeled labels
/// are kept for evaluation only. domain tag: 0 = clean render, 1 = corrupted.
struct DatasetSplit {
    std::vector<TensorF> labeled_images;
    std::vector<int> labeled_labels;
    std::vector<int> labeled_domains;
    std::vector<TensorF> unlabeled_images;
    std::vector<int> unlabeled_labels;
    std::vector<int> unlabeled_domains;
    int num_classes = 0;
    int image_size = 0;
};

namespace shapes {

// Shared jitter for one sample: position, scale, and foreground intensity.
struct Jitter {
    double cx, cy, scale, intensity;
};

inline Jitter draw_jitter(Rng& rng, int size) {
    Jitter j;
    const double c = size / 2.0;
    j.cx = c + rng.uniform(-1.0, 1.0);
    j.cy = c + rng.uniform(-1.0, 1.0);
    j.scale = rng.uniform(0.85, 1.15);
    j.intensity = rng.uniform(0.6, 1.0);
    return j;
}

// Class families are defined as indicator functions over the unit canvas;
// rendering supersamples 2x2 per pixel for soft edges.
inline bool indicator(int class_id, double x, double y, int size, const Jitter& j, double phase) {
    const double dx = x - j.cx;
    const double dy = y - j.cy;
    const double r = 0.33 * size * j.scale;
    switch (class_id) {
        case 0:  // disc
            return dx * dx + dy * dy <= r * r;
        case 1: {  // ring
            const double d2 = dx * dx + dy * dy;
            const double inner = 0.55 * r;
            return d2 <= r * r && d2 >= inner * inner;
        }
        case 2: {  // cross
            const double t = 0.3 * r;
            return (std::fabs(dx) <= t || std::fabs(dy) <= t) &&
                   std::fabs(dx) <= r && std::fabs(dy) <= r;
        }
        case 3: {  // horizontal bars
            const double period = std::max(3.0, 0.25 * size * j.scale);
            const double u = (y + phase) / period;
            return (static_cast<long long>(std::floor(u)) % 2 + 2) % 2 == 0;
        }
        case 4: {  // checkerboard
            const double cell = std::max(2.5, 0.22 * size * j.scale);
            const long long ix = static_cast<long long>(std::floor((x + phase) / cell));
            const long long iy = static_cast<long long>(std::floor((y + phase) / cell));
            return ((ix + iy) % 2 + 2) % 2 == 0;
        }
        case 5: {  // filled triangle, apex up
            const double rt = 1.1 * r;
            if (dy < -rt || dy > rt) return false;
            const double half_width = (dy + rt) / (2.0 * rt) * rt;
            return std::fabs(dx) <= half_width;
        }
        case 6: {  // L-shape: two thick perpendicular bars meeting in a corner
            const double rl = 0.9 * r;
            const double t = 0.55 * rl;
            const bool vertical = dx >= -rl && dx <= -rl + t && std::fabs(dy) <= rl;
            const bool horizontal = dy >= rl - t && dy <= rl && std::fabs(dx) <= rl;
            return vertical || horizontal;
        }
        case 7: {  // diagonal stripe
            const double t = std::max(1.4, 0.32 * r);
            return std::fabs(dx - dy + phase * 0.5) <= t;
        }
        case 8: {  // dot grid, confined to a central patch
            if (dx * dx + dy * dy > (1.2 * r) * (1.2 * r)) return false;
            const double spacing = 3.6;
            const double ux = x + phase;
            const double uy = y + phase;
            const double fx = ux - std::round(ux / spacing) * spacing;
            const double fy = uy - std::round(uy / spacing) * spacing;
            return fx * fx + fy * fy <= 1.3 * 1.3;
        }
        case 9: {  // square frame: large ring, stroke about 2 px
            const double rf = 1.3 * r;
            const double m = std::max(std::fabs(dx), std::fabs(dy));
            return m <= rf && m >= 0.7 * rf;
        }
        default: throw config_error("class_id out of range (10 shape families)");
    }
}

}  // namespace shapes

/// Renders one sample of a class family. Deterministic in `seed`.
inline TensorF render_shape(int class_id, int size, std::uint64_t seed) {
    if (size < 8) throw config_error("image size must be >= 8");
    if (class_id < 0 || class_id >= 10) throw config_error("class_id must be in 0..9");
    Rng rng(seed);
    const shapes::Jitter j = shapes::draw_jitter(rng, size);
    const double phase = rng.uniform(0.0, 4.0);
    TensorF img({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            // 2x2 supersampling for fractional coverage
            int hits = 0;
            for (double oy : {0.25, 0.75})
                for (double ox : {0.25, 0.75})
                    if (shapes::indicator(class_id, x + ox, y + oy, size, j, phase)) ++hits;
            img.at(y * size + x) = static_cast<float>(j.intensity * hits / 4.0);
        }
    // mild pixel noise so renders are not exactly piecewise-constant
    for (auto& v : img.data) {
        v += static_cast<float>(rng.normal(0.0, 0.02));
        v = std::clamp(v, 0.f, 1.f);
    }
    return img;
}

/// n samples of one class. Per-sample seeds are derived as
/// mix(seed, class, index) so generation is order-independent.
inline std::vector<TensorF> generate_content(int class_id, int n, int size, std::uint64_t seed) {
    std::vector<TensorF> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(render_shape(class_id, size,
                                   mix_seed(seed, static_cast<std::uint64_t>(class_id),
                                            static_cast<std::uint64_t>(i))));
    return out;
}

namespace detail {

inline std::uint64_t hash_image(const TensorF& img) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the f32 bit patterns
    for (float v : img.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 1099511628211ull;
        }
    }
    return h;
}

inline TensorF gaussian_blur(const TensorF& img, double sigma) {
    const int size = img.dims[0];
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= sum;

    auto reflect = [&](int i) {
        while (i < 0 || i >= size) {
            if (i < 0) i = -i - 1;
            if (i >= size) i = 2 * size - i - 1;
        }
        return i;
    };

    const int w = img.dims[1];
    TensorF tmp(img.dims), out(img.dims);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       img.data[static_cast<std::size_t>(y) * w + reflect(x + k)];
            tmp.data[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       tmp.data[static_cast<std::size_t>(reflect(y + k)) * w + x];
            out.data[static_cast<std::size_t>(y) * w + x] =
                std::clamp(static_cast<float>(acc), 0.f, 1.f);
        }
    return out;
}

inline TensorF impulse_noise(const TensorF& img, double flip_prob, std::uint64_t seed) {
    Rng rng(seed);
    TensorF out = img;
    for (auto& v : out.data)
        if (rng.bernoulli(flip_prob)) v = rng.bernoulli(0.5) ? 1.f : 0.f;
    return out;
}

// Orthonormal DCT-II basis for 8x8 blocks.
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> c{};
        for (int k = 0; k < 8; ++k)
            for (int n = 0; n < 8; ++n)
                c[k][n] = std::sqrt((k == 0 ? 1.0 : 2.0) / 8.0) *
                          std::cos((2.0 * n + 1.0) * k * std::numbers::pi / 16.0);
        return c;
    }();
    return basis;
}

// Luminance-only blockwise DCT quantization; a stand-in that reproduces the
// blockiness artifact class without a codec dependency. `step` acts in
// 0..255 pixel units.
inline TensorF jpeg_like(const TensorF& img, double step) {
    const auto& C = dct_basis();
    const int h = img.dims[0], w = img.dims[1];
    TensorF out(img.dims);
    auto px = [&](int y, int x) {
        y = std::min(y, h - 1);  // clamp-pad partial edge blocks
        x = std::min(x, w - 1);
        return 255.0 * img.data[static_cast<std::size_t>(y) * w + x];
    };
    for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
            double block[8][8], coef[8][8];
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) block[y][x] = px(by + y, bx + x);
            // coef = C * block * C^T, quantize, then back
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    double acc = 0;
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x) acc += C[u][y] * block[y][x] * C[v][x];
                    coef[u][v] = std::round(acc / step) * step;
                }
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    double acc = 0;
                    for (int u = 0; u < 8; ++u)
                        for (int v = 0; v < 8; ++v) acc += C[u][y] * coef[u][v] * C[v][x];
                    const int yy = by + y, xx = bx + x;
                    if (yy < h && xx < w)
                        out.data[static_cast<std::size_t>(yy) * w + xx] =
                            std::clamp(static_cast<float>(acc / 255.0), 0.f, 1.f);
                }
        }
    return out;
}

}  // namespace detail

// Severity maps are fixed constants of this artifact.
inline double blur_sigma(int severity) {
    static constexpr double map[5] = {0.5, 0.75, 1.0, 1.5, 2.0};
    return map[severity - 1];
}

inline double impulse_prob(int severity) {
    static constexpr double map[5] = {0.02, 0.05, 0.1, 0.17, 0.25};
    return map[severity - 1];
}

inline double jpeg_step(int severity) {
    static constexpr double map[5] = {2, 4, 8, 16, 32};
    return map[severity - 1];
}

/// Pure: identical (img, kind, severity) always yields identical output.
/// Impulse noise derives its RNG seed from the image content.
inline TensorF apply_corruption(const TensorF& img, Corruption kind, int severity) {
    if (severity < 1 || severity > 5) throw config_error("severity must be in 1..5");
    if (img.rank() != 2) throw shape_error("apply_corruption expects a [h,w] image");
    switch (kind) {
        case Corruption::none: return img;
        case Corruption::gaussian_blur: return detail::gaussian_blur(img, blur_sigma(severity));
        case Corruption::impulse_noise:
            return detail::impulse_noise(
                img, impulse_prob(severity),
                mix_seed(detail::hash_image(img), static_cast<std::uint64_t>(severity)));
        case Corruption::jpeg_like: return detail::jpeg_like(img, jpeg_step(severity));
    }
    throw config_error("unknown corruption kind");
}

/// Classes 0..K/2-1 become the labeled (seen) half, K/2..K-1 the unlabeled
/// (novel) half; corruption placement follows the shift mode.
inline DatasetSplit build_split(const SyntheticSpec& spec) {
    spec.validate();
    DatasetSplit split;
    split.num_classes = spec.num_classes;
    split.image_size = spec.image_size;
    const int k_seen = spec.num_seen();
    for (int c = 0; c < spec.num_classes; ++c) {
        const bool seen = c < k_seen;
        const bool corrupt = spec.shift_mode == ShiftMode::call ||
                             (spec.shift_mode == ShiftMode::cmix && !seen);
        auto imgs = generate_content(c, spec.samples_per_class, spec.image_size, spec.seed);
        for (auto& img : imgs) {
            TensorF final_img =
                corrupt ? apply_corruption(img, spec.corruption, spec.severity) : std::move(img);
            if (seen) {
                split.labeled_images.push_back(std::move(final_img));
                split.labeled_labels.push_back(c);
                split.labeled_domains.push_back(corrupt ? 1 : 0);
            } else {
                split.unlabeled_images.push_back(std::move(final_img));
                split.unlabeled_labels.push_back(c);
                split.unlabeled_domains.push_back(corrupt ? 1 : 0);
            }
        }
    }
    return split;
}

/// Two independently augmented views: reflect-pad-2 random crop, horizontal
/// flip with p=0.5, brightness/contrast jitter of +-0.2. Deterministic per
/// seed.
inline std::pair<TensorF, TensorF> augment(const TensorF& img, std::uint64_t seed) {
    if (img.rank() != 2) throw shape_error("augment expects a [h,w] image");
    Rng rng(seed);
    const int h = img.dims[0], w = img.dims[1];
    constexpr int pad = 2;

    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };

    auto one_view = [&]() {
        const int dy = static_cast<int>(rng.below(2 * pad + 1));
        const int dx = static_cast<int>(rng.below(2 * pad + 1));
        const bool flip = rng.bernoulli(0.5);
        const float brightness = static_cast<float>(rng.uniform(-0.2, 0.2));
        const float contrast = static_cast<float>(rng.uniform(0.8, 1.2));
        TensorF view({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = reflect(y + dy - pad, h);
                int sx = reflect(x + dx - pad, w);
                if (flip) sx = w - 1 - sx;
                float v = img.data[static_cast<std::size_t>(sy) * w + sx];
                v = (v - 0.5f) * contrast + 0.5f + brightness;
                view.data[static_cast<std::size_t>(y) * w + x] = std::clamp(v, 0.f, 1.f);
            }
        return view;
    };

    TensorF v1 = one_view();
    TensorF v2 = one_view();
    return {std::move(v1), std::move(v2)};
}

}  // namespace ncdlab

#include <filesystem>

#include "json.hpp"
#include "ncdlab/io.hpp"

namespace ncdlab {

namespace detail {

inline TensorF stack_images(const std::vector<TensorF>& labeled,
                            const std::vector<TensorF>& unlabeled, int size) {
    const int n = static_cast<int>(labeled.size() + unlabeled.size());
    TensorF all({n, size, size});
    std::size_t off = 0;
    for (const auto* group : {&labeled, &unlabeled})
        for (const auto& img : *group) {
            std::copy(img.data.begin(), img.data.end(), all.data.begin() + off);
            off += img.data.size();
        }
    return all;
}

inline TensorF int_tensor(const std::vector<int>& a, const std::vector<int>& b) {
    TensorF t({static_cast<int>(a.size() + b.size())});
    std::size_t i = 0;
    for (int v : a) t.data[i++] = static_cast<float>(v);
    for (int v : b) t.data[i++] = static_cast<float>(v);
    return t;
}

}  // namespace detail

/// Layout: manifest.json + images.cdt1 [N,h,w] + labels.cdt1 [N] +
/// domains.cdt1 [N], labeled rows first.
inline void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split,
                         const SyntheticSpec& spec) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{
        {"image_size", spec.image_size},
        {"num_classes", spec.num_classes},
        {"samples_per_class", spec.samples_per_class},
        {"corruption", to_string(spec.corruption)},
        {"severity", spec.severity},
        {"shift_mode", to_string(spec.shift_mode)},
        {"seed", spec.seed},
        {"n_labeled", split.labeled_images.size()},
        {"n_unlabeled", split.unlabeled_images.size()},
    };
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    save_cdt1(dir / "images.cdt1",
              detail::stack_images(split.labeled_images, split.unlabeled_images,
                                   split.image_size));
    save_cdt1(dir / "labels.cdt1", detail::int_tensor(split.labeled_labels, split.unlabeled_labels));
    save_cdt1(dir / "domains.cdt1",
              detail::int_tensor(split.labeled_domains, split.unlabeled_domains));
}

inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    const TensorF images = load_cdt1(dir / "images.cdt1");
    const TensorF labels = load_cdt1(dir / "labels.cdt1");
    const TensorF domains = load_cdt1(dir / "domains.cdt1");
    if (images.rank() != 3) throw io_error("images.cdt1 must be rank 3");
    const int n = images.dims[0], size = images.dims[1];
    if (labels.numel() != n || domains.numel() != n)
        throw io_error("labels/domains length does not match image count");
    const auto n_labeled = manifest.at("n_labeled").get<std::size_t>();

    DatasetSplit split;
    split.num_classes = manifest.at("num_classes").get<int>();
    split.image_size = size;
    for (int i = 0; i < n; ++i) {
        TensorF img({size, size});
        std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i) * size * size,
                    size * size, img.data.begin());
        const int label = static_cast<int>(labels.data[static_cast<std::size_t>(i)]);
        const int domain = static_cast<int>(domains.data[static_cast<std::size_t>(i)]);
        if (static_cast<std::size_t>(i) < n_labeled) {
            split.labeled_images.push_back(std::move(img));
            split.labeled_labels.push_back(label);
            split.labeled_domains.push_back(domain);
        } else {
            split.unlabeled_images.push_back(std::move(img));
            split.unlabeled_labels.push_back(label);
            split.unlabeled_domains.push_back(domain);
        }
    }
    return split;
}

}  // namespace ncdlab

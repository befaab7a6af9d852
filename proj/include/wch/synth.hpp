#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
    uint64_t seed = 0;
    int64_t count = 0;
    int64_t classes = 0;
    int64_t image_size = 32;
    int64_t patch_size = 8;
    int64_t channels = 3;
    int64_t train_count = 0;  // leading slice used for training; rest queries
};

inline void validate(const DataConfig& cfg) {
    if (cfg.classes < 2)
        throw ConfigError("data.classes must be at least 2, got " +
                          std::to_string(cfg.classes));
    if (cfg.count < cfg.classes)
        throw ConfigError("data.count (" + std::to_string(cfg.count) +
                          ") must be at least data.classes (" +
                          std::to_string(cfg.classes) + ")");
    if (cfg.image_size <= 0 || cfg.patch_size <= 0 || cfg.channels <= 0)
        throw ConfigError("data dimensions must be positive");
    if (cfg.image_size % cfg.patch_size != 0)
        throw ConfigError("data.image_size (" +
                          std::to_string(cfg.image_size) +
                          ") is not divisible by data.patch_size (" +
                          std::to_string(cfg.patch_size) + ")");
    if (cfg.train_count < 0 || cfg.train_count > cfg.count)
        throw ConfigError("data.train_count must lie in [0, data.count]");
}

// ---------------------------------------------------------------------------
// Images and labels
// ---------------------------------------------------------------------------

// Pixels are row-major height x width x channel, values in [0,1].
struct SynthImage {
    int64_t size = 0;
    int64_t channels = 0;
    std::vector<double> pixels;
    std::vector<uint8_t> labels;  // multi-hot over the class set

    double& at(int64_t y, int64_t x, int64_t ch) {
        return pixels[(y * size + x) * channels + ch];
    }
    double at(int64_t y, int64_t x, int64_t ch) const {
        return pixels[(y * size + x) * channels + ch];
    }
};

// Multi-hot label rows for a whole dataset; also the retrieval ground truth
// (two items are relevant iff their label sets intersect).
struct LabelSet {
    int64_t count = 0;
    int64_t num_classes = 0;
    std::vector<uint8_t> multihot;  // count * num_classes, values in {0,1}

    uint8_t get(int64_t item, int64_t cls) const {
        return multihot[item * num_classes + cls];
    }
    bool relevant(int64_t a, int64_t b) const {
        for (int64_t c = 0; c < num_classes; ++c)
            if (get(a, c) && get(b, c)) return true;
        return false;
    }
};

inline LabelSet labels_of(const std::vector<SynthImage>& images) {
    LabelSet ls;
    ls.count = static_cast<int64_t>(images.size());
    if (ls.count == 0) return ls;
    ls.num_classes = static_cast<int64_t>(images[0].labels.size());
    ls.multihot.reserve(ls.count * ls.num_classes);
    for (const SynthImage& img : images)
        ls.multihot.insert(ls.multihot.end(), img.labels.begin(),
                           img.labels.end());
    return ls;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

// Class cardinalities: mostly single-label with a multi-label tail
// (10% two labels, 3% three), assigned to shuffled image slots.
inline std::vector<int> draw_cardinalities(int64_t count, int64_t classes,
                                           std::mt19937_64& rng) {
    int64_t n3 = std::llround(0.03 * double(count));
    int64_t n2 = std::llround(0.10 * double(count));
    if (classes < 3) n3 = 0;
    n3 = std::min<int64_t>(n3, count);
    n2 = std::min<int64_t>(n2, count - n3);
    std::vector<int> card(static_cast<size_t>(count), 1);
    for (int64_t i = 0; i < n3; ++i) card[i] = 3;
    for (int64_t i = n3; i < n3 + n2; ++i) card[i] = 2;
    rng_shuffle(rng, card);
    return card;
}

// Pick `m` distinct classes, always taking the currently least-used ones so
// per-class usage stays balanced within +-1; ties broken by a seeded shuffle.
inline std::vector<int64_t> pick_classes(std::vector<int64_t>& usage,
                                         int64_t m, std::mt19937_64& rng) {
    const int64_t C = static_cast<int64_t>(usage.size());
    std::vector<int64_t> order(static_cast<size_t>(C));
    std::iota(order.begin(), order.end(), 0);
    rng_shuffle(rng, order);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return usage[a] < usage[b]; });
    std::vector<int64_t> picked(order.begin(), order.begin() + m);
    std::sort(picked.begin(), picked.end());
    for (int64_t k : picked) ++usage[k];
    return picked;
}

// Hue of one class: evenly spaced sectors on the hue circle.
inline double class_hue(int64_t cls, int64_t num_classes) {
    return double(cls) / double(num_classes);
}

// Unit direction in the chroma plane (perpendicular to the gray axis) for a
// hue on the [0,1) circle.
inline void chroma_dir(double hue, double d[3]) {
    const double th = 2.0 * M_PI * hue;
    const double c = std::cos(th), s = std::sin(th);
    const double inv6 = 1.0 / std::sqrt(6.0), inv2 = 1.0 / std::sqrt(2.0);
    d[0] = c * 2.0 * inv6;
    d[1] = -c * inv6 + s * inv2;
    d[2] = -c * inv6 - s * inv2;
}

// Wrap a hue offset back onto the [0,1) hue circle.
inline double wrap_hue(double h) { return h - std::floor(h); }

// One hue for the whole image: the circular midpoint of its label hues.
// Painting every element of an image toward a single direction means two
// crops of that image can never disagree about its color, no matter which
// label regions they land on — the anchor between two views survives any
// crop, zoom, or flip even for multi-label images.
inline double label_set_hue(const std::vector<int64_t>& picked,
                            int64_t num_classes) {
    double sx = 0.0, sy = 0.0;
    for (int64_t c : picked) {
        const double th = 2.0 * M_PI * class_hue(c, num_classes);
        sx += std::cos(th);
        sy += std::sin(th);
    }
    if (sx * sx + sy * sy < 1e-12) {
        // Opposite hues cancel; fall back to the arithmetic midpoint nudged
        // off the pure class hues so the blend stays distinct from every
        // single-label color.
        double m = 0.0;
        for (int64_t c : picked) m += class_hue(c, num_classes);
        return wrap_hue(m / double(picked.size()) +
                        0.5 / double(num_classes));
    }
    return wrap_hue(std::atan2(sy, sx) / (2.0 * M_PI));
}

// Image ground: a flat chroma field plus an image-specific ripple. Every
// pixel sits at mid gray leaning a fixed amount toward the image's hue, so
// the average chroma of any patch of any crop points at the same color.
// Because every image leans by the same amount, no other image's views can
// match an image's views better than they match each other on this channel.
// All texture on top is image-specific: a faint luminance ripple with
// random frequency, orientation, and phase, which two images never share,
// so cross-image similarity cannot be won on texture alignment either.
inline void paint_field(SynthImage& img, double hue,
                        std::mt19937_64& rng) {
    const int64_t s = img.size;
    double d[3];
    chroma_dir(hue, d);
    const double freq =
        2.0 * M_PI * (3.0 + 6.0 * rng_uniform(rng)) / double(s);
    const double angle = M_PI * rng_uniform(rng);
    const double phase = 2.0 * M_PI * rng_uniform(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int64_t y = 0; y < s; ++y) {
        for (int64_t x = 0; x < s; ++x) {
            const double ripple =
                0.03 *
                std::sin(freq * (double(x) * ca + double(y) * sa) + phase);
            for (int64_t ch = 0; ch < img.channels; ++ch)
                img.at(y, x, ch) =
                    std::clamp(0.5 + 0.35 * d[ch % 3] + ripple, 0.0, 1.0);
        }
    }
}

// Per-image signature: a handful of small discs at image-specific positions
// where the hue swings by an image-specific amount while the chroma
// magnitude stays exactly the field's. Two crops of the same image share
// these marks, while different images of the same class do not. Because the
// marks change only the chroma direction, never its strength, a view that
// happens to contain more of them is no "louder" than one that contains
// none — cross-image similarity cannot be won on paint energy.
inline void paint_watermark(SynthImage& img, double hue,
                            std::mt19937_64& rng) {
    const int64_t s = img.size;
    const int discs = 6;
    const double edge = 1.0;
    const double radius = 2.5;
    for (int dsc = 0; dsc < discs; ++dsc) {
        const double cx = rng_uniform(rng) * double(s);
        const double cy = rng_uniform(rng) * double(s);
        const double nudge = 0.08 * (2.0 * rng_uniform(rng) - 1.0);
        double d3[3];
        chroma_dir(wrap_hue(hue + nudge), d3);
        const int64_t lo_y = std::max<int64_t>(
            0, static_cast<int64_t>(std::floor(cy - radius - edge)));
        const int64_t hi_y = std::min<int64_t>(
            s - 1, static_cast<int64_t>(std::ceil(cy + radius + edge)));
        const int64_t lo_x = std::max<int64_t>(
            0, static_cast<int64_t>(std::floor(cx - radius - edge)));
        const int64_t hi_x = std::min<int64_t>(
            s - 1, static_cast<int64_t>(std::ceil(cx + radius + edge)));
        for (int64_t y = lo_y; y <= hi_y; ++y) {
            for (int64_t x = lo_x; x <= hi_x; ++x) {
                const double dx = double(x) - cx, dy = double(y) - cy;
                const double dist = std::sqrt(dx * dx + dy * dy);
                const double alpha =
                    std::clamp((radius - dist) / edge, 0.0, 1.0);
                if (alpha <= 0.0) continue;
                for (int64_t ch = 0; ch < img.channels; ++ch) {
                    const double paint =
                        std::clamp(0.5 + 0.35 * d3[ch % 3], 0.0, 1.0);
                    img.at(y, x, ch) = alpha * paint +
                                       (1.0 - alpha) * img.at(y, x, ch);
                }
            }
        }
    }
}

// Paint one class blob: a soft-edged disc anchored to the class's grid cell
// in which the hue swings a fixed step away from the image's hue while the
// chroma magnitude stays exactly the field's. The disc marks where a label
// lives (its cell is the class's fixed location) as a chromatic edge, so
// crops that do or do not include it stay equally "loud" and disagree about
// the image's color direction only to second order. The disc area is held
// constant across label cardinalities (radius shrinks as 1/sqrt(labels)) so
// no image carries systematically more hue texture than another.
inline void paint_class(SynthImage& img, int64_t cls, int64_t num_classes,
                        double hue, int64_t cardinality,
                        std::mt19937_64& rng) {
    const int64_t s = img.size;
    const int64_t grid =
        static_cast<int64_t>(std::ceil(std::sqrt(double(num_classes))));
    const double cell = double(s) / double(grid);
    const double jx = (rng_uniform(rng) * 2.0 - 1.0) * 0.08 * cell;
    const double jy = (rng_uniform(rng) * 2.0 - 1.0) * 0.08 * cell;
    const double cx = (double(cls % grid) + 0.5) * cell + jx;
    const double cy = (double(cls / grid) + 0.5) * cell + jy;
    const double radius =
        double(s) * 0.22 / std::sqrt(double(std::max<int64_t>(1,
                                                              cardinality)));
    double d3[3];
    chroma_dir(wrap_hue(hue + 0.045), d3);

    const double edge = 2.5;
    for (int64_t y = 0; y < s; ++y) {
        for (int64_t x = 0; x < s; ++x) {
            const double dx = double(x) - cx, dy = double(y) - cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            const double alpha =
                std::clamp((radius - d) / edge, 0.0, 1.0);
            if (alpha <= 0.0) continue;
            for (int64_t ch = 0; ch < img.channels; ++ch) {
                const double paint =
                    std::clamp(0.5 + 0.35 * d3[ch % 3], 0.0, 1.0);
                img.at(y, x, ch) =
                    alpha * paint + (1.0 - alpha) * img.at(y, x, ch);
            }
        }
    }
}

}  // namespace detail

// Deterministic multi-label dataset: each class owns a colored, textured,
// grid-anchored blob prototype; an image fills its canvas with the field
// texture of one of its labels' classes and superposes the blobs of all of
// its 1-3 labels on top.
inline std::vector<SynthImage> generate(const DataConfig& cfg) {
    validate(cfg);
    auto label_rng = make_rng(seed_mix(cfg.seed, 0x5EED'0001));
    const std::vector<int> cards =
        detail::draw_cardinalities(cfg.count, cfg.classes, label_rng);
    std::vector<int64_t> usage(static_cast<size_t>(cfg.classes), 0);

    std::vector<SynthImage> images;
    images.reserve(static_cast<size_t>(cfg.count));
    for (int64_t i = 0; i < cfg.count; ++i) {
        SynthImage img;
        img.size = cfg.image_size;
        img.channels = cfg.channels;
        img.pixels.assign(
            static_cast<size_t>(cfg.image_size * cfg.image_size *
                                cfg.channels),
            0.5);
        img.labels.assign(static_cast<size_t>(cfg.classes), 0);
        const std::vector<int64_t> picked =
            detail::pick_classes(usage, cards[i], label_rng);
        auto paint_rng = make_rng(seed_mix(cfg.seed, 0x5EED'0002, i));
        // Per-image white balance: the label-set hue is rotated by a small
        // image-specific offset shared by everything painted. The rotation
        // is pointwise, so it survives cropping at any scale, flips,
        // resize, and noise, and it preserves pixel energy: a neighbor's
        // views can never match this image's views better than its own two
        // views match each other. The offset is small enough that class hue
        // sectors stay separated.
        const double hue = detail::wrap_hue(
            detail::label_set_hue(picked, cfg.classes) +
            0.06 * (2.0 * rng_uniform(paint_rng) - 1.0));
        detail::paint_field(img, hue, paint_rng);
        for (int64_t cls : picked) {
            img.labels[static_cast<size_t>(cls)] = 1;
            detail::paint_class(img, cls, cfg.classes, hue,
                                static_cast<int64_t>(picked.size()),
                                paint_rng);
        }
        detail::paint_watermark(img, hue, paint_rng);
        images.push_back(std::move(img));
    }
    return images;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double min_scale = 0.5;
    double max_scale = 1.0;
    double flip_prob = 0.5;
    double noise_sigma = 0.02;
};

// Random crop-and-resize, horizontal flip, additive Gaussian noise, clipped
// back to [0,1]. Labels pass through untouched. Draw order is fixed (scale,
// crop y, crop x, flip, then per-pixel noise) so streams are reproducible.
inline SynthImage augment(const SynthImage& img, uint64_t seed,
                          const AugmentConfig& cfg = {}) {
    const int64_t s = img.size;
    auto rng = make_rng(seed);

    const double u_scale = rng_uniform(rng);
    const double scale =
        cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u_scale;
    int64_t side = std::clamp<int64_t>(std::llround(double(s) * scale), 1, s);
    const double u_y = rng_uniform(rng);
    const double u_x = rng_uniform(rng);
    const int64_t oy = static_cast<int64_t>(u_y * double(s - side + 1));
    const int64_t ox = static_cast<int64_t>(u_x * double(s - side + 1));
    const bool flip = rng_uniform(rng) < cfg.flip_prob;

    SynthImage out;
    out.size = s;
    out.channels = img.channels;
    out.labels = img.labels;
    out.pixels.resize(img.pixels.size());

    // bilinear resize of the [oy, oy+side) x [ox, ox+side) crop back to s;
    // when side == s the sample points land exactly on pixel centers and the
    // copy is bit-exact
    const double ratio = double(side) / double(s);
    for (int64_t y = 0; y < s; ++y) {
        const double sy = (double(y) + 0.5) * ratio - 0.5;
        const int64_t y0 = std::clamp<int64_t>(
            static_cast<int64_t>(std::floor(sy)), 0, side - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, side - 1);
        const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
        for (int64_t x = 0; x < s; ++x) {
            const double sx = (double(x) + 0.5) * ratio - 0.5;
            const int64_t x0 = std::clamp<int64_t>(
                static_cast<int64_t>(std::floor(sx)), 0, side - 1);
            const int64_t x1 = std::min<int64_t>(x0 + 1, side - 1);
            const double fx = std::clamp(sx - double(x0), 0.0, 1.0);
            const int64_t tx = flip ? s - 1 - x : x;
            for (int64_t ch = 0; ch < img.channels; ++ch) {
                const double v00 = img.at(oy + y0, ox + x0, ch);
                const double v01 = img.at(oy + y0, ox + x1, ch);
                const double v10 = img.at(oy + y1, ox + x0, ch);
                const double v11 = img.at(oy + y1, ox + x1, ch);
                const double top = v00 + fx * (v01 - v00);
                const double bot = v10 + fx * (v11 - v10);
                out.at(y, tx, ch) = top + fy * (bot - top);
            }
        }
    }

    if (cfg.noise_sigma != 0.0) {
        for (double& v : out.pixels) {
            v += cfg.noise_sigma * rng_normal(rng);
            v = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patch extraction
// ---------------------------------------------------------------------------

// Row-major patch grid (top-left to bottom-right), each patch flattened
// (row, column, channel)-nested, channel fastest: n = (s/p)^2, d = p^2*c.
template <typename S = double>
Tensor<S> patchify(const SynthImage& img, int64_t p) {
    const int64_t s = img.size, c = img.channels;
    if (p <= 0 || s % p != 0)
        throw ConfigError("patchify: image size " + std::to_string(s) +
                          " is not divisible by patch size " +
                          std::to_string(p));
    const int64_t per_side = s / p;
    const int64_t n = per_side * per_side;
    const int64_t d = p * p * c;
    std::vector<S> out;
    out.reserve(static_cast<size_t>(n * d));
    for (int64_t pr = 0; pr < per_side; ++pr)
        for (int64_t pc = 0; pc < per_side; ++pc)
            for (int64_t dy = 0; dy < p; ++dy)
                for (int64_t dx = 0; dx < p; ++dx)
                    for (int64_t ch = 0; ch < c; ++ch)
                        out.push_back(static_cast<S>(
                            img.at(pr * p + dy, pc * p + dx, ch)));
    return Tensor<S>::from({n, d}, std::move(out));
}

template <typename S = double>
Tensor<S> patchify_batch(const std::vector<SynthImage>& images, int64_t p) {
    if (images.empty()) throw ConfigError("patchify_batch: empty batch");
    const int64_t bs = static_cast<int64_t>(images.size());
    Tensor<S> first = patchify<S>(images[0], p);
    const int64_t n = first.dim(0), d = first.dim(1);
    std::vector<S> out;
    out.reserve(static_cast<size_t>(bs * n * d));
    out.insert(out.end(), first.values().begin(), first.values().end());
    for (int64_t i = 1; i < bs; ++i) {
        Tensor<S> pi = patchify<S>(images[i], p);
        if (pi.dim(0) != n || pi.dim(1) != d)
            throw DimensionError("patchify_batch: inconsistent image shapes");
        out.insert(out.end(), pi.values().begin(), pi.values().end());
    }
    return Tensor<S>::from({bs, n, d}, std::move(out));
}

// Inverse of patchify for a single image (test and inspection helper).
inline SynthImage unpatchify(const Tensor<double>& patches, int64_t s,
                             int64_t p, int64_t c) {
    if (patches.rank() != 2 || patches.dim(0) != (s / p) * (s / p) ||
        patches.dim(1) != p * p * c)
        throw DimensionError("unpatchify: patches " +
                             shape_str(patches.shape()) +
                             " do not match the stated geometry");
    SynthImage img;
    img.size = s;
    img.channels = c;
    img.pixels.assign(static_cast<size_t>(s * s * c), 0.0);
    const int64_t per_side = s / p;
    int64_t idx = 0;
    for (int64_t pr = 0; pr < per_side; ++pr)
        for (int64_t pc = 0; pc < per_side; ++pc)
            for (int64_t dy = 0; dy < p; ++dy)
                for (int64_t dx = 0; dx < p; ++dx)
                    for (int64_t ch = 0; ch < c; ++ch)
                        img.at(pr * p + dy, pc * p + dx, ch) =
                            patches.values()[idx++];
    return img;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

// Label file layout, little-endian: magic "WLBL", u8 version=1, u64 count,
// u16 num_classes, then per item ceil(num_classes/8) bytes of multi-hot bits,
// LSB-first within each byte.

inline void save_labels(const std::string& path, const LabelSet& ls) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("WLBL", 4);
    const unsigned char version = 1;
    os.write(reinterpret_cast<const char*>(&version), 1);
    unsigned char buf[8];
    const uint64_t count = static_cast<uint64_t>(ls.count);
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<unsigned char>(count >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
    const uint16_t nc = static_cast<uint16_t>(ls.num_classes);
    buf[0] = static_cast<unsigned char>(nc & 0xff);
    buf[1] = static_cast<unsigned char>(nc >> 8);
    os.write(reinterpret_cast<const char*>(buf), 2);
    const int64_t row_bytes = (ls.num_classes + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(row_bytes));
    for (int64_t i = 0; i < ls.count; ++i) {
        std::fill(row.begin(), row.end(), 0);
        for (int64_t c = 0; c < ls.num_classes; ++c)
            if (ls.get(i, c)) row[c / 8] |= static_cast<unsigned char>(1u << (c % 8));
        os.write(reinterpret_cast<const char*>(row.data()), row_bytes);
    }
    if (!os) throw IoError("write failed: " + path);
}

inline LabelSet load_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "WLBL", 4) != 0)
        throw FormatError("not a label file (expected magic WLBL): " + path);
    unsigned char version;
    is.read(reinterpret_cast<char*>(&version), 1);
    if (is.gcount() != 1 || version != 1)
        throw FormatError("unsupported label format version: " + path);
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (is.gcount() != 8) throw FormatError("label file truncated: " + path);
    uint64_t count = 0;
    for (int i = 0; i < 8; ++i) count |= uint64_t(buf[i]) << (8 * i);
    is.read(reinterpret_cast<char*>(buf), 2);
    if (is.gcount() != 2) throw FormatError("label file truncated: " + path);
    const uint16_t nc = static_cast<uint16_t>(buf[0] | (buf[1] << 8));
    LabelSet ls;
    ls.count = static_cast<int64_t>(count);
    ls.num_classes = nc;
    ls.multihot.assign(static_cast<size_t>(ls.count * ls.num_classes), 0);
    const int64_t row_bytes = (ls.num_classes + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(row_bytes));
    for (int64_t i = 0; i < ls.count; ++i) {
        is.read(reinterpret_cast<char*>(row.data()), row_bytes);
        if (is.gcount() != row_bytes)
            throw FormatError("label file truncated: " + path);
        for (int64_t c = 0; c < ls.num_classes; ++c)
            ls.multihot[i * ls.num_classes + c] =
                (row[c / 8] >> (c % 8)) & 1u;
    }
    char extra;
    if (is.read(&extra, 1); is.gcount() != 0)
        throw FormatError("trailing bytes after label payload: " + path);
    return ls;
}

// Dataset pixels as one [count, s, s, c] tensor for the dataset files.
template <typename S = double>
Tensor<S> pixels_tensor(const std::vector<SynthImage>& images) {
    if (images.empty()) throw ConfigError("pixels_tensor: empty dataset");
    const int64_t s = images[0].size, c = images[0].channels;
    std::vector<S> out;
    out.reserve(images.size() * static_cast<size_t>(s * s * c));
    for (const SynthImage& img : images) {
        if (img.size != s || img.channels != c)
            throw DimensionError("pixels_tensor: inconsistent image shapes");
        for (double v : img.pixels) out.push_back(static_cast<S>(v));
    }
    return Tensor<S>::from({static_cast<int64_t>(images.size()), s, s, c},
                           std::move(out));
}

inline std::vector<SynthImage> images_from_tensor(const Tensor<double>& t,
                                                  const LabelSet& ls) {
    if (t.rank() != 4)
        throw DimensionError("images_from_tensor: expected [count, s, s, c], got " +
                             shape_str(t.shape()));
    if (t.dim(0) != ls.count)
        throw DimensionError("images_from_tensor: " + std::to_string(t.dim(0)) +
                             " images but " + std::to_string(ls.count) +
                             " label rows");
    const int64_t s = t.dim(1), c = t.dim(3);
    if (t.dim(2) != s)
        throw DimensionError("images_from_tensor: non-square images: " +
                             shape_str(t.shape()));
    std::vector<SynthImage> images(static_cast<size_t>(t.dim(0)));
    const int64_t stride = s * s * c;
    for (int64_t i = 0; i < t.dim(0); ++i) {
        SynthImage& img = images[static_cast<size_t>(i)];
        img.size = s;
        img.channels = c;
        img.pixels.assign(t.values().begin() + i * stride,
                          t.values().begin() + (i + 1) * stride);
        img.labels.assign(ls.multihot.begin() + i * ls.num_classes,
                          ls.multihot.begin() + (i + 1) * ls.num_classes);
    }
    return images;
}

}  // namespace wch

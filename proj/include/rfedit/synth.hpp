#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfedit/rng.hpp"
#include "rfedit/tensor.hpp"

namespace rfedit {

enum class ShapeColor { kRed, kGreen, kBlue };
enum class ShapeKind { kCircle, kSquare };

inline const char* to_string(ShapeColor c) {
    switch (c) {
        case ShapeColor::kRed: return "red";
        case ShapeColor::kGreen: return "green";
        case ShapeColor::kBlue: return "blue";
    }
    throw std::invalid_argument("bad color");
}

inline const char* to_string(ShapeKind k) {
    return k == ShapeKind::kCircle ? "circle" : "square";
}

inline ShapeColor color_from_string(const std::string& s) {
    if (s == "red") return ShapeColor::kRed;
    if (s == "green") return ShapeColor::kGreen;
    if (s == "blue") return ShapeColor::kBlue;
    throw std::invalid_argument("unknown color: " + s);
}

inline ShapeKind kind_from_string(const std::string& s) {
    if (s == "circle") return ShapeKind::kCircle;
    if (s == "square") return ShapeKind::kSquare;
    throw std::invalid_argument("unknown shape: " + s);
}

// Placement jitter, inclusive integer ranges scaled to the 16px canvas.
struct JitterRanges {
    int center_min = 6, center_max = 9;
    int radius_min = 3, radius_max = 5;
};

struct SynthSample {
    uint64_t seed = 0;
    ShapeColor color = ShapeColor::kRed;
    ShapeKind kind = ShapeKind::kCircle;
    Tensor image;               // [S,S,3] in [0,1]
    std::vector<uint8_t> mask;  // per pixel, 1 inside the shape
    std::string caption;        // "a <color> <shape>"
};

// One flat-colored shape over a mid-gray background. The rng draws, in
// order: center x, center y, radius. Same seed, same image.
inline SynthSample generate_sample(uint64_t seed, ShapeColor color, ShapeKind kind,
                                   const JitterRanges& jitter = {}, int image_size = 16) {
    Rng rng(seed);
    const int cx = static_cast<int>(rng.uniform_int(jitter.center_min, jitter.center_max));
    const int cy = static_cast<int>(rng.uniform_int(jitter.center_min, jitter.center_max));
    const int r = static_cast<int>(rng.uniform_int(jitter.radius_min, jitter.radius_max));

    float rgb[3] = {0.0f, 0.0f, 0.0f};
    rgb[static_cast<int>(color)] = 1.0f;
    constexpr float kBackground = 0.5f;

    SynthSample s;
    s.seed = seed;
    s.color = color;
    s.kind = kind;
    s.image = Tensor::zeros({image_size, image_size, 3});
    s.mask.assign(static_cast<size_t>(image_size) * image_size, 0);
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            const int dx = x - cx, dy = y - cy;
            const bool inside = (kind == ShapeKind::kCircle)
                                    ? (dx * dx + dy * dy <= r * r)
                                    : (std::max(std::abs(dx), std::abs(dy)) <= r);
            const size_t p = (static_cast<size_t>(y) * image_size + x);
            s.mask[p] = inside ? 1 : 0;
            for (int c = 0; c < 3; ++c)
                s.image.at(p * 3 + c) = inside ? rgb[c] : kBackground;
        }
    s.caption = std::string("a ") + to_string(color) + " " + to_string(kind);
    return s;
}

// Deterministic corpus: sample i cycles through the six color/shape combos
// and draws its jitter from a seed derived from (master_seed, i). Class
// counts stay balanced to within one.
inline std::vector<SynthSample> generate_corpus(uint64_t master_seed, int size,
                                                const JitterRanges& jitter = {},
                                                int image_size = 16) {
    if (size < 0) throw std::invalid_argument("corpus size must be nonnegative");
    static constexpr ShapeColor kColors[3] = {ShapeColor::kRed, ShapeColor::kGreen,
                                              ShapeColor::kBlue};
    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(size));
    for (int i = 0; i < size; ++i) {
        const int combo = i % 6;
        const ShapeColor color = kColors[combo % 3];
        const ShapeKind kind = (combo / 3 == 0) ? ShapeKind::kCircle : ShapeKind::kSquare;
        out.push_back(generate_sample(derive_seed(master_seed, static_cast<uint64_t>(i)), color,
                                      kind, jitter, image_size));
    }
    return out;
}

// Manifest line format: "<index> <seed> <color> <shape>".
inline void write_manifest(const std::string& path, const std::vector<SynthSample>& corpus) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest for writing: " + path);
    for (size_t i = 0; i < corpus.size(); ++i)
        f << i << " " << corpus[i].seed << " " << to_string(corpus[i].color) << " "
          << to_string(corpus[i].kind) << "\n";
    if (!f) throw std::runtime_error("manifest write failed: " + path);
}

struct ManifestEntry {
    uint64_t index = 0;
    uint64_t seed = 0;
    ShapeColor color = ShapeColor::kRed;
    ShapeKind kind = ShapeKind::kCircle;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        ManifestEntry e;
        std::string color, kind;
        if (!(is >> e.index >> e.seed >> color >> kind))
            throw std::runtime_error("malformed manifest line: " + line);
        e.color = color_from_string(color);
        e.kind = kind_from_string(kind);
        out.push_back(e);
    }
    return out;
}

// Rough object mask for a generated image: pixels whose color strays from
// the mid-gray background by more than `thresh` in any channel.
inline std::vector<uint8_t> estimate_object_mask(const Tensor& image, float background = 0.5f,
                                                 float thresh = 0.15f) {
    if (image.ndim() != 3 || image.dim(2) < 1) throw std::invalid_argument("expected [H,W,C] image");
    const int hgt = image.dim(0), wid = image.dim(1), chn = image.dim(2);
    std::vector<uint8_t> mask(static_cast<size_t>(hgt) * wid, 0);
    for (int y = 0; y < hgt; ++y)
        for (int x = 0; x < wid; ++x) {
            const size_t p = static_cast<size_t>(y) * wid + x;
            for (int c = 0; c < chn; ++c)
                if (std::fabs(image.at(p * chn + c) - background) > thresh) {
                    mask[p] = 1;
                    break;
                }
        }
    return mask;
}

// Mean of one channel over the masked pixels; 0 when the mask is empty.
inline double mean_channel_in_mask(const Tensor& image, const std::vector<uint8_t>& mask,
                                   int channel) {
    const int hgt = image.dim(0), wid = image.dim(1), chn = image.dim(2);
    if (channel < 0 || channel >= chn) throw std::invalid_argument("channel out of range");
    if (static_cast<size_t>(hgt) * wid != mask.size())
        throw std::invalid_argument("mask size mismatch");
    double sum = 0.0;
    size_t count = 0;
    for (size_t p = 0; p < mask.size(); ++p)
        if (mask[p]) {
            sum += image.at(p * chn + channel);
            ++count;
        }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// Mean squared difference between two images over pixels where mask == 0.
inline double background_mse(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& mask) {
    if (a.shape != b.shape) throw std::invalid_argument("background_mse: shape mismatch");
    const int hgt = a.dim(0), wid = a.dim(1), chn = a.dim(2);
    if (static_cast<size_t>(hgt) * wid != mask.size())
        throw std::invalid_argument("mask size mismatch");
    double sum = 0.0;
    size_t count = 0;
    for (size_t p = 0; p < mask.size(); ++p)
        if (!mask[p])
            for (int c = 0; c < chn; ++c) {
                const double d = static_cast<double>(a.at(p * chn + c)) - b.at(p * chn + c);
                sum += d * d;
                ++count;
            }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace rfedit

#include "quiltclean/augment.hpp"

#include "quiltclean/core/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace quiltclean::augment {

namespace {

const std::array<Profile, 3>& profiles() {
    static const std::array<Profile, 3> all = {
        Profile{"standard-v1", 0.7, 1.0, 3.0 / 4.0, 4.0 / 3.0, true, true, 15.0, 0.1, 0.1, 0.1},
        Profile{"light-v1", 0.9, 1.0, 1.0, 1.0, true, true, 0.0, 0.05, 0.05, 0.0},
        Profile{"none"},
    };
    return all;
}

constexpr std::array<float, 3> kMean = {0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kStd = {0.229f, 0.224f, 0.225f};

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

const Profile& profile(const std::string& id) {
    for (const auto& p : profiles())
        if (p.id == id) return p;
    throw InvalidArgument("unknown augmentation profile: " + id);
}

std::vector<std::string> profile_ids() {
    std::vector<std::string> ids;
    for (const auto& p : profiles()) ids.push_back(p.id);
    return ids;
}

Image prepare(const Image& src, int size) {
    if (src.width == size && src.height == size) return src;
    return resize(src, size, size);
}

Image augment(const Image& src, const Profile& p, int size, CounterRng& rng) {
    const Image base = prepare(src, size);
    if (p.id == "none") return base;
    const double s = size;

    // Random resized crop (area fraction and log-uniform aspect ratio).
    const double area = rng.uniform(p.scale_min, p.scale_max) * s * s;
    const double log_ratio = rng.uniform(std::log(p.ratio_min), std::log(p.ratio_max));
    const double ratio = std::exp(log_ratio);
    const double cw = std::min(s, std::sqrt(area * ratio));
    const double ch = std::min(s, std::sqrt(area / ratio));
    const double cx = rng.uniform(0.0, s - cw) + cw / 2.0;
    const double cy = rng.uniform(0.0, s - ch) + ch / 2.0;

    const double fx = (p.hflip && rng.bernoulli(0.5)) ? -1.0 : 1.0;
    const double fy = (p.vflip && rng.bernoulli(0.5)) ? -1.0 : 1.0;
    const double theta = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg) * std::numbers::pi / 180.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double sx = cw / s, sy = ch / s;

    const double b = 1.0 + rng.uniform(-p.brightness, p.brightness);
    const double c = 1.0 + rng.uniform(-p.contrast, p.contrast);
    const double sat = 1.0 + rng.uniform(-p.saturation, p.saturation);

    double mean_luma = 0.0;
    for (std::size_t i = 0; i < base.pixels.size(); i += 3)
        mean_luma += 0.299 * base.pixels[i] + 0.587 * base.pixels[i + 1] + 0.114 * base.pixels[i + 2];
    mean_luma /= static_cast<double>(base.pixels.size() / 3);

    Image out(size, size);
    const int w = base.width, h = base.height;
    auto sample = [&](int x, int y, int k) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return static_cast<double>(base.pixels[base.index(x, y) + static_cast<std::size_t>(k)]);
    };
    for (int v = 0; v < size; ++v)
        for (int u = 0; u < size; ++u) {
            const double px = (u + 0.5 - s / 2.0) * fx;
            const double py = (v + 0.5 - s / 2.0) * fy;
            const double rx = (cos_t * px - sin_t * py) * sx + cx - 0.5;
            const double ry = (sin_t * px + cos_t * py) * sy + cy - 0.5;
            const int x0 = static_cast<int>(std::floor(rx)), y0 = static_cast<int>(std::floor(ry));
            const double ax = rx - x0, ay = ry - y0;
            double rgb[3];
            for (int k = 0; k < 3; ++k) {
                const double top = sample(x0, y0, k) * (1 - ax) + sample(x0 + 1, y0, k) * ax;
                const double bot = sample(x0, y0 + 1, k) * (1 - ax) + sample(x0 + 1, y0 + 1, k) * ax;
                rgb[k] = (top * (1 - ay) + bot * ay) * b;
            }
            const double luma = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for (double& ch_v : rgb) {
                ch_v = luma + (ch_v - luma) * sat;
                ch_v = mean_luma * b + (ch_v - mean_luma * b) * c;
            }
            out.set(u, v, {clamp_u8(rgb[0]), clamp_u8(rgb[1]), clamp_u8(rgb[2])});
        }
    return out;
}

void to_chw(const Image& img, float* dst) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            dst[k * plane + i] = (img.pixels[i * 3 + k] / 255.0f - kMean[k]) / kStd[k];
}

}  // namespace quiltclean::augment

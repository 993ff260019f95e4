#include "quiltclean/core/image.hpp"

#include "quiltclean/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace quiltclean {

Image::Image(int w, int h, Rgb fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3) {
    if (w < 0 || h < 0) throw InvalidArgument("negative image dimensions");
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill.r;
        pixels[i + 1] = fill.g;
        pixels[i + 2] = fill.b;
    }
}

void Mask::mark_rect(int x0, int y0, int w, int h) noexcept {
    for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x)
            bits[static_cast<std::size_t>(y) * width + x] = 1;
}

void Mask::mark_all() noexcept { std::fill(bits.begin(), bits.end(), 1); }

std::size_t Mask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
}

void fill_rect(Image& img, Rect r, Rgb c, Mask* touched) {
    const int x0 = std::max(0, r.x), y0 = std::max(0, r.y);
    const int x1 = std::min(img.width, r.x + r.w), y1 = std::min(img.height, r.y + r.h);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.set(x, y, c);
    if (touched) touched->mark_rect(r.x, r.y, r.w, r.h);
}

void draw_rect_outline(Image& img, Rect r, int thickness, Rgb c, Mask* touched) {
    fill_rect(img, {r.x, r.y, r.w, thickness}, c, touched);
    fill_rect(img, {r.x, r.y + r.h - thickness, r.w, thickness}, c, touched);
    fill_rect(img, {r.x, r.y, thickness, r.h}, c, touched);
    fill_rect(img, {r.x + r.w - thickness, r.y, thickness, r.h}, c, touched);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, double thickness, Rgb c,
               Mask* touched) {
    // Capsule rasterisation: every pixel whose centre lies within thickness/2
    // of the segment.
    const double half = std::max(0.5, thickness / 2.0);
    const int bx0 = static_cast<int>(std::floor(std::min(x0, x1) - half));
    const int bx1 = static_cast<int>(std::ceil(std::max(x0, x1) + half));
    const int by0 = static_cast<int>(std::floor(std::min(y0, y1) - half));
    const int by1 = static_cast<int>(std::ceil(std::max(y0, y1) + half));
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = std::max(0, by0); y <= std::min(img.height - 1, by1); ++y) {
        for (int x = std::max(0, bx0); x <= std::min(img.width - 1, bx1); ++x) {
            double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double px = x0 + t * dx - x, py = y0 + t * dy - y;
            if (px * px + py * py <= half * half) {
                img.set(x, y, c);
                if (touched) touched->mark(x, y);
            }
        }
    }
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, Rgb c, Mask* touched) {
    if (rx <= 0 || ry <= 0) return;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double nx = (x - cx) / rx, ny = (y - cy) / ry;
            if (nx * nx + ny * ny <= 1.0) {
                img.set(x, y, c);
                if (touched) touched->mark(x, y);
            }
        }
    }
}

Image crop(const Image& img, Rect r) {
    if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > img.width || r.y + r.h > img.height)
        throw InvalidArgument("crop rectangle outside image");
    Image out(r.w, r.h);
    for (int y = 0; y < r.h; ++y) {
        const auto* src = &img.pixels[img.index(r.x, r.y + y)];
        std::copy(src, src + static_cast<std::size_t>(r.w) * 3, &out.pixels[out.index(0, y)]);
    }
    return out;
}

void paste(Image& dst, const Image& src, int x, int y, Mask* touched) {
    for (int sy = 0; sy < src.height; ++sy)
        for (int sx = 0; sx < src.width; ++sx) {
            if (!dst.contains(x + sx, y + sy)) continue;
            dst.set(x + sx, y + sy, src.get(sx, sy));
            if (touched) touched->mark(x + sx, y + sy);
        }
}

namespace {

struct Tap {
    int index;
    float weight;
};

/// Per-output-sample source taps for one axis.
std::vector<std::vector<Tap>> resample_taps(int src, int dst) {
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        auto& t = taps[static_cast<std::size_t>(i)];
        if (scale > 1.0) {
            const double lo = i * scale, hi = (i + 1) * scale;
            for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)); ++s) {
                const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
                if (overlap > 1e-12) t.push_back({std::clamp(s, 0, src - 1), static_cast<float>(overlap / scale)});
            }
        } else {
            const double pos = (i + 0.5) * scale - 0.5;
            const int s0 = static_cast<int>(std::floor(pos));
            const double f = pos - s0;
            t.push_back({std::clamp(s0, 0, src - 1), static_cast<float>(1.0 - f)});
            if (f > 0) t.push_back({std::clamp(s0 + 1, 0, src - 1), static_cast<float>(f)});
        }
    }
    return taps;
}

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Image resize(const Image& img, int width, int height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("resize to empty image");
    if (img.empty()) throw InvalidArgument("resize of empty image");
    if (width == img.width && height == img.height) return img;
    const auto xt = resample_taps(img.width, width);
    const auto yt = resample_taps(img.height, height);

    std::vector<float> horiz(static_cast<std::size_t>(width) * img.height * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0;
                for (const auto& tap : xt[static_cast<std::size_t>(x)]) acc += tap.weight * img.pixels[img.index(tap.index, y) + c];
                horiz[(static_cast<std::size_t>(y) * width + x) * 3 + c] = acc;
            }

    Image out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0;
                for (const auto& tap : yt[static_cast<std::size_t>(y)])
                    acc += tap.weight * horiz[(static_cast<std::size_t>(tap.index) * width + x) * 3 + c];
                out.pixels[out.index(x, y) + c] = to_byte(acc);
            }
    return out;
}

Image box_blur(const Image& img, int radius) {
    if (radius <= 0) return img;
    auto pass = [radius](const Image& in, bool horizontal) {
        Image out(in.width, in.height);
        const int n = 2 * radius + 1;
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    int acc = 0;
                    for (int k = -radius; k <= radius; ++k) {
                        const int sx = horizontal ? std::clamp(x + k, 0, in.width - 1) : x;
                        const int sy = horizontal ? y : std::clamp(y + k, 0, in.height - 1);
                        acc += in.pixels[in.index(sx, sy) + c];
                    }
                    out.pixels[out.index(x, y) + c] = static_cast<std::uint8_t>((acc + n / 2) / n);
                }
        return out;
    };
    return pass(pass(img, true), false);
}

Image flip_horizontal(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.set(img.width - 1 - x, y, img.get(x, y));
    return out;
}

Image rotate90(const Image& img, int quarter_turns) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0) return img;
    const bool swap = quarter_turns % 2 == 1;
    Image out(swap ? img.height : img.width, swap ? img.width : img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int nx = x, ny = y;
            switch (quarter_turns) {
                case 1: nx = img.height - 1 - y; ny = x; break;
                case 2: nx = img.width - 1 - x; ny = img.height - 1 - y; break;
                case 3: nx = y; ny = img.width - 1 - x; break;
                default: break;
            }
            out.set(nx, ny, img.get(x, y));
        }
    return out;
}

double mean_absolute_difference(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw DimensionMismatch("image sizes differ");
    if (a.pixels.empty()) return 0.0;
    double acc = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) acc += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
    return acc / static_cast<double>(a.pixels.size());
}

}  // namespace quiltclean

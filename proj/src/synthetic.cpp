#include "quiltclean/synthetic.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/hashing.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/font.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace quiltclean::synthetic {

namespace fs = std::filesystem;

namespace {

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Rgb jitter(Rgb c, CounterRng& rng, int amount) {
    auto j = [&](std::uint8_t v) { return clamp_byte(v + rng.range(-amount, amount)); };
    return {j(c.r), j(c.g), j(c.b)};
}

Rgb pick(CounterRng& rng, std::initializer_list<Rgb> options) {
    const auto i = rng.below(options.size());
    return *(options.begin() + static_cast<std::ptrdiff_t>(i));
}

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

Rect corner_rect(const Image& img, int w, int h, Corner corner, int margin) {
    const int x = (corner == Corner::TopLeft || corner == Corner::BottomLeft) ? margin : img.width - w - margin;
    const int y = (corner == Corner::TopLeft || corner == Corner::TopRight) ? margin : img.height - h - margin;
    return {x, y, w, h};
}

// --- renderers ------------------------------------------------------------

void render_narrator(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int w = static_cast<int>(s * rng.uniform(0.30, 0.42));
    const int h = std::min(img.height, static_cast<int>(w * rng.uniform(0.9, 1.2)));
    const auto r = corner_rect(img, w, h, static_cast<Corner>(rng.below(4)), rng.range(0, s / 32));

    // The webcam inset is drawn on its own canvas so nothing leaks past it.
    Image cam(w, h);
    const Rgb wall = jitter(pick(rng, {{180, 190, 200}, {120, 140, 110}, {200, 180, 150}, {90, 100, 130}, {60, 60, 70}}),
                            rng, 20);
    for (int y = 0; y < h; ++y) {
        const double t = static_cast<double>(y) / std::max(1, h - 1);
        const double f = 1.0 - 0.3 * t;
        fill_rect(cam, {0, y, w, 1}, {clamp_byte(wall.r * f), clamp_byte(wall.g * f), clamp_byte(wall.b * f)});
    }
    const Rgb shirt = pick(rng, {{30, 40, 70}, {20, 20, 20}, {110, 30, 30}, {200, 200, 205}, {40, 80, 50}});
    const Rgb skin = jitter(pick(rng, {{224, 172, 140}, {198, 134, 96}, {141, 85, 36}, {241, 194, 160}}), rng, 10);
    const Rgb hair = pick(rng, {{30, 20, 15}, {80, 50, 30}, {150, 120, 80}, {60, 60, 60}});
    const double cx = w * rng.uniform(0.4, 0.6);
    fill_ellipse(cam, cx, h * 1.05, w * 0.45, h * 0.38, shirt);
    fill_ellipse(cam, cx, h * 0.36, w * 0.22, h * 0.26, hair);
    fill_ellipse(cam, cx, h * 0.42, w * 0.18, h * 0.24, skin);
    fill_ellipse(cam, cx - w * 0.07, h * 0.38, w * 0.025, h * 0.02, {40, 30, 30});
    fill_ellipse(cam, cx + w * 0.07, h * 0.38, w * 0.025, h * 0.02, {40, 30, 30});
    for (std::size_t i = 0; i < cam.pixels.size(); i += 3) {
        const int n = rng.range(-8, 8);
        for (std::size_t c = 0; c < 3; ++c) cam.pixels[i + c] = clamp_byte(cam.pixels[i + c] + n);
    }
    draw_rect_outline(cam, {0, 0, w, h}, 1, {20, 20, 20});
    paste(img, cam, r.x, r.y, &region);
}

void render_desktop_chrome(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int bar = std::max(8, static_cast<int>(s * rng.uniform(0.13, 0.18)));
    const int border = std::max(2, s / 32);
    const Rgb frame = pick(rng, {{45, 55, 80}, {60, 60, 64}, {210, 210, 215}, {30, 90, 160}, {235, 235, 235}});
    const Rgb bar_color = jitter(frame, rng, 10);
    for (int y = 0; y < bar; ++y) {
        const double t = static_cast<double>(y) / bar;
        fill_rect(img, {0, y, img.width, 1},
                  {clamp_byte(bar_color.r * (1.1 - 0.2 * t)), clamp_byte(bar_color.g * (1.1 - 0.2 * t)),
                   clamp_byte(bar_color.b * (1.1 - 0.2 * t))},
                  &region);
    }
    fill_rect(img, {0, 0, border, img.height}, frame, &region);
    fill_rect(img, {img.width - border, 0, border, img.height}, frame, &region);
    fill_rect(img, {0, img.height - border, img.width, border}, frame, &region);
    // Window buttons and a short title.
    const double rad = bar * 0.25;
    const bool mac = rng.bernoulli(0.5);
    const Rgb dots[3] = {{237, 106, 94}, {245, 191, 79}, {98, 197, 84}};
    for (int k = 0; k < 3; ++k) {
        const double cx = mac ? border + rad * 2 + k * rad * 3 : img.width - border - rad * 2 - k * rad * 3;
        const Rgb c = mac ? dots[k] : Rgb{230, 230, 230};
        fill_ellipse(img, cx, bar / 2.0, rad, rad, c, &region);
    }
    const Rgb ink = frame.r + frame.g + frame.b > 450 ? Rgb{20, 20, 20} : Rgb{240, 240, 240};
    const char* titles[] = {"VIEWER", "SLIDE 01", "QUPATH", "IMAGESCOPE", "CASE 7"};
    const int scale = bar >= 16 ? 2 : 1;
    draw_text(img, img.width / 3, std::max(0, (bar - kGlyphHeight * scale) / 2), titles[rng.below(5)], scale, ink, &region);
}

std::string random_text(CounterRng& rng, int min_len, int max_len) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    const int len = rng.range(min_len, max_len);
    std::string s;
    for (int i = 0; i < len; ++i) s.push_back(kAlphabet[rng.below(sizeof(kAlphabet) - 1)]);
    return s;
}

void render_text_logo(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int scale = s >= 128 ? rng.range(2, 3) : rng.range(1, 2);
    std::string text = random_text(rng, 3, 7);
    while (text_width(text, scale) > img.width - 4) text.pop_back();
    const int tw = text_width(text, scale), th = kGlyphHeight * scale;
    const int x = rng.range(2, std::max(2, img.width - tw - 2));
    const int y = rng.range(2, std::max(2, img.height - th - 2));
    const Rgb ink = pick(rng, {{255, 255, 255}, {0, 0, 0}, {255, 230, 0}, {20, 40, 160}, {230, 30, 30}});
    if (rng.bernoulli(0.35)) {
        // Logo plate behind the text.
        const Rgb plate = ink.r + ink.g + ink.b > 380 ? Rgb{20, 20, 30} : Rgb{245, 245, 245};
        fill_rect(img, {x - 2, y - 2, tw + 4, th + 4}, plate, &region);
    } else if (rng.bernoulli(0.5)) {
        // Second line, as in captions burned into video frames.
        std::string line2 = random_text(rng, 3, 6);
        while (text_width(line2, scale) > img.width - x - 2 && !line2.empty()) line2.pop_back();
        if (y + 2 * th + scale < img.height) draw_text(img, x, y + th + scale * 2, line2, scale, ink, &region);
    }
    draw_text(img, x, y, text, scale, ink, &region);
}

void render_arrow(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const double len = s * rng.uniform(0.3, 0.5);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tipx = rng.uniform(s * 0.25, img.width - s * 0.25), tipy = rng.uniform(s * 0.25, img.height - s * 0.25);
    const double tailx = tipx - len * std::cos(angle), taily = tipy - len * std::sin(angle);
    const double thick = std::max(1.5, s / 36.0);
    const Rgb c = pick(rng, {{0, 0, 0}, {255, 255, 0}, {0, 255, 0}, {255, 0, 0}, {0, 0, 255}, {255, 255, 255}});
    draw_line(img, tailx, taily, tipx, tipy, thick, c, &region);
    const double head = len * 0.3;
    for (double side : {-1.0, 1.0}) {
        const double a = angle + std::numbers::pi + side * 0.5;
        draw_line(img, tipx, tipy, tipx + head * std::cos(a), tipy + head * std::sin(a), thick, c, &region);
    }
    if (rng.bernoulli(0.3)) {
        // Occasional annotation ring next to the arrow tip.
        const double rr = s * 0.08;
        const double ccx = tipx + rr * std::cos(angle), ccy = tipy + rr * std::sin(angle);
        for (int k = 0; k < 48; ++k) {
            const double a0 = 2 * std::numbers::pi * k / 48, a1 = 2 * std::numbers::pi * (k + 1) / 48;
            draw_line(img, ccx + rr * std::cos(a0), ccy + rr * std::sin(a0), ccx + rr * std::cos(a1),
                      ccy + rr * std::sin(a1), std::max(1.0, thick * 0.7), c, &region);
        }
    }
}

/// 8x8 block DCT requantisation in YCbCr, approximating a low-quality JPEG
/// re-encode. `quality_scale` multiplies the standard luminance table.
Image jpeg_requantize(const Image& img, double quality_scale) {
    static constexpr int kQ[64] = {16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55,
                                   14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51, 87, 80, 62,
                                   18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92,
                                   49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    double cosines[8][8];
    for (int x = 0; x < 8; ++x)
        for (int u = 0; u < 8; ++u) cosines[x][u] = std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    auto alpha = [](int u) { return u == 0 ? std::sqrt(0.125) : 0.5; };

    const int w = img.width, h = img.height;
    std::vector<double> planes[3];
    for (auto& p : planes) p.resize(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto c = img.get(x, y);
            const auto i = static_cast<std::size_t>(y) * w + x;
            planes[0][i] = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b - 128.0;
            planes[1][i] = -0.168736 * c.r - 0.331264 * c.g + 0.5 * c.b;
            planes[2][i] = 0.5 * c.r - 0.418688 * c.g - 0.081312 * c.b;
        }
    for (int p = 0; p < 3; ++p) {
        const double chroma = p == 0 ? 1.0 : 2.0;
        for (int by = 0; by < h; by += 8)
            for (int bx = 0; bx < w; bx += 8) {
                double block[8][8], coef[8][8];
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const int sx = std::min(bx + x, w - 1), sy = std::min(by + y, h - 1);
                        block[y][x] = planes[p][static_cast<std::size_t>(sy) * w + sx];
                    }
                for (int v = 0; v < 8; ++v)
                    for (int u = 0; u < 8; ++u) {
                        double acc = 0;
                        for (int y = 0; y < 8; ++y)
                            for (int x = 0; x < 8; ++x) acc += block[y][x] * cosines[x][u] * cosines[y][v];
                        const double q = kQ[v * 8 + u] * quality_scale * chroma;
                        coef[v][u] = std::round(alpha(u) * alpha(v) * acc / q) * q;
                    }
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        if (bx + x >= w || by + y >= h) continue;
                        double acc = 0;
                        for (int v = 0; v < 8; ++v)
                            for (int u = 0; u < 8; ++u) acc += alpha(u) * alpha(v) * coef[v][u] * cosines[x][u] * cosines[y][v];
                        planes[p][static_cast<std::size_t>(by + y) * w + bx + x] = acc;
                    }
            }
    }
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            const double Y = planes[0][i] + 128.0, cb = planes[1][i], cr = planes[2][i];
            out.set(x, y, {clamp_byte(Y + 1.402 * cr), clamp_byte(Y - 0.344136 * cb - 0.714136 * cr),
                           clamp_byte(Y + 1.772 * cb)});
        }
    return out;
}

void render_low_quality(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int radius = std::max(1, static_cast<int>(std::lround(s * rng.uniform(0.025, 0.045))));
    Image degraded = box_blur(img, radius);
    if (rng.bernoulli(0.5)) {
        // Resolution loss: down- then up-sample.
        const double f = rng.uniform(0.3, 0.5);
        degraded = resize(resize(degraded, std::max(8, static_cast<int>(img.width * f)),
                                 std::max(8, static_cast<int>(img.height * f))),
                          img.width, img.height);
    }
    degraded = jpeg_requantize(degraded, rng.uniform(3.0, 6.0));
    // Washed-out contrast, as in screen-captured video frames.
    const double gain = rng.uniform(0.75, 0.9);
    for (auto& v : degraded.pixels) v = clamp_byte(128.0 + (v - 128.0) * gain + 12.0);
    img = std::move(degraded);
    region.mark_all();
}

/// Low-magnification slide: glass background, a label strip and tissue blobs.
Image make_slide_thumbnail(int w, int h, CounterRng& rng) {
    Image t(w, h, jitter({240, 240, 238}, rng, 6));
    const int label_w = std::max(2, w / 4);
    fill_rect(t, {0, 0, label_w, h}, pick(rng, {{250, 250, 250}, {220, 230, 250}, {250, 240, 200}}));
    fill_rect(t, {label_w / 4, h / 4, label_w / 2, h / 2}, {40, 40, 40});
    const int blobs = rng.range(1, 3);
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(label_w + w * 0.15, w * 0.85), cy = rng.uniform(h * 0.25, h * 0.75);
        const Rgb tissue = jitter({215, 130, 175}, rng, 20);
        fill_ellipse(t, cx, cy, w * rng.uniform(0.1, 0.22), h * rng.uniform(0.15, 0.3), tissue);
        fill_ellipse(t, cx + rng.uniform(-2, 2), cy, w * 0.05, h * 0.08, jitter({150, 80, 150}, rng, 15));
    }
    return t;
}

void render_slide_overview(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int w = static_cast<int>(s * rng.uniform(0.32, 0.42));
    const int h = static_cast<int>(w * rng.uniform(0.45, 0.65));
    const auto r = corner_rect(img, w, h, static_cast<Corner>(rng.below(4)), rng.range(0, s / 32));
    Image thumb = make_slide_thumbnail(w, h, rng);
    const Rgb vp = pick(rng, {{255, 0, 0}, {0, 200, 0}, {0, 0, 0}, {0, 120, 255}});
    const int vw = std::max(4, w / 6), vh = std::max(3, h / 5);
    draw_rect_outline(thumb, {rng.range(w / 4, w - vw - 1), rng.range(1, h - vh - 1), vw, vh}, 1, vp);
    draw_rect_outline(thumb, {0, 0, w, h}, 1, {60, 60, 60});
    paste(img, thumb, r.x, r.y, &region);
}

void draw_icon(Image& img, Rect b, int kind, Rgb ink, Mask* region) {
    const double cx = b.x + b.w / 2.0, cy = b.y + b.h / 2.0, r = std::min(b.w, b.h) * 0.3;
    switch (kind % 5) {
        case 0:  // play
            for (int i = 0; i <= static_cast<int>(2 * r); ++i)
                draw_line(img, cx - r * 0.8, cy - r + i, cx + r * 0.9, cy, 1.0, ink, region);
            break;
        case 1:  // pause
            fill_rect(img, {static_cast<int>(cx - r), static_cast<int>(cy - r), std::max(1, static_cast<int>(r * 0.6)),
                            static_cast<int>(2 * r)}, ink, region);
            fill_rect(img, {static_cast<int>(cx + r * 0.4), static_cast<int>(cy - r), std::max(1, static_cast<int>(r * 0.6)),
                            static_cast<int>(2 * r)}, ink, region);
            break;
        case 2:  // plus
            draw_line(img, cx - r, cy, cx + r, cy, std::max(1.0, r * 0.4), ink, region);
            draw_line(img, cx, cy - r, cx, cy + r, std::max(1.0, r * 0.4), ink, region);
            break;
        case 3:  // minus
            draw_line(img, cx - r, cy, cx + r, cy, std::max(1.0, r * 0.4), ink, region);
            break;
        default:  // square
            draw_rect_outline(img, {static_cast<int>(cx - r), static_cast<int>(cy - r), static_cast<int>(2 * r),
                                    static_cast<int>(2 * r)}, 1, ink, region);
    }
}

void render_control_elements(Image& img, Mask& region, CounterRng& rng) {
    const int s = std::min(img.width, img.height);
    const int thick = std::max(10, static_cast<int>(s * rng.uniform(0.14, 0.2)));
    const int side = static_cast<int>(rng.below(3));  // 0 bottom, 1 left, 2 right
    const bool horizontal = side == 0;
    const Rect strip = horizontal ? Rect{0, img.height - thick, img.width, thick}
                                  : Rect{side == 1 ? 0 : img.width - thick, 0, thick, img.height};
    const Rgb bg = pick(rng, {{200, 200, 200}, {225, 225, 228}, {180, 185, 190}});
    fill_rect(img, strip, bg, &region);
    const int n_buttons = rng.range(3, 6);
    const int extent = horizontal ? strip.w : strip.h;
    const int pitch = extent / n_buttons;
    const int bsize = std::min(thick - 4, pitch - 3);
    const Rgb face = pick(rng, {{245, 245, 245}, {120, 160, 220}, {90, 90, 95}});
    const Rgb ink = face.r + face.g + face.b > 450 ? Rgb{20, 20, 20} : Rgb{250, 250, 250};
    for (int k = 0; k < n_buttons; ++k) {
        const int along = k * pitch + (pitch - bsize) / 2;
        const Rect b = horizontal ? Rect{strip.x + along, strip.y + (thick - bsize) / 2, bsize, bsize}
                                  : Rect{strip.x + (thick - bsize) / 2, strip.y + along, bsize, bsize};
        fill_rect(img, b, face, &region);
        draw_rect_outline(img, b, 1, {60, 60, 60}, &region);
        draw_icon(img, b, k + static_cast<int>(rng.below(5)), ink, &region);
    }
}

}  // namespace

ImpurityResult apply_impurity(const Image& image, ImpurityCategory category, CounterRng& rng) {
    if (image.width < kMinDimension || image.height < kMinDimension)
        throw InvalidArgument("apply_impurity needs at least 64x64 pixels, got " + std::to_string(image.width) + "x" +
                              std::to_string(image.height));
    ImpurityResult out{image, ImpurityLabelSet::only(category), Mask(image.width, image.height)};
    switch (category) {
        case ImpurityCategory::Narrator: render_narrator(out.image, out.region, rng); break;
        case ImpurityCategory::DesktopChrome: render_desktop_chrome(out.image, out.region, rng); break;
        case ImpurityCategory::TextLogo: render_text_logo(out.image, out.region, rng); break;
        case ImpurityCategory::ArrowAnnotation: render_arrow(out.image, out.region, rng); break;
        case ImpurityCategory::LowQuality: render_low_quality(out.image, out.region, rng); break;
        case ImpurityCategory::SlideOverview: render_slide_overview(out.image, out.region, rng); break;
        case ImpurityCategory::ControlElements: render_control_elements(out.image, out.region, rng); break;
        case ImpurityCategory::MultiPanel:
            throw UnsupportedCategory("MULTI_PANEL is produced by compose_multipanel");
    }
    return out;
}

MultipanelResult compose_multipanel(std::span<const Image> tiles, std::span<const ImpurityLabelSet> tile_labels,
                                    CounterRng& rng, const MultipanelConfig& config) {
    if (tiles.size() < 2 || tiles.size() > 4) throw InvalidArgument("compose_multipanel takes 2 to 4 tiles");
    if (!tile_labels.empty() && tile_labels.size() != tiles.size())
        throw LengthMismatch("one label set per tile is required");
    for (const auto& t : tiles)
        if (t.width != tiles[0].width || t.height != tiles[0].height)
            throw MixedDimensions("all tiles must share dimensions");
    if (config.gutter < 0) throw InvalidArgument("gutter must be non-negative");

    MultipanelResult out;
    if (tiles.size() == 4) {
        out.rows = out.cols = 2;
    } else if (rng.bernoulli(0.5)) {
        out.cols = static_cast<int>(tiles.size());
    } else {
        out.rows = static_cast<int>(tiles.size());
    }
    const int tw = tiles[0].width, th = tiles[0].height, g = config.gutter;
    out.image = Image(out.cols * tw + (out.cols - 1) * g, out.rows * th + (out.rows - 1) * g, config.gutter_color);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int row = static_cast<int>(i) / out.cols, col = static_cast<int>(i) % out.cols;
        paste(out.image, tiles[i], col * (tw + g), row * (th + g));
        if (!tile_labels.empty()) out.labels |= tile_labels[i];
    }
    out.labels.set(ImpurityCategory::MultiPanel, true);
    return out;
}

Image make_tissue_tile(int width, int height, std::uint64_t seed) {
    CounterRng rng(derive_seed({seed, 0x7155}));
    // Low-frequency stain variation from a coarse value-noise lattice.
    const int cell = 16;
    const int gw = width / cell + 2, gh = height / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    auto noise = [&](double x, double y) {
        const int ix = static_cast<int>(x / cell), iy = static_cast<int>(y / cell);
        const double fx = x / cell - ix, fy = y / cell - iy;
        auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
        const double top = at(ix, iy) * (1 - fx) + at(ix + 1, iy) * fx;
        const double bot = at(ix, iy + 1) * (1 - fx) + at(ix + 1, iy + 1) * fx;
        return top * (1 - fy) + bot * fy;
    };
    const Rgb eosin = jitter({232, 168, 200}, rng, 14);
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double n = noise(x, y);
            img.set(x, y, {clamp_byte(eosin.r + 14 * n), clamp_byte(eosin.g + 22 * n), clamp_byte(eosin.b + 12 * n)});
        }
    const double area_scale = width * height / (96.0 * 96.0);
    const int fibres = static_cast<int>(rng.range(6, 14) * area_scale);
    for (int f = 0; f < fibres; ++f) {
        const double x0 = rng.uniform(0, width), y0 = rng.uniform(0, height), a = rng.uniform(0, std::numbers::pi);
        const double len = rng.uniform(10, 30);
        draw_line(img, x0, y0, x0 + len * std::cos(a), y0 + len * std::sin(a), rng.uniform(1.0, 2.0),
                  jitter({205, 120, 170}, rng, 15));
    }
    const int lumina = rng.range(0, 2);
    for (int l = 0; l < lumina; ++l)
        fill_ellipse(img, rng.uniform(0, width), rng.uniform(0, height), rng.uniform(5, 14), rng.uniform(4, 10),
                     jitter({246, 238, 244}, rng, 5));
    const int nuclei = static_cast<int>(rng.range(25, 60) * area_scale);
    for (int k = 0; k < nuclei; ++k) {
        const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
        const double rx = rng.uniform(1.8, 4.2), ry = rx * rng.uniform(0.6, 1.0);
        fill_ellipse(img, cx, cy, rx, ry, jitter({88, 52, 140}, rng, 18));
        fill_ellipse(img, cx, cy, rx * 0.45, ry * 0.45, jitter({60, 30, 110}, rng, 10));
    }
    for (auto& v : img.pixels) v = clamp_byte(v + rng.normal() * 5.0);
    return img;
}

std::vector<fs::path> generate_base_tiles(const fs::path& dir, std::size_t n, int size, std::uint64_t seed) {
    if (size < kMinDimension) throw InvalidArgument("base tiles must be at least 64 pixels");
    fs::create_directories(dir);
    std::vector<fs::path> paths;
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "tile-%05zu.png", i);
        paths.push_back(dir / name);
        write_png(paths.back(), make_tissue_tile(size, size, derive_seed({seed, i})));
    }
    return paths;
}

std::vector<Image> load_base_images(const fs::path& dir) {
    std::vector<fs::path> files;
    if (fs::is_directory(dir))
        for (const auto& de : fs::directory_iterator(dir))
            if (de.is_regular_file() && is_image_extension(de.path())) files.push_back(de.path());
    std::sort(files.begin(), files.end());
    std::vector<Image> out;
    for (const auto& f : files) {
        try {
            out.push_back(read_image(f));
        } catch (const UndecodableImage&) {
        }
    }
    if (out.empty()) throw EmptyBaseSet("no decodable base images in " + dir.string());
    return out;
}

namespace {

constexpr std::uint64_t kRenderStream = 0x52454E44;

const char* const kOrgans[] = {"breast", "colon", "lung", "prostate", "skin", "liver", "kidney", "stomach"};
const char* const kFindings[] = {"invasive carcinoma", "adenoma", "normal tissue", "inflammation",
                                 "necrosis", "metastatic deposits", "fibrosis", "dysplasia"};

Image base_view(std::span<const Image> bases, CounterRng& rng, int width, int height) {
    const auto& base = bases[rng.below(bases.size())];
    Image img = rotate90(base, static_cast<int>(rng.below(4)));
    if (rng.bernoulli(0.5)) img = flip_horizontal(img);
    return resize(img, width, height);
}

}  // namespace

Sample render_sample(std::span<const Image> bases, const CorpusConfig& config, std::size_t index) {
    if (bases.empty()) throw EmptyBaseSet("no base images");
    if (config.width < kMinDimension || config.height < kMinDimension)
        throw InvalidArgument("corpus images must be at least 64x64");
    CounterRng rng(derive_seed({config.seed, kRenderStream, index}));

    ImpurityFlags chosen{};
    for (auto c : kAllCategories) chosen[index_of(c)] = rng.bernoulli(config.rates[index_of(c)]);

    Sample s;
    if (chosen[index_of(ImpurityCategory::MultiPanel)]) {
        const int k = rng.range(2, 4);
        std::vector<Image> tiles;
        for (int t = 0; t < k; ++t) tiles.push_back(base_view(bases, rng, config.width, config.height));
        auto mp = compose_multipanel(tiles, {}, rng, config.multipanel);
        s.image = resize(mp.image, config.width, config.height);
        s.labels = mp.labels;
    } else {
        s.image = base_view(bases, rng, config.width, config.height);
    }
    // Whole-frame degradation first so overlays stay crisp on top of it.
    static constexpr ImpurityCategory kOrder[] = {
        ImpurityCategory::LowQuality,     ImpurityCategory::DesktopChrome,   ImpurityCategory::ControlElements,
        ImpurityCategory::SlideOverview,  ImpurityCategory::Narrator,        ImpurityCategory::TextLogo,
        ImpurityCategory::ArrowAnnotation,
    };
    for (auto c : kOrder) {
        if (!chosen[index_of(c)]) continue;
        auto r = apply_impurity(s.image, c, rng);
        s.image = std::move(r.image);
        s.labels |= r.delta;
    }
    s.caption = std::string("histopathology image of ") + kFindings[rng.below(8)] + " in the " + kOrgans[rng.below(8)];
    return s;
}

Corpus generate_corpus(std::span<const Image> bases, const CorpusConfig& config, const fs::path& out_dir,
                       std::size_t workers) {
    if (bases.empty()) throw EmptyBaseSet("no base images");
    for (double r : config.rates)
        if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("impurity rates must be in [0, 1]");
    fs::create_directories(out_dir / "images");
    Corpus corpus;
    corpus.manifest.resize(config.n);
    corpus.labels.resize(config.n);
    parallel_for(config.n, workers, [&](std::size_t i) {
        auto sample = render_sample(bases, config, i);
        char id[32];
        std::snprintf(id, sizeof(id), "syn-%06zu", i);
        const auto bytes = encode_png(sample.image);
        const std::string rel = std::string("images/") + id + ".png";
        write_file_bytes(out_dir / rel, bytes);
        auto& e = corpus.manifest[i];
        e.image_id = id;
        e.image_path = rel;
        e.captions = {sample.caption};
        e.source = manifest::Source::Synthetic;
        e.sha256 = sha256_hex(bytes);
        e.width_px = sample.image.width;
        e.height_px = sample.image.height;
        corpus.labels[i] = {id, sample.labels};
    });
    manifest::write_manifest(out_dir / "manifest.jsonl", corpus.manifest);
    write_labels(out_dir / "labels.jsonl", corpus.labels);
    return corpus;
}

}  // namespace quiltclean::synthetic

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace quiltclean {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit interleaved RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, Rgb fill = {});

    bool empty() const noexcept { return width == 0 || height == 0; }
    std::size_t index(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)) * 3;
    }
    bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width && y < height; }

    Rgb get(int x, int y) const noexcept {
        const auto i = index(x, y);
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
    void set(int x, int y, Rgb c) noexcept {
        const auto i = index(x, y);
        pixels[i] = c.r;
        pixels[i + 1] = c.g;
        pixels[i + 2] = c.b;
    }
    /// Clipped write; out-of-bounds coordinates are ignored.
    void plot(int x, int y, Rgb c) noexcept {
        if (contains(x, y)) set(x, y, c);
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel boolean mask with the same geometry as an Image.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

    bool test(int x, int y) const noexcept { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void mark(int x, int y) noexcept {
        if (x >= 0 && y >= 0 && x < width && y < height) bits[static_cast<std::size_t>(y) * width + x] = 1;
    }
    void mark_rect(int x0, int y0, int w, int h) noexcept;
    void mark_all() noexcept;
    std::size_t count() const noexcept;
};

struct Rect {
    int x = 0, y = 0, w = 0, h = 0;
};

// Drawing primitives. All clip to the image bounds and, when a mask is
// supplied, record every pixel they may have written.
void fill_rect(Image& img, Rect r, Rgb c, Mask* touched = nullptr);
void draw_rect_outline(Image& img, Rect r, int thickness, Rgb c, Mask* touched = nullptr);
void draw_line(Image& img, double x0, double y0, double x1, double y1, double thickness, Rgb c,
               Mask* touched = nullptr);
void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, Rgb c, Mask* touched = nullptr);

Image crop(const Image& img, Rect r);
void paste(Image& dst, const Image& src, int x, int y, Mask* touched = nullptr);

/// Separable resampling: area averaging along axes that shrink, linear
/// interpolation along axes that grow.
Image resize(const Image& img, int width, int height);

/// Box blur with the given radius, edge-clamped.
Image box_blur(const Image& img, int radius);

Image flip_horizontal(const Image& img);
Image rotate90(const Image& img, int quarter_turns);

double mean_absolute_difference(const Image& a, const Image& b);

// Codec layer. decode_image sniffs PNG, JPEG and binary PNM.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);
void write_png(const std::filesystem::path& path, const Image& img);
void write_ppm(const std::filesystem::path& path, const Image& img);

/// MIME type sniffed from file content; "application/octet-stream" if unknown.
std::string sniff_content_type(std::span<const std::uint8_t> bytes);

bool is_image_extension(const std::filesystem::path& path);

}  // namespace quiltclean

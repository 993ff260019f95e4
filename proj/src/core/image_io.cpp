#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"
#include "quiltclean/core/image.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace quiltclean {

namespace {

bool starts_with(std::span<const std::uint8_t> bytes, std::initializer_list<std::uint8_t> magic) {
    if (bytes.size() < magic.size()) return false;
    return std::equal(magic.begin(), magic.end(), bytes.begin());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw UndecodableImage(std::string("png: ") + png.message);
    png.format = PNG_FORMAT_RGB;
    if (png.width == 0 || png.height == 0 || png.width > 1u << 15 || png.height > 1u << 15) {
        png_image_free(&png);
        throw UndecodableImage("png: unsupported dimensions");
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw UndecodableImage("png: " + msg);
    }
    return img;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    // Nothing with a non-trivial destructor may live across the setjmp.
    Image* result = new Image();
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        delete result;
        throw UndecodableImage(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    *result = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = &result->pixels[result->index(0, static_cast<int>(cinfo.output_scanline))];
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    Image out = std::move(*result);
    delete result;
    return out;
}

Image decode_pnm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 2;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> long {
        skip_ws();
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            any = true;
            if (v > (1L << 20)) throw UndecodableImage("pnm: header value too large");
        }
        if (!any) throw UndecodableImage("pnm: malformed header");
        return v;
    };
    const bool gray = bytes[1] == '5';
    const long w = read_int(), h = read_int(), maxval = read_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw UndecodableImage("pnm: only 8-bit images are supported");
    ++pos;  // single whitespace after maxval
    const std::size_t channels = gray ? 1 : 3;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
    if (bytes.size() < pos + need) throw UndecodableImage("pnm: truncated pixel data");
    Image img(static_cast<int>(w), static_cast<int>(h));
    if (gray) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(w * h); ++i)
            img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = bytes[pos + i];
    } else {
        std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
    }
    return img;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
    if (starts_with(bytes, {0x89, 'P', 'N', 'G'})) return decode_png(bytes);
    if (starts_with(bytes, {0xFF, 0xD8, 0xFF})) return decode_jpeg(bytes);
    if (starts_with(bytes, {'P', '6'}) || starts_with(bytes, {'P', '5'})) return decode_pnm(bytes);
    throw UndecodableImage("unrecognised image format");
}

Image read_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_image(bytes);
    } catch (const UndecodableImage& e) {
        throw UndecodableImage(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.empty()) throw InvalidArgument("cannot encode empty image");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + png.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + png.message);
    out.resize(size);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
    write_file_bytes(path, bytes);
}

std::string sniff_content_type(std::span<const std::uint8_t> bytes) {
    if (starts_with(bytes, {0x89, 'P', 'N', 'G'})) return "image/png";
    if (starts_with(bytes, {0xFF, 0xD8, 0xFF})) return "image/jpeg";
    if (starts_with(bytes, {'P', '6'}) || starts_with(bytes, {'P', '5'})) return "image/x-portable-anymap";
    return "application/octet-stream";
}

bool is_image_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".pgm";
}

}  // namespace quiltclean

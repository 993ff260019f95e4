#pragma once

#include "quiltclean/core/image.hpp"

#include <string_view>

namespace quiltclean {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

/// Pixel width of `text` rendered with the built-in 5x7 font at `scale`
/// (one column of spacing between glyphs).
int text_width(std::string_view text, int scale) noexcept;

/// Draws upper-case ASCII letters, digits and a few symbols; lower-case is
/// folded to upper-case and unknown characters render as blanks.
void draw_text(Image& img, int x, int y, std::string_view text, int scale, Rgb color, Mask* touched = nullptr);

}  // namespace quiltclean

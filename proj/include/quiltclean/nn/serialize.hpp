#pragma once

#include "quiltclean/nn/backbones.hpp"

#include <filesystem>

namespace quiltclean::nn {

/// Binary weights file: "QCW1", u32 count, then per tensor a u32 name
/// length, the name, four u32 dims and little-endian float32 data.
void save_weights(Network& net, const std::filesystem::path& path);

/// Loads by name; every parameter and buffer must be present with a
/// matching shape. Throws IoError or InvalidArgument.
void load_weights(Network& net, const std::filesystem::path& path);

}  // namespace quiltclean::nn

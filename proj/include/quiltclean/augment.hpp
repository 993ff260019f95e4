#pragma once

#include "quiltclean/core/image.hpp"
#include "quiltclean/core/rng.hpp"

#include <string>
#include <vector>

namespace quiltclean::augment {

/// A named, versioned augmentation recipe.
struct Profile {
    std::string id;
    double scale_min = 1.0, scale_max = 1.0;  // fraction of the source area kept by the crop
    double ratio_min = 1.0, ratio_max = 1.0;  // crop aspect ratio range
    bool hflip = false, vflip = false;
    double max_rotation_deg = 0.0;
    double brightness = 0.0, contrast = 0.0, saturation = 0.0;  // jitter amplitudes
};

/// "standard-v1", "light-v1" or "none". Throws InvalidArgument otherwise.
const Profile& profile(const std::string& id);
std::vector<std::string> profile_ids();

/// Square evaluation view: area resize to size x size.
Image prepare(const Image& src, int size);

/// Random view of `src` at size x size. Crop, flips and rotation are folded
/// into one affine map sampled bilinearly with edge clamping.
Image augment(const Image& src, const Profile& p, int size, CounterRng& rng);

/// Writes the image as CHW float planes normalised by the usual ImageNet
/// channel statistics.
void to_chw(const Image& img, float* dst);

}  // namespace quiltclean::augment

#pragma once

#include "quiltclean/core/image.hpp"

#include <Eigen/Core>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace quiltclean::features {

/// Image -> fixed-length embedding used for Fréchet distances.
class Extractor {
public:
    virtual ~Extractor() = default;
    virtual const std::string& id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> extract(const Image& image) const = 0;
};

/// "color-texture-v1" (handcrafted colour, gradient and layout statistics)
/// or "random-conv-v1" (a fixed, seeded two-layer random convolutional net).
std::unique_ptr<Extractor> make_extractor(const std::string& id);
std::vector<std::string> extractor_ids();

/// Rows are images in input order.
Eigen::MatrixXd extract_all(const Extractor& extractor, std::span<const Image> images, std::size_t workers = 0);

}  // namespace quiltclean::features

#include "quiltclean/nn/tensor.hpp"

#include <algorithm>

namespace quiltclean::nn {

std::string Tensor::shape_string() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) +
           ")";
}

void Tensor::zero() noexcept { std::fill(data.begin(), data.end(), 0.0f); }

}  // namespace quiltclean::nn

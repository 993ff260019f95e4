#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace quiltclean::nn {

/// Dense float32 tensor in NCHW order. Feature vectors use h = w = 1.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }

    float* sample(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const float* sample(int i) const noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }

    float& at(int ni, int ci, int y, int x) noexcept {
        return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }
    float at(int ni, int ci, int y, int x) const noexcept {
        return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
    std::string shape_string() const;
    void zero() noexcept;
};

/// A trainable tensor and its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay = true;  // weight decay applies (off for biases and norm affine terms)
};

/// Non-trainable persistent state, e.g. normalisation running statistics.
struct Buffer {
    std::string name;
    Tensor* value;
};

}  // namespace quiltclean::nn

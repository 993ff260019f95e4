#pragma once

#include "quiltclean/core/rng.hpp"
#include "quiltclean/nn/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace quiltclean::nn {

/// A differentiable operator.
///
/// `infer` is const and keeps no state, so a loaded model can serve
/// concurrent callers. `forward` runs in training mode and caches whatever
/// `backward` needs; `backward` accumulates into parameter gradients and
/// returns the gradient with respect to the last `forward` input.
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor infer(const Tensor& x) const = 0;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual void collect_parameters(const std::string& /*prefix*/, std::vector<Parameter*>& /*out*/) {}
    virtual void collect_buffers(const std::string& /*prefix*/, std::vector<Buffer>& /*out*/) {}
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d final : public Layer {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, CounterRng& init);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) override;

    int out_size(int in) const noexcept { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

private:
    int in_, out_, kernel_, stride_, padding_;
    bool has_bias_;
    Parameter weight_;  // [out, in * k * k] stored as (out, in, k, k)
    Parameter bias_;
    Tensor input_;
};

class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<Buffer>& out) override;

    /// Used for the last norm of a residual branch so each block starts as
    /// an identity map.
    void zero_gamma() noexcept;

private:
    int channels_;
    float momentum_, eps_;
    Parameter gamma_, beta_;
    Tensor running_mean_, running_var_;
    Tensor x_hat_;
    std::vector<float> inv_std_;
};

class ReLU final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor output_;
};

class MaxPool2d final : public Layer {
public:
    MaxPool2d(int kernel, int stride, int padding = 0);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor pool(const Tensor& x, std::vector<int>* argmax) const;

    int kernel_, stride_, padding_;
    std::vector<int> argmax_;
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Average pooling with ceil-mode output size; windows are clipped to the
/// input and averaged over the in-bounds elements only.
class AvgPool2d final : public Layer {
public:
    AvgPool2d(int kernel, int stride);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

    int out_size(int in) const noexcept { return (in - kernel_ + stride_ - 1) / stride_ + 1; }

private:
    int kernel_, stride_;
    int in_h_ = 0, in_w_ = 0;
};

/// (N, C, H, W) -> (N, C, 1, 1) mean over the spatial plane.
class GlobalAvgPool final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    int in_h_ = 0, in_w_ = 0;
};

/// (N, C, H, W) -> (N, 2C, 1, 1): channel means followed by channel maxima.
class GlobalAvgMaxPool final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    int in_h_ = 0, in_w_ = 0;
    std::vector<int> argmax_;
};

/// Fully connected layer on (N, F, 1, 1) inputs.
class Linear final : public Layer {
public:
    Linear(int in_features, int out_features, CounterRng& init);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) override;

private:
    int in_, out_;
    Parameter weight_, bias_;
    Tensor input_;
};

class Sequential final : public Layer {
public:
    Sequential() = default;

    Sequential& add(LayerPtr layer) {
        layers_.push_back(std::move(layer));
        return *this;
    }
    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto p = std::make_unique<L>(std::forward<Args>(args)...);
        auto& ref = *p;
        layers_.push_back(std::move(p));
        return ref;
    }
    bool empty() const noexcept { return layers_.empty(); }
    std::size_t size() const noexcept { return layers_.size(); }

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<Buffer>& out) override;

private:
    std::vector<LayerPtr> layers_;
};

/// relu(main(x) + shortcut(x)); an empty shortcut is the identity.
class Residual final : public Layer {
public:
    Residual(std::unique_ptr<Sequential> main, std::unique_ptr<Sequential> shortcut);

    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<Buffer>& out) override;

private:
    std::unique_ptr<Sequential> main_, shortcut_;
    Tensor output_;
};

}  // namespace quiltclean::nn

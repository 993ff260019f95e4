#include "quiltclean/nn/layers.hpp"

#include "quiltclean/core/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace quiltclean::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const char* what) {
    if (!ok) throw InvalidArgument(what);
}

/// Unfolds one sample (C, H, W) into a (C*k*k, Ho*Wo) row-major matrix.
void im2col(const float* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, float* cols) {
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = cols + (static_cast<std::size_t>(ch * k + ky) * k + kx) * ho * wo;
                const float* plane = x + static_cast<std::size_t>(ch) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    float* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    if (stride == 1) {
                        const int x0 = kx - pad;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox + x0;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                        }
                    } else {
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                        }
                    }
                }
            }
}

/// Adjoint of im2col: scatters-adds columns back into a (C, H, W) buffer.
void col2im(const float* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, float* x) {
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* row = cols + (static_cast<std::size_t>(ch * k + ky) * k + kx) * ho * wo;
                float* plane = x + static_cast<std::size_t>(ch) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = row + static_cast<std::size_t>(oy) * wo;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, CounterRng& init)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding), has_bias_(bias) {
    require(in_ > 0 && out_ > 0 && kernel_ > 0 && stride_ > 0 && padding_ >= 0, "invalid Conv2d geometry");
    weight_.value = Tensor(out_, in_, kernel_, kernel_);
    weight_.grad = Tensor(out_, in_, kernel_, kernel_);
    // He initialisation, fan-out mode.
    const double std = std::sqrt(2.0 / (static_cast<double>(out_) * kernel_ * kernel_));
    for (auto& v : weight_.value.data) v = static_cast<float>(init.normal() * std);
    if (has_bias_) {
        bias_.value = Tensor(1, out_, 1, 1);
        bias_.grad = Tensor(1, out_, 1, 1);
        bias_.decay = false;
    }
}

Tensor Conv2d::infer(const Tensor& x) const {
    require(x.c == in_, "Conv2d: channel mismatch");
    const int ho = out_size(x.h), wo = out_size(x.w);
    require(ho > 0 && wo > 0, "Conv2d: input smaller than kernel");
    Tensor y(x.n, out_, ho, wo);
    const int kdim = in_ * kernel_ * kernel_;
    const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
    std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * ho * wo);
    ConstMapMat wmat(weight_.value.data.data(), out_, kdim);
    for (int i = 0; i < x.n; ++i) {
        const float* src = x.sample(i);
        if (!pointwise) {
            im2col(src, in_, x.h, x.w, kernel_, stride_, padding_, ho, wo, cols.data());
            src = cols.data();
        }
        MapMat out(y.sample(i), out_, ho * wo);
        out.noalias() = wmat * ConstMapMat(src, kdim, ho * wo);
        if (has_bias_)
            for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value.data[static_cast<std::size_t>(o)];
    }
    return y;
}

Tensor Conv2d::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const int ho = grad_out.h, wo = grad_out.w;
    const int kdim = in_ * kernel_ * kernel_;
    const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
    Tensor dx(x.n, x.c, x.h, x.w);
    std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * ho * wo);
    std::vector<float> dcols(static_cast<std::size_t>(kdim) * ho * wo);
    ConstMapMat wmat(weight_.value.data.data(), out_, kdim);
    MapMat wgrad(weight_.grad.data.data(), out_, kdim);
    for (int i = 0; i < x.n; ++i) {
        ConstMapMat dy(grad_out.sample(i), out_, ho * wo);
        const float* src = x.sample(i);
        if (!pointwise) {
            im2col(src, in_, x.h, x.w, kernel_, stride_, padding_, ho, wo, cols.data());
            src = cols.data();
        }
        wgrad.noalias() += dy * ConstMapMat(src, kdim, ho * wo).transpose();
        if (has_bias_)
            for (int o = 0; o < out_; ++o) bias_.grad.data[static_cast<std::size_t>(o)] += dy.row(o).sum();
        if (pointwise) {
            MapMat(dx.sample(i), kdim, ho * wo).noalias() = wmat.transpose() * dy;
        } else {
            MapMat(dcols.data(), kdim, ho * wo).noalias() = wmat.transpose() * dy;
            col2im(dcols.data(), in_, x.h, x.w, kernel_, stride_, padding_, ho, wo, dx.sample(i));
        }
    }
    return dx;
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) {
    weight_.name = prefix + "weight";
    out.push_back(&weight_);
    if (has_bias_) {
        bias_.name = prefix + "bias";
        out.push_back(&bias_);
    }
}

// --- BatchNorm2d ------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_.value = Tensor(1, channels, 1, 1, 1.0f);
    gamma_.grad = Tensor(1, channels, 1, 1);
    gamma_.decay = false;
    beta_.value = Tensor(1, channels, 1, 1);
    beta_.grad = Tensor(1, channels, 1, 1);
    beta_.decay = false;
    running_mean_ = Tensor(1, channels, 1, 1);
    running_var_ = Tensor(1, channels, 1, 1, 1.0f);
}

void BatchNorm2d::zero_gamma() noexcept { gamma_.value.zero(); }

Tensor BatchNorm2d::infer(const Tensor& x) const {
    require(x.c == channels_, "BatchNorm2d: channel mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    const auto plane = x.plane();
    for (int ch = 0; ch < channels_; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        const float scale = gamma_.value.data[k] / std::sqrt(running_var_.data[k] + eps_);
        const float shift = beta_.value.data[k] - running_mean_.data[k] * scale;
        for (int i = 0; i < x.n; ++i) {
            const float* src = x.sample(i) + k * plane;
            float* dst = y.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] * scale + shift;
        }
    }
    return y;
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    require(x.c == channels_, "BatchNorm2d: channel mismatch");
    const auto plane = x.plane();
    const double m = static_cast<double>(plane) * x.n;
    require(m > 1, "BatchNorm2d: need more than one value per channel in training mode");
    Tensor y(x.n, x.c, x.h, x.w);
    x_hat_ = Tensor(x.n, x.c, x.h, x.w);
    inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
    for (int ch = 0; ch < channels_; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        double sum = 0.0;
        for (int i = 0; i < x.n; ++i) {
            const float* src = x.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p) sum += src[p];
        }
        const double mean = sum / m;
        double sq = 0.0;
        for (int i = 0; i < x.n; ++i) {
            const float* src = x.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p) sq += (src[p] - mean) * (src[p] - mean);
        }
        const double var = sq / m;
        const auto inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
        inv_std_[k] = inv;
        const float g = gamma_.value.data[k], b = beta_.value.data[k];
        for (int i = 0; i < x.n; ++i) {
            const float* src = x.sample(i) + k * plane;
            float* xh = x_hat_.sample(i) + k * plane;
            float* dst = y.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                xh[p] = static_cast<float>((src[p] - mean) * inv);
                dst[p] = g * xh[p] + b;
            }
        }
        running_mean_.data[k] = static_cast<float>((1.0 - momentum_) * running_mean_.data[k] + momentum_ * mean);
        running_var_.data[k] =
            static_cast<float>((1.0 - momentum_) * running_var_.data[k] + momentum_ * var * m / (m - 1.0));
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const auto plane = grad_out.plane();
    const double m = static_cast<double>(plane) * grad_out.n;
    Tensor dx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
    for (int ch = 0; ch < channels_; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        double dgamma = 0.0, dbeta = 0.0;
        for (int i = 0; i < grad_out.n; ++i) {
            const float* dy = grad_out.sample(i) + k * plane;
            const float* xh = x_hat_.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                dgamma += dy[p] * xh[p];
                dbeta += dy[p];
            }
        }
        gamma_.grad.data[k] += static_cast<float>(dgamma);
        beta_.grad.data[k] += static_cast<float>(dbeta);
        const double scale = gamma_.value.data[k] * inv_std_[k] / m;
        for (int i = 0; i < grad_out.n; ++i) {
            const float* dy = grad_out.sample(i) + k * plane;
            const float* xh = x_hat_.sample(i) + k * plane;
            float* out = dx.sample(i) + k * plane;
            for (std::size_t p = 0; p < plane; ++p)
                out[p] = static_cast<float>(scale * (m * dy[p] - dbeta - xh[p] * dgamma));
        }
    }
    return dx;
}

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) {
    gamma_.name = prefix + "gamma";
    beta_.name = prefix + "beta";
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<Buffer>& out) {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
}

// --- ReLU -------------------------------------------------------------------

Tensor ReLU::infer(const Tensor& x) const {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor ReLU::forward(const Tensor& x) {
    output_ = infer(x);
    return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (output_.data[i] <= 0.0f) dx.data[i] = 0.0f;
    return dx;
}

// --- MaxPool2d --------------------------------------------------------------

MaxPool2d::MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {
    require(kernel > 0 && stride > 0 && padding >= 0 && padding * 2 <= kernel, "invalid MaxPool2d geometry");
}

Tensor MaxPool2d::pool(const Tensor& x, std::vector<int>* argmax) const {
    const int ho = (x.h + 2 * padding_ - kernel_) / stride_ + 1;
    const int wo = (x.w + 2 * padding_ - kernel_) / stride_ + 1;
    require(ho > 0 && wo > 0, "MaxPool2d: input smaller than kernel");
    Tensor y(x.n, x.c, ho, wo);
    if (argmax) argmax->assign(y.size(), -1);
    std::size_t out_i = 0;
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const float* plane = x.sample(i) + static_cast<std::size_t>(ch) * x.plane();
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++out_i) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < kernel_; ++ky) {
                        const int iy = oy * stride_ - padding_ + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < kernel_; ++kx) {
                            const int ix = ox * stride_ - padding_ + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            const float v = plane[iy * x.w + ix];
                            if (v > best || best_idx < 0) {
                                best = v;
                                best_idx = iy * x.w + ix;
                            }
                        }
                    }
                    y.data[out_i] = best;
                    if (argmax) (*argmax)[out_i] = best_idx;
                }
        }
    return y;
}

Tensor MaxPool2d::infer(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool2d::forward(const Tensor& x) {
    in_n_ = x.n;
    in_c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    return pool(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    Tensor dx(in_n_, in_c_, in_h_, in_w_);
    const auto out_plane = grad_out.plane();
    const auto in_plane = static_cast<std::size_t>(in_h_) * in_w_;
    for (std::size_t j = 0; j < grad_out.size(); ++j) {
        const std::size_t nc = j / out_plane;
        dx.data[nc * in_plane + static_cast<std::size_t>(argmax_[j])] += grad_out.data[j];
    }
    return dx;
}

// --- AvgPool2d --------------------------------------------------------------

AvgPool2d::AvgPool2d(int kernel, int stride) : kernel_(kernel), stride_(stride) {
    require(kernel > 0 && stride > 0, "invalid AvgPool2d geometry");
}

Tensor AvgPool2d::infer(const Tensor& x) const {
    const int ho = out_size(x.h), wo = out_size(x.w);
    require(ho > 0 && wo > 0, "AvgPool2d: input smaller than kernel");
    Tensor y(x.n, x.c, ho, wo);
    std::size_t out_i = 0;
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const float* plane = x.sample(i) + static_cast<std::size_t>(ch) * x.plane();
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++out_i) {
                    const int y0 = oy * stride_, y1 = std::min(x.h, y0 + kernel_);
                    const int x0 = ox * stride_, x1 = std::min(x.w, x0 + kernel_);
                    float acc = 0.0f;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) acc += plane[iy * x.w + ix];
                    y.data[out_i] = acc / static_cast<float>((y1 - y0) * (x1 - x0));
                }
        }
    return y;
}

Tensor AvgPool2d::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    return infer(x);
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
    Tensor dx(grad_out.n, grad_out.c, in_h_, in_w_);
    std::size_t out_i = 0;
    for (int i = 0; i < grad_out.n; ++i)
        for (int ch = 0; ch < grad_out.c; ++ch) {
            float* plane = dx.sample(i) + static_cast<std::size_t>(ch) * dx.plane();
            for (int oy = 0; oy < grad_out.h; ++oy)
                for (int ox = 0; ox < grad_out.w; ++ox, ++out_i) {
                    const int y0 = oy * stride_, y1 = std::min(in_h_, y0 + kernel_);
                    const int x0 = ox * stride_, x1 = std::min(in_w_, x0 + kernel_);
                    const float g = grad_out.data[out_i] / static_cast<float>((y1 - y0) * (x1 - x0));
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) plane[iy * in_w_ + ix] += g;
                }
        }
    return dx;
}

// --- global pooling ----------------------------------------------------------

Tensor GlobalAvgPool::infer(const Tensor& x) const {
    Tensor y(x.n, x.c, 1, 1);
    const auto plane = x.plane();
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const float* src = x.sample(i) + static_cast<std::size_t>(ch) * plane;
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) acc += src[p];
            y.at(i, ch, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
        }
    return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    Tensor dx(grad_out.n, grad_out.c, in_h_, in_w_);
    const auto plane = dx.plane();
    for (int i = 0; i < grad_out.n; ++i)
        for (int ch = 0; ch < grad_out.c; ++ch) {
            const float g = grad_out.at(i, ch, 0, 0) / static_cast<float>(plane);
            float* dst = dx.sample(i) + static_cast<std::size_t>(ch) * plane;
            std::fill(dst, dst + plane, g);
        }
    return dx;
}

Tensor GlobalAvgMaxPool::infer(const Tensor& x) const {
    Tensor y(x.n, 2 * x.c, 1, 1);
    const auto plane = x.plane();
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const float* src = x.sample(i) + static_cast<std::size_t>(ch) * plane;
            double acc = 0.0;
            float best = src[0];
            for (std::size_t p = 0; p < plane; ++p) {
                acc += src[p];
                best = std::max(best, src[p]);
            }
            y.at(i, ch, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
            y.at(i, x.c + ch, 0, 0) = best;
        }
    return y;
}

Tensor GlobalAvgMaxPool::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    argmax_.assign(static_cast<std::size_t>(x.n) * x.c, 0);
    const auto plane = x.plane();
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const float* src = x.sample(i) + static_cast<std::size_t>(ch) * plane;
            argmax_[static_cast<std::size_t>(i) * x.c + ch] =
                static_cast<int>(std::max_element(src, src + plane) - src);
        }
    return infer(x);
}

Tensor GlobalAvgMaxPool::backward(const Tensor& grad_out) {
    const int c = grad_out.c / 2;
    Tensor dx(grad_out.n, c, in_h_, in_w_);
    const auto plane = dx.plane();
    for (int i = 0; i < grad_out.n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const float g = grad_out.at(i, ch, 0, 0) / static_cast<float>(plane);
            float* dst = dx.sample(i) + static_cast<std::size_t>(ch) * plane;
            std::fill(dst, dst + plane, g);
            dst[argmax_[static_cast<std::size_t>(i) * c + ch]] += grad_out.at(i, c + ch, 0, 0);
        }
    return dx;
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(int in_features, int out_features, CounterRng& init) : in_(in_features), out_(out_features) {
    require(in_ > 0 && out_ > 0, "invalid Linear geometry");
    weight_.value = Tensor(out_, in_, 1, 1);
    weight_.grad = Tensor(out_, in_, 1, 1);
    bias_.value = Tensor(1, out_, 1, 1);
    bias_.grad = Tensor(1, out_, 1, 1);
    bias_.decay = false;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& v : weight_.value.data) v = static_cast<float>(init.uniform(-bound, bound));
    for (auto& v : bias_.value.data) v = static_cast<float>(init.uniform(-bound, bound));
}

Tensor Linear::infer(const Tensor& x) const {
    require(static_cast<int>(x.sample_size()) == in_, "Linear: feature size mismatch");
    Tensor y(x.n, out_, 1, 1);
    ConstMapMat xm(x.data.data(), x.n, in_);
    ConstMapMat wm(weight_.value.data.data(), out_, in_);
    MapMat ym(y.data.data(), x.n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < x.n; ++i)
        for (int o = 0; o < out_; ++o) ym(i, o) += bias_.value.data[static_cast<std::size_t>(o)];
    return y;
}

Tensor Linear::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor Linear::backward(const Tensor& grad_out) {
    ConstMapMat dy(grad_out.data.data(), grad_out.n, out_);
    ConstMapMat xm(input_.data.data(), input_.n, in_);
    ConstMapMat wm(weight_.value.data.data(), out_, in_);
    MapMat(weight_.grad.data.data(), out_, in_).noalias() += dy.transpose() * xm;
    for (int o = 0; o < out_; ++o) bias_.grad.data[static_cast<std::size_t>(o)] += dy.col(o).sum();
    Tensor dx(input_.n, input_.c, input_.h, input_.w);
    MapMat(dx.data.data(), input_.n, in_).noalias() = dy * wm;
    return dx;
}

void Linear::collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) {
    weight_.name = prefix + "weight";
    bias_.name = prefix + "bias";
    out.push_back(&weight_);
    out.push_back(&bias_);
}

// --- Sequential -------------------------------------------------------------

Tensor Sequential::infer(const Tensor& x) const {
    Tensor cur = x;
    for (const auto& l : layers_) cur = l->infer(cur);
    return cur;
}

Tensor Sequential::forward(const Tensor& x) {
    Tensor cur = x;
    for (auto& l : layers_) cur = l->forward(cur);
    return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor cur = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Sequential::collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect_parameters(prefix + std::to_string(i) + ".", out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<Buffer>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect_buffers(prefix + std::to_string(i) + ".", out);
}

// --- Residual ---------------------------------------------------------------

Residual::Residual(std::unique_ptr<Sequential> main, std::unique_ptr<Sequential> shortcut)
    : main_(std::move(main)), shortcut_(std::move(shortcut)) {
    if (!shortcut_) shortcut_ = std::make_unique<Sequential>();
}

Tensor Residual::infer(const Tensor& x) const {
    Tensor a = main_->infer(x);
    const Tensor b = shortcut_->empty() ? x : shortcut_->infer(x);
    require(a.same_shape(b), "Residual: branch shapes differ");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = std::max(0.0f, a.data[i] + b.data[i]);
    return a;
}

Tensor Residual::forward(const Tensor& x) {
    Tensor a = main_->forward(x);
    const Tensor b = shortcut_->empty() ? x : shortcut_->forward(x);
    require(a.same_shape(b), "Residual: branch shapes differ");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = std::max(0.0f, a.data[i] + b.data[i]);
    output_ = a;
    return a;
}

Tensor Residual::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (output_.data[i] <= 0.0f) g.data[i] = 0.0f;
    Tensor da = main_->backward(g);
    const Tensor db = shortcut_->empty() ? g : shortcut_->backward(g);
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += db.data[i];
    return da;
}

void Residual::collect_parameters(const std::string& prefix, std::vector<Parameter*>& out) {
    main_->collect_parameters(prefix + "main.", out);
    shortcut_->collect_parameters(prefix + "shortcut.", out);
}

void Residual::collect_buffers(const std::string& prefix, std::vector<Buffer>& out) {
    main_->collect_buffers(prefix + "main.", out);
    shortcut_->collect_buffers(prefix + "shortcut.", out);
}

}  // namespace quiltclean::nn

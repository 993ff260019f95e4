#include "quiltclean/features.hpp"

#include "quiltclean/augment.hpp"
#include "quiltclean/core/error.hpp"
#include "quiltclean/core/parallel.hpp"
#include "quiltclean/nn/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace quiltclean::features {

namespace {

constexpr int kSide = 64;

class ColorTexture final : public Extractor {
public:
    const std::string& id() const override { return id_; }
    std::size_t dim() const override { return 6 + 24 + 9 + 16 + 16 + 3 + 1; }

    std::vector<double> extract(const Image& src) const override {
        const Image img = augment::prepare(src, kSide);
        const int n = kSide * kSide;
        std::vector<double> f;
        f.reserve(dim());

        std::array<double, 3> mean{}, sq{};
        std::array<std::array<double, 8>, 3> hist{};
        std::vector<double> gray(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto* p = &img.pixels[static_cast<std::size_t>(i) * 3];
            for (int k = 0; k < 3; ++k) {
                const double v = p[k] / 255.0;
                mean[k] += v;
                sq[k] += v * v;
                hist[k][std::min(7, p[k] / 32)] += 1.0;
            }
            gray[static_cast<std::size_t>(i)] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        }
        for (int k = 0; k < 3; ++k) {
            mean[k] /= n;
            f.push_back(mean[k]);
            f.push_back(std::sqrt(std::max(0.0, sq[k] / n - mean[k] * mean[k])));
        }
        for (const auto& h : hist)
            for (double c : h) f.push_back(c / n);

        // Gradient magnitude histogram and mean (central differences).
        auto g = [&](int x, int y) {
            x = std::clamp(x, 0, kSide - 1);
            y = std::clamp(y, 0, kSide - 1);
            return gray[static_cast<std::size_t>(y * kSide + x)];
        };
        std::array<double, 8> ghist{};
        double gmean = 0.0, lap = 0.0;
        std::array<double, 16> lbp{};
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x) {
                const double gx = (g(x + 1, y) - g(x - 1, y)) / 2.0;
                const double gy = (g(x, y + 1) - g(x, y - 1)) / 2.0;
                const double mag = std::sqrt(gx * gx + gy * gy);
                gmean += mag;
                ghist[std::min<std::size_t>(7, static_cast<std::size_t>(mag * 16.0))] += 1.0;
                const double c = g(x, y);
                const double l = g(x + 1, y) + g(x - 1, y) + g(x, y + 1) + g(x, y - 1) - 4 * c;
                lap += l * l;
                const int code = (g(x + 1, y) >= c) | ((g(x, y + 1) >= c) << 1) | ((g(x - 1, y) >= c) << 2) |
                                 ((g(x, y - 1) >= c) << 3);
                lbp[static_cast<std::size_t>(code)] += 1.0;
            }
        for (double c : ghist) f.push_back(c / n);
        f.push_back(gmean / n);
        for (double c : lbp) f.push_back(c / n);

        // 4x4 grid of mean intensity.
        const int cell = kSide / 4;
        for (int gy = 0; gy < 4; ++gy)
            for (int gx = 0; gx < 4; ++gx) {
                double acc = 0.0;
                for (int y = gy * cell; y < (gy + 1) * cell; ++y)
                    for (int x = gx * cell; x < (gx + 1) * cell; ++x) acc += gray[static_cast<std::size_t>(y * kSide + x)];
                f.push_back(acc / (cell * cell));
            }

        // Channel correlations.
        const std::array<std::pair<int, int>, 3> pairs = {{{0, 1}, {0, 2}, {1, 2}}};
        for (const auto& [a, b] : pairs) {
            double cov = 0.0, va = 0.0, vb = 0.0;
            for (int i = 0; i < n; ++i) {
                const double da = img.pixels[static_cast<std::size_t>(i) * 3 + a] / 255.0 - mean[a];
                const double db = img.pixels[static_cast<std::size_t>(i) * 3 + b] / 255.0 - mean[b];
                cov += da * db;
                va += da * da;
                vb += db * db;
            }
            f.push_back(va > 0 && vb > 0 ? cov / std::sqrt(va * vb) : 0.0);
        }
        f.push_back(std::sqrt(lap / n));
        return f;
    }

private:
    std::string id_ = "color-texture-v1";
};

class RandomConv final : public Extractor {
public:
    RandomConv() {
        CounterRng rng(derive_seed({hash_string("random-conv-v1")}));
        net_.emplace<nn::Conv2d>(3, 16, 3, 2, 1, true, rng);
        net_.emplace<nn::ReLU>();
        net_.emplace<nn::Conv2d>(16, 32, 3, 2, 1, true, rng);
        net_.emplace<nn::ReLU>();
        net_.emplace<nn::GlobalAvgMaxPool>();
    }

    const std::string& id() const override { return id_; }
    std::size_t dim() const override { return 64; }

    std::vector<double> extract(const Image& src) const override {
        const Image img = augment::prepare(src, kSide);
        nn::Tensor x(1, 3, kSide, kSide);
        augment::to_chw(img, x.sample(0));
        const nn::Tensor y = net_.infer(x);
        return {y.data.begin(), y.data.end()};
    }

private:
    std::string id_ = "random-conv-v1";
    nn::Sequential net_;
};

}  // namespace

std::unique_ptr<Extractor> make_extractor(const std::string& id) {
    if (id == "color-texture-v1") return std::make_unique<ColorTexture>();
    if (id == "random-conv-v1") return std::make_unique<RandomConv>();
    throw InvalidArgument("unknown feature extractor: " + id);
}

std::vector<std::string> extractor_ids() { return {"color-texture-v1", "random-conv-v1"}; }

Eigen::MatrixXd extract_all(const Extractor& extractor, std::span<const Image> images, std::size_t workers) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(extractor.dim()));
    parallel_for(images.size(), workers, [&](std::size_t i) {
        const auto f = extractor.extract(images[i]);
        if (f.size() != extractor.dim()) throw InvalidArgument("extractor returned the wrong dimension");
        for (std::size_t k = 0; k < f.size(); ++k)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
    });
    return out;
}

}  // namespace quiltclean::features

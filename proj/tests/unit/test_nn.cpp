#include "../support.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/rng.hpp"
#include "quiltclean/nn/backbones.hpp"
#include "quiltclean/nn/layers.hpp"
#include "quiltclean/nn/serialize.hpp"

#include <doctest.h>

#include <cmath>

using namespace quiltclean;
using namespace quiltclean::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
    Tensor t(n, c, h, w);
    CounterRng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

// Scalar probe: L = sum(out * coeff).
double probe(Layer& layer, const Tensor& x, const Tensor& coeff) {
    const auto y = layer.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data[i]) * coeff.data[i];
    return s;
}

// Compares analytic input and parameter gradients with central differences.
void gradient_check(Layer& layer, Tensor x, double tol = 2e-2) {
    const auto y = layer.forward(x);
    const auto coeff = random_tensor(y.n, y.c, y.h, y.w, 77);
    std::vector<Parameter*> params;
    layer.collect_parameters("", params);
    for (auto* p : params) p->grad.zero();
    layer.forward(x);
    const auto gx = layer.backward(coeff);
    REQUIRE(gx.same_shape(x));

    const float eps = 1e-2f;
    CounterRng pick(5);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t i = pick.below(x.size());
        const float orig = x.data[i];
        x.data[i] = orig + eps;
        const double up = probe(layer, x, coeff);
        x.data[i] = orig - eps;
        const double down = probe(layer, x, coeff);
        x.data[i] = orig;
        const double num = (up - down) / (2 * eps);
        CHECK(std::abs(num - gx.data[i]) <= tol * std::max(1.0, std::abs(num)));
    }
    for (auto* p : params) {
        for (int trial = 0; trial < 6; ++trial) {
            const std::size_t i = pick.below(p->value.size());
            const float orig = p->value.data[i];
            p->value.data[i] = orig + eps;
            const double up = probe(layer, x, coeff);
            p->value.data[i] = orig - eps;
            const double down = probe(layer, x, coeff);
            p->value.data[i] = orig;
            const double num = (up - down) / (2 * eps);
            CAPTURE(p->name);
            CHECK(std::abs(num - p->grad.data[i]) <= tol * std::max(1.0, std::abs(num)));
        }
    }
}

}  // namespace

TEST_CASE("conv2d gradients") {
    CounterRng init(1);
    Conv2d strided(3, 4, 3, 2, 1, true, init);
    gradient_check(strided, random_tensor(2, 3, 7, 6, 2));
    Conv2d pointwise(3, 5, 1, 1, 0, false, init);
    gradient_check(pointwise, random_tensor(2, 3, 4, 4, 3));
}

TEST_CASE("conv2d output size and infer/forward agreement") {
    CounterRng init(1);
    Conv2d conv(2, 3, 3, 2, 1, false, init);
    const auto x = random_tensor(1, 2, 9, 9, 4);
    const auto y = conv.forward(x);
    CHECK(y.h == conv.out_size(9));
    CHECK(y.h == 5);
    CHECK(conv.infer(x).data == y.data);
}

TEST_CASE("batchnorm gradients and running statistics") {
    BatchNorm2d bn(3);
    gradient_check(bn, random_tensor(4, 3, 3, 3, 5));
    BatchNorm2d fresh(2);
    auto x = random_tensor(8, 2, 4, 4, 6);
    for (auto& v : x.data) v = v * 2.0f + 3.0f;
    const auto y = fresh.forward(x);
    double mean = 0.0;
    for (int n = 0; n < 8; ++n)
        for (int i = 0; i < 16; ++i) mean += y.sample(n)[i];
    CHECK(mean / 128.0 == doctest::Approx(0.0).epsilon(1e-4));
    std::vector<Buffer> bufs;
    fresh.collect_buffers("", bufs);
    REQUIRE(bufs.size() == 2);
    CHECK(bufs[0].value->data[0] != 0.0f);  // running mean moved toward the batch mean
}

TEST_CASE("pooling and head gradients") {
    MaxPool2d mp(3, 2, 1);
    gradient_check(mp, random_tensor(2, 2, 7, 7, 7));
    AvgPool2d ap(2, 2);
    gradient_check(ap, random_tensor(2, 2, 5, 5, 8));
    GlobalAvgMaxPool gamp;
    gradient_check(gamp, random_tensor(2, 3, 4, 4, 9));
    CounterRng init(2);
    Linear fc(6, 4, init);
    gradient_check(fc, random_tensor(3, 6, 1, 1, 10));
}

TEST_CASE("avgpool ceil mode keeps the last partial window") {
    AvgPool2d ap(2, 2);
    Tensor x(1, 1, 3, 3, 1.0f);
    const auto y = ap.infer(x);
    CHECK(y.h == 2);
    CHECK(y.w == 2);
    for (float v : y.data) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("residual block gradients") {
    CounterRng init(3);
    auto main = std::make_unique<Sequential>();
    main->emplace<Conv2d>(2, 2, 3, 1, 1, false, init);
    main->emplace<BatchNorm2d>(2);
    Residual block(std::move(main), nullptr);
    gradient_check(block, random_tensor(3, 2, 4, 4, 11));
}

TEST_CASE("backbones produce one logit per category") {
    for (const auto& id : backbone_ids()) {
        CAPTURE(id);
        Network net(id, 8, 1);
        const auto y = net.infer(random_tensor(2, 3, 32, 32, 12));
        CHECK(y.n == 2);
        CHECK(y.c == 8);
        CHECK(y.h == 1);
        CHECK(y.w == 1);
        CHECK(net.parameter_count() > 0);
    }
    CHECK(is_backbone("tiny-cnn"));
    CHECK_FALSE(is_backbone("vgg"));
    CHECK_THROWS_AS(Network("vgg", 8, 0), InvalidArgument);
    Network r18("resnet18d", 8, 0), r50("resnet50d", 8, 0);
    CHECK(r50.parameter_count() > r18.parameter_count());
}

TEST_CASE("initialisation is seeded") {
    Network a("tiny-cnn", 8, 4), b("tiny-cnn", 8, 4), c("tiny-cnn", 8, 5);
    const auto x = random_tensor(1, 3, 16, 16, 13);
    CHECK(a.infer(x).data == b.infer(x).data);
    CHECK(a.infer(x).data != c.infer(x).data);
}

TEST_CASE("weights round trip through the checkpoint format") {
    qc_test::TempDir tmp;
    Network a("tiny-cnn", 8, 1), b("tiny-cnn", 8, 2);
    a.forward(random_tensor(4, 3, 16, 16, 14));  // moves running stats
    save_weights(a, tmp / "w.bin");
    load_weights(b, tmp / "w.bin");
    const auto x = random_tensor(2, 3, 16, 16, 15);
    CHECK(a.infer(x).data == b.infer(x).data);
    Network other("resnet18d", 8, 1);
    CHECK_THROWS(load_weights(other, tmp / "w.bin"));
}

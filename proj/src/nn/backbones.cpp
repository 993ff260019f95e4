#include "quiltclean/nn/backbones.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/rng.hpp"

#include <algorithm>

namespace quiltclean::nn {

namespace {

void conv_bn_relu(Sequential& s, int in, int out, int k, int stride, CounterRng& rng) {
    s.emplace<Conv2d>(in, out, k, stride, k / 2, false, rng);
    s.emplace<BatchNorm2d>(out);
    s.emplace<ReLU>();
}

std::unique_ptr<Sequential> tiny_cnn(int outputs, CounterRng& rng) {
    auto s = std::make_unique<Sequential>();
    conv_bn_relu(*s, 3, 16, 3, 1, rng);
    s->emplace<MaxPool2d>(2, 2);
    conv_bn_relu(*s, 16, 32, 3, 1, rng);
    s->emplace<MaxPool2d>(2, 2);
    conv_bn_relu(*s, 32, 64, 3, 1, rng);
    s->emplace<MaxPool2d>(2, 2);
    conv_bn_relu(*s, 64, 64, 3, 1, rng);
    s->emplace<GlobalAvgMaxPool>();
    s->emplace<Linear>(128, outputs, rng);
    return s;
}

// "D" variant shortcut: average-pool to downsample, then a 1x1 projection.
std::unique_ptr<Sequential> shortcut_d(int in, int out, int stride, CounterRng& rng) {
    auto s = std::make_unique<Sequential>();
    if (in == out && stride == 1) return s;
    if (stride > 1) s->emplace<AvgPool2d>(stride, stride);
    s->emplace<Conv2d>(in, out, 1, 1, 0, false, rng);
    s->emplace<BatchNorm2d>(out);
    return s;
}

LayerPtr basic_block(int in, int out, int stride, CounterRng& rng) {
    auto main = std::make_unique<Sequential>();
    conv_bn_relu(*main, in, out, 3, stride, rng);
    main->emplace<Conv2d>(out, out, 3, 1, 1, false, rng);
    main->emplace<BatchNorm2d>(out).zero_gamma();
    return std::make_unique<Residual>(std::move(main), shortcut_d(in, out, stride, rng));
}

LayerPtr bottleneck_block(int in, int width, int stride, CounterRng& rng) {
    const int out = width * 4;
    auto main = std::make_unique<Sequential>();
    conv_bn_relu(*main, in, width, 1, 1, rng);
    conv_bn_relu(*main, width, width, 3, stride, rng);
    main->emplace<Conv2d>(width, out, 1, 1, 0, false, rng);
    main->emplace<BatchNorm2d>(out).zero_gamma();
    return std::make_unique<Residual>(std::move(main), shortcut_d(in, out, stride, rng));
}

std::unique_ptr<Sequential> resnet_d(int outputs, bool bottleneck, const int (&depths)[4], CounterRng& rng) {
    auto s = std::make_unique<Sequential>();
    // Deep stem: three 3x3 convolutions in place of one 7x7.
    conv_bn_relu(*s, 3, 32, 3, 2, rng);
    conv_bn_relu(*s, 32, 32, 3, 1, rng);
    conv_bn_relu(*s, 32, 64, 3, 1, rng);
    s->emplace<MaxPool2d>(3, 2, 1);
    int in = 64;
    const int widths[4] = {64, 128, 256, 512};
    for (int stage = 0; stage < 4; ++stage)
        for (int b = 0; b < depths[stage]; ++b) {
            const int stride = (stage > 0 && b == 0) ? 2 : 1;
            if (bottleneck) {
                s->add(bottleneck_block(in, widths[stage], stride, rng));
                in = widths[stage] * 4;
            } else {
                s->add(basic_block(in, widths[stage], stride, rng));
                in = widths[stage];
            }
        }
    s->emplace<GlobalAvgPool>();
    s->emplace<Linear>(in, outputs, rng);
    return s;
}

}  // namespace

std::vector<std::string> backbone_ids() { return {"resnet18d", "resnet50d", "tiny-cnn"}; }

bool is_backbone(const std::string& id) {
    const auto ids = backbone_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

Network::Network(const std::string& backbone_id, int num_outputs, std::uint64_t seed)
    : id_(backbone_id), num_outputs_(num_outputs) {
    if (num_outputs <= 0) throw InvalidArgument("num_outputs must be positive");
    CounterRng rng(derive_seed({seed, hash_string("init"), hash_string(backbone_id)}));
    if (backbone_id == "tiny-cnn") {
        body_ = tiny_cnn(num_outputs, rng);
    } else if (backbone_id == "resnet18d") {
        body_ = resnet_d(num_outputs, false, {2, 2, 2, 2}, rng);
    } else if (backbone_id == "resnet50d") {
        body_ = resnet_d(num_outputs, true, {3, 4, 6, 3}, rng);
    } else {
        throw InvalidArgument("unknown backbone: " + backbone_id);
    }
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    body_->collect_parameters("", out);
    return out;
}

std::vector<Buffer> Network::buffers() {
    std::vector<Buffer> out;
    body_->collect_buffers("", out);
    return out;
}

std::size_t Network::parameter_count() {
    std::size_t total = 0;
    for (const auto* p : parameters()) total += p->value.size();
    return total;
}

}  // namespace quiltclean::nn

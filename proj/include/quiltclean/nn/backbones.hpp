#pragma once

#include "quiltclean/nn/layers.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace quiltclean::nn {

/// A backbone plus linear head producing `num_outputs` logits.
class Network {
public:
    Network(const std::string& backbone_id, int num_outputs, std::uint64_t seed);

    const std::string& backbone_id() const noexcept { return id_; }
    int num_outputs() const noexcept { return num_outputs_; }

    Tensor infer(const Tensor& x) const { return body_->infer(x); }
    Tensor forward(const Tensor& x) { return body_->forward(x); }
    Tensor backward(const Tensor& grad) { return body_->backward(grad); }

    std::vector<Parameter*> parameters();
    std::vector<Buffer> buffers();
    std::size_t parameter_count();

private:
    std::string id_;
    int num_outputs_;
    std::unique_ptr<Sequential> body_;
};

/// Registered ids: "tiny-cnn", "resnet18d", "resnet50d".
std::vector<std::string> backbone_ids();
bool is_backbone(const std::string& id);

}  // namespace quiltclean::nn

#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "segunet/backbone.hpp"
#include "segunet/config.hpp"

namespace segunet {

// conv + batch norm, no activation (the caller decides where ReLU goes).
class ConvBNImpl : public torch::nn::Module {
public:
    ConvBNImpl(int in_channels, int out_channels, std::pair<int, int> kernel,
               std::pair<int, int> padding, int dilation = 1);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBN);

// Receptive field block: parallel dilated branches, concat, 3x3 fuse, 1x1
// shortcut, final ReLU. Maps (B, in, h, w) -> (B, out, h, w).
class RFBImpl : public torch::nn::Module {
public:
    explicit RFBImpl(RFBConfig config);
    torch::Tensor forward(const torch::Tensor& x);

    const RFBConfig& config() const { return config_; }

    std::vector<torch::nn::Sequential> branches;
    ConvBN fuse{nullptr};
    ConvBN shortcut{nullptr};

private:
    RFBConfig config_;
};
TORCH_MODULE(RFB);

RFB build_rfb(const RFBConfig& config);

// Four 64-channel features, spatial sizes matching the input pyramid.
using FeaturePyramid64 = std::array<torch::Tensor, 4>;

// Applies rfbs[i] to pyramid[i]; channel mismatches throw ShapeError naming
// the stage.
FeaturePyramid64 apply_rfb_pyramid(std::vector<RFB>& rfbs, const FeaturePyramid& pyramid);

}  // namespace segunet

#include "segunet/rfb.hpp"

namespace segunet {

ConvBNImpl::ConvBNImpl(int in_channels, int out_channels, std::pair<int, int> kernel,
                       std::pair<int, int> padding, int dilation) {
    conv = register_module(
        "conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(
                              in_channels, out_channels,
                              {kernel.first, kernel.second})
                              .padding({padding.first, padding.second})
                              .dilation(dilation)
                              .bias(false)));
    bn = register_module("bn", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBNImpl::forward(const torch::Tensor& x) {
    return bn->forward(conv->forward(x));
}

RFBImpl::RFBImpl(RFBConfig config) : config_(std::move(config)) {
    config_.validate();
    for (int d : config_.branch_dilations) {
        if (d != 1 && d % 2 == 0) {
            throw ConfigError("rfb.branch_dilations: dilations above 1 must be odd, got " +
                              std::to_string(d));
        }
    }
    const int in = config_.in_channels;
    const int out = config_.out_channels;
    for (size_t i = 0; i < config_.branch_dilations.size(); ++i) {
        const int d = config_.branch_dilations[i];
        torch::nn::Sequential branch;
        branch->push_back(ConvBN(in, out, std::pair{1, 1}, std::pair{0, 0}));
        if (d > 1) {
            const int half = (d - 1) / 2;
            branch->push_back(ConvBN(out, out, std::pair{1, d}, std::pair{0, half}));
            branch->push_back(ConvBN(out, out, std::pair{d, 1}, std::pair{half, 0}));
            branch->push_back(ConvBN(out, out, std::pair{3, 3}, std::pair{d, d}, d));
        }
        branches.push_back(branch);
        register_module("branch" + std::to_string(i), branch);
    }
    const int cat_channels = out * int(config_.branch_dilations.size());
    fuse = register_module("fuse", ConvBN(cat_channels, out, std::pair{3, 3}, std::pair{1, 1}));
    shortcut = register_module("shortcut", ConvBN(in, out, std::pair{1, 1}, std::pair{0, 0}));
}

torch::Tensor RFBImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    outs.reserve(branches.size());
    for (auto& branch : branches) outs.push_back(branch->forward(x));
    auto fused = fuse->forward(torch::cat(outs, 1));
    return torch::relu(fused + shortcut->forward(x));
}

RFB build_rfb(const RFBConfig& config) { return RFB(config); }

FeaturePyramid64 apply_rfb_pyramid(std::vector<RFB>& rfbs, const FeaturePyramid& pyramid) {
    if (rfbs.size() != 4) {
        throw ShapeError("apply_rfb_pyramid: expected 4 receptive field blocks, got " +
                         std::to_string(rfbs.size()));
    }
    FeaturePyramid64 out;
    for (size_t i = 0; i < 4; ++i) {
        const int64_t got = pyramid[i].size(1);
        const int want = rfbs[i]->config().in_channels;
        if (got != want) {
            throw ShapeError("apply_rfb_pyramid: stage " + std::to_string(i) + " has " +
                             std::to_string(got) + " channels, expected " + std::to_string(want));
        }
        out[i] = rfbs[i]->forward(pyramid[i]);
    }
    return out;
}

}  // namespace segunet

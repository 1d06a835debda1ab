#include "segunet/decoder.hpp"

#include <sstream>

#include "segunet/common.hpp"

namespace segunet {

ConvBNReLUImpl::ConvBNReLUImpl(int in_channels, int out_channels) {
    conv = register_module("conv", ConvBN(in_channels, out_channels, std::pair{3, 3}, std::pair{1, 1}));
}

torch::Tensor ConvBNReLUImpl::forward(const torch::Tensor& x) {
    return torch::relu(conv->forward(x));
}

DecoderBlockImpl::DecoderBlockImpl(int in_channels, int out_channels) {
    conv1 = register_module("conv1", ConvBNReLU(in_channels, out_channels));
    conv2 = register_module("conv2", ConvBNReLU(out_channels, out_channels));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x) {
    return conv2->forward(conv1->forward(x));
}

UDecoderImpl::UDecoderImpl(DecoderConfig config) : config_(std::move(config)) {
    config_.validate();
    const int c = config_.channels;
    for (int i = 0; i < config_.num_blocks; ++i) {
        // Block 0 consumes the bottleneck fused with the stride-16 skip.
        blocks.push_back(register_module("block" + std::to_string(i), DecoderBlock(2 * c, c)));
        heads.push_back(register_module(
            "head" + std::to_string(i),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 1))));
    }
}

namespace {

torch::Tensor upsample_to(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    return torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<int64_t>{h, w})
               .mode(torch::kBilinear)
               .align_corners(false));
}

}  // namespace

SegmentationOutputs UDecoderImpl::forward(const FeaturePyramid64& pyramid, int64_t out_h,
                                          int64_t out_w) {
    const int c = config_.channels;
    for (size_t i = 0; i < pyramid.size(); ++i) {
        const auto& f = pyramid[i];
        if (f.dim() != 4 || f.size(1) != c) {
            std::ostringstream os;
            os << "decoder expects 4-d " << c << "-channel features; pyramid level " << i
               << " has shape " << f.sizes();
            throw ShapeError(os.str());
        }
        if (i > 0) {
            if (pyramid[i].size(2) * 2 != pyramid[i - 1].size(2) ||
                pyramid[i].size(3) * 2 != pyramid[i - 1].size(3)) {
                std::ostringstream os;
                os << "decoder expects strictly halving pyramid; level " << i << " is "
                   << pyramid[i].sizes() << " but level " << (i - 1) << " is "
                   << pyramid[i - 1].sizes();
                throw ShapeError(os.str());
            }
        }
    }

    // Walk from the bottleneck (stride 32) up to stride 4. Heads fire at
    // strides 16/8/4 producing S3/S2/S1 respectively.
    torch::Tensor running = pyramid[3];
    std::array<torch::Tensor, 3> logits;  // [S1, S2, S3]
    for (int i = 0; i < config_.num_blocks; ++i) {
        const auto& skip = pyramid[2 - i];
        torch::Tensor up = upsample_to(running, skip.size(2), skip.size(3));
        running = blocks[static_cast<size_t>(i)]->forward(torch::cat({up, skip}, 1));
        torch::Tensor s = heads[static_cast<size_t>(i)]->forward(running);
        logits[static_cast<size_t>(2 - i)] = upsample_to(s, out_h, out_w);
    }
    return SegmentationOutputs{logits};
}

torch::Tensor predict_mask(const SegmentationOutputs& outputs) {
    return torch::sigmoid(outputs.logits[0]);
}

}  // namespace segunet

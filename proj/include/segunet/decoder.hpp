#pragma once

#include <array>

#include <torch/torch.h>

#include "segunet/config.hpp"
#include "segunet/rfb.hpp"

namespace segunet {

// Three deep-supervision logit maps, all upsampled to the input resolution.
// logits[0] is S1 from the shallowest (stride-4) decoder stage, logits[2] is
// S3 from the deepest (stride-16) stage.
struct SegmentationOutputs {
    std::array<torch::Tensor, 3> logits;
};

class ConvBNReLUImpl : public torch::nn::Module {
public:
    ConvBNReLUImpl(int in_channels, int out_channels);
    torch::Tensor forward(const torch::Tensor& x);

    ConvBN conv{nullptr};
};
TORCH_MODULE(ConvBNReLU);

// One U-Net decoder block: two 3x3 Conv-BN-ReLU layers after skip fusion.
class DecoderBlockImpl : public torch::nn::Module {
public:
    DecoderBlockImpl(int in_channels, int out_channels);
    torch::Tensor forward(const torch::Tensor& x);

    ConvBNReLU conv1{nullptr};
    ConvBNReLU conv2{nullptr};
};
TORCH_MODULE(DecoderBlock);

// U-shaped decoder over the 64-channel pyramid. The stride-32 level is the
// bottleneck; each of the three blocks fuses the x2-upsampled running feature
// with the next shallower skip by concatenation, and feeds a 1x1 head.
class UDecoderImpl : public torch::nn::Module {
public:
    explicit UDecoderImpl(DecoderConfig config);

    SegmentationOutputs forward(const FeaturePyramid64& pyramid, int64_t out_h, int64_t out_w);

    const DecoderConfig& config() const { return config_; }

    std::vector<DecoderBlock> blocks;
    std::vector<torch::nn::Conv2d> heads;

private:
    DecoderConfig config_;
};
TORCH_MODULE(UDecoder);

// Inference output: sigmoid of the highest-resolution head S1.
torch::Tensor predict_mask(const SegmentationOutputs& outputs);

}  // namespace segunet

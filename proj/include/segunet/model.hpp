#pragma once

#include <torch/torch.h>

#include "segunet/backbone.hpp"
#include "segunet/config.hpp"
#include "segunet/decoder.hpp"
#include "segunet/rfb.hpp"

namespace segunet {

// Full segmentation network: normalized input -> hierarchical encoder (with
// optional per-block adapters) -> four receptive-field blocks compressing each
// stage to a common width -> U-shaped decoder with three supervision heads.
class SegUNetImpl : public torch::nn::Module {
public:
    explicit SegUNetImpl(ModelConfig config);

    // x: (B,3,H,W) float in [0,1]. Normalization happens inside.
    SegmentationOutputs forward(const torch::Tensor& x);

    // Sigmoid of the S1 head; (B,1,H,W) probabilities.
    torch::Tensor predict(const torch::Tensor& x);

    const ModelConfig& config() const { return config_; }

    Encoder encoder{nullptr};
    std::vector<RFB> rfbs;
    UDecoder decoder{nullptr};

private:
    torch::Tensor normalize(const torch::Tensor& x) const;

    ModelConfig config_;
    torch::Tensor norm_mean_;  // (1,3,1,1) buffers
    torch::Tensor norm_std_;
};
TORCH_MODULE(SegUNet);

// Builds a model from config: seeds the global RNG with config.seed, builds
// modules, inserts adapters, and freezes the backbone when requested.
SegUNet build_model(const ModelConfig& config);

}  // namespace segunet

#pragma once

#include <array>

#include <torch/torch.h>

#include "segunet/decoder.hpp"

namespace segunet {

// Scalar tensors so callers can backprop through `total`.
struct LossBreakdown {
    torch::Tensor l_wbce;                   // summed over heads
    torch::Tensor l_wiou;                   // summed over heads
    std::array<torch::Tensor, 3> per_head;  // structure loss per head
    torch::Tensor total;                    // = sum(per_head)
};

// Boundary-emphasizing weights: w = 1 + 5*|avgpool_31(G) - G| with the pool
// divisor restricted to in-bounds pixels, so w == 1 wherever G is locally
// constant (including borders).
torch::Tensor weight_map(const torch::Tensor& g);

// sum(w * bce(logits, g)) / sum(w) per sample, then batch mean. Uses the
// numerically stable logit-space form.
torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& g,
                           const torch::Tensor& w);

// 1 - (inter+1)/(union-inter+1) per sample with w-weighted sums, batch mean.
torch::Tensor weighted_iou(const torch::Tensor& logits, const torch::Tensor& g,
                           const torch::Tensor& w);

struct StructureLossParts {
    torch::Tensor wbce;
    torch::Tensor wiou;
    torch::Tensor total;  // wbce + wiou
};

StructureLossParts structure_loss(const torch::Tensor& logits, const torch::Tensor& g);

// Deep supervision: sum of structure_loss over the three heads.
LossBreakdown total_loss(const SegmentationOutputs& outputs, const torch::Tensor& g);

}  // namespace segunet

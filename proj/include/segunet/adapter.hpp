#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segunet/config.hpp"

namespace segunet {

// Bottleneck adapter: linear down-projection, GeLU, linear up-projection,
// GeLU. Applied residually (x + A(x)) in front of an encoder block. The
// up-projection starts at zero so a freshly inserted adapter is an exact
// identity and the frozen signal path is untouched at step 0.
class AdapterUnitImpl : public torch::nn::Module {
public:
    AdapterUnitImpl(int dim, int bottleneck_dim);

    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear down{nullptr};
    torch::nn::Linear up{nullptr};
};
TORCH_MODULE(AdapterUnit);

// One row of the trainable-parameter report.
struct ParameterRow {
    std::string path;
    int64_t count = 0;
    bool trainable = false;
};

// Rows partition the module's full parameter set; registration order.
std::vector<ParameterRow> trainable_parameter_report(const torch::nn::Module& module);

int64_t parameter_count(const torch::nn::Module& module);
int64_t trainable_parameter_count(const torch::nn::Module& module);

// Share of parameters still receiving gradients; 0 for a parameter-free module.
double trainable_fraction(const torch::nn::Module& module);

}  // namespace segunet

#include "segunet/adapter.hpp"

#include "segunet/nn_init.hpp"

namespace segunet {

AdapterUnitImpl::AdapterUnitImpl(int dim, int bottleneck_dim) {
    down = register_module("down", torch::nn::Linear(dim, bottleneck_dim));
    up = register_module("up", torch::nn::Linear(bottleneck_dim, dim));
    torch::NoGradGuard no_grad;
    trunc_normal_(down->weight, 0.02);
    down->bias.zero_();
    up->weight.zero_();
    up->bias.zero_();
}

torch::Tensor AdapterUnitImpl::forward(const torch::Tensor& x) {
    return torch::gelu(up->forward(torch::gelu(down->forward(x))));
}

std::vector<ParameterRow> trainable_parameter_report(const torch::nn::Module& module) {
    std::vector<ParameterRow> rows;
    for (const auto& p : module.named_parameters()) {
        rows.push_back({p.key(), p.value().numel(), p.value().requires_grad()});
    }
    return rows;
}

int64_t parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

int64_t trainable_parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) {
        if (p.requires_grad()) n += p.numel();
    }
    return n;
}

double trainable_fraction(const torch::nn::Module& module) {
    const int64_t total = parameter_count(module);
    if (total == 0) return 0.0;
    return static_cast<double>(trainable_parameter_count(module)) / static_cast<double>(total);
}

}  // namespace segunet

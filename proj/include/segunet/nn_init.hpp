#pragma once

#include <torch/torch.h>

namespace segunet {

// Truncated normal init on [-2*std, 2*std], drawn through the inverse CDF so a
// fixed RNG seed reproduces weights exactly.
inline void trunc_normal_(torch::Tensor t, double std) {
    torch::NoGradGuard no_grad;
    const double bound = 2.0 * std;
    auto norm_cdf = [](double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
    const double l = norm_cdf(-bound / std);
    const double u = norm_cdf(bound / std);
    t.uniform_(2.0 * l - 1.0, 2.0 * u - 1.0);
    t.erfinv_();
    t.mul_(std * std::sqrt(2.0));
    t.clamp_(-bound, bound);
}

}  // namespace segunet

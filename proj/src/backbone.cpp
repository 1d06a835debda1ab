#include "segunet/backbone.hpp"

#include <cmath>

#include "segunet/nn_init.hpp"

namespace segunet {

namespace F = torch::nn::functional;

PatchEmbedImpl::PatchEmbedImpl(int in_channels, int out_channels, int stride) {
    conv = register_module(
        "conv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(in_channels, out_channels, 7).stride(stride).padding(3)));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
    return conv->forward(x).permute({0, 2, 3, 1});  // (B, h, w, C)
}

TokenAttentionImpl::TokenAttentionImpl(int dim, int heads_in, int window)
    : heads(heads_in), window_size(window) {
    qkv = register_module("qkv", torch::nn::Linear(dim, dim * 3));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor TokenAttentionImpl::forward(const torch::Tensor& x) {
    const int64_t b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
    torch::Tensor t;
    int64_t win_h = 0, win_w = 0;
    if (window_size > 0) {
        win_h = h / window_size;
        win_w = w / window_size;
        t = x.reshape({b, win_h, window_size, win_w, window_size, c})
                .permute({0, 1, 3, 2, 4, 5})
                .reshape({b * win_h * win_w, int64_t(window_size) * window_size, c});
    } else {
        t = x.reshape({b, h * w, c});
    }
    const int64_t n = t.size(0), tokens = t.size(1);
    const int64_t head_dim = c / heads;
    auto qkv_t = qkv->forward(t)
                     .reshape({n, tokens, 3, heads, head_dim})
                     .permute({2, 0, 3, 1, 4});  // (3, n, heads, tokens, head_dim)
    auto q = qkv_t[0], k = qkv_t[1], v = qkv_t[2];
    const double scale = 1.0 / std::sqrt(double(head_dim));
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
    auto out = torch::matmul(attn, v)
                   .transpose(1, 2)
                   .reshape({n, tokens, c});
    out = proj->forward(out);
    if (window_size > 0) {
        out = out.reshape({b, win_h, win_w, window_size, window_size, c})
                  .permute({0, 1, 3, 2, 4, 5})
                  .reshape({b, h, w, c});
    } else {
        out = out.reshape({b, h, w, c});
    }
    return out;
}

TokenMlpImpl::TokenMlpImpl(int dim, double ratio) {
    const int hidden = std::max<int>(1, int(std::lround(dim * ratio)));
    fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor TokenMlpImpl::forward(const torch::Tensor& x) {
    return fc2->forward(torch::gelu(fc1->forward(x)));
}

EncoderBlockImpl::EncoderBlockImpl(int dim, int heads, int window_size, double mlp_ratio) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn = register_module("attn", TokenAttention(dim, heads, window_size));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    mlp = register_module("mlp", TokenMlp(dim, mlp_ratio));
}

void EncoderBlockImpl::attach_adapter(AdapterUnit unit) {
    adapter = register_module("adapter", std::move(unit));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
    auto z = adapter ? x + adapter->forward(x) : x;
    z = z + attn->forward(norm1->forward(z));
    z = z + mlp->forward(norm2->forward(z));
    return z;
}

EncoderStageImpl::EncoderStageImpl(int dim, int depth, int heads, int window_size,
                                   double mlp_ratio) {
    for (int i = 0; i < depth; ++i) {
        blocks.push_back(EncoderBlock(dim, heads, window_size, mlp_ratio));
        register_module("block" + std::to_string(i), blocks.back());
    }
}

torch::Tensor EncoderStageImpl::forward(torch::Tensor x) {
    for (auto& block : blocks) x = block->forward(x);
    return x;
}

StageTransitionImpl::StageTransitionImpl(int in_dim, int out_dim) {
    proj = register_module("proj", torch::nn::Linear(in_dim, out_dim));
}

torch::Tensor StageTransitionImpl::forward(const torch::Tensor& x) {
    const int64_t b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
    auto pooled = x.reshape({b, h / 2, 2, w / 2, 2, c}).amax(4).amax(2);
    return proj->forward(pooled);
}

EncoderImpl::EncoderImpl(EncoderConfig config) : config_(std::move(config)) {
    config_.validate();
    patch_embed = register_module("patch_embed",
                                  PatchEmbed(3, config_.stage_channels[0], config_.patch_stride));
    pos_embed = register_parameter(
        "pos_embed",
        torch::zeros({1, config_.pos_grid, config_.pos_grid, config_.stage_channels[0]}));
    for (int i = 0; i < 4; ++i) {
        stages.push_back(EncoderStage(config_.stage_channels[i], config_.stage_depths[i],
                                      config_.num_heads[i], config_.window_sizes[i],
                                      config_.mlp_ratio));
        register_module("stage" + std::to_string(i), stages.back());
        if (i < 3) {
            transitions.push_back(
                StageTransition(config_.stage_channels[i], config_.stage_channels[i + 1]));
            register_module("transition" + std::to_string(i), transitions.back());
        }
    }
    // Linear and conv projections: truncated normal, biases zero. LayerNorm
    // keeps its ones/zeros defaults.
    torch::NoGradGuard no_grad;
    for (auto& p : named_parameters()) {
        if (p.key() == "pos_embed") {
            trunc_normal_(p.value(), 0.02);
        } else if (p.value().dim() >= 2) {
            trunc_normal_(p.value(), 0.02);
        } else if (p.key().ends_with(".bias")) {
            p.value().zero_();
        }
    }
}

void EncoderImpl::check_input(const torch::Tensor& image) const {
    if (image.dim() != 4 || image.size(1) != 3) {
        throw ShapeError("encode: expected input of shape (B, 3, H, W), got " +
                         std::to_string(image.dim()) + "-d tensor");
    }
    const int64_t h = image.size(2), w = image.size(3);
    const int div = config_.min_divisor();
    if (h % div != 0 || w % div != 0) {
        throw ShapeError("encode: input height and width must be divisible by " +
                         std::to_string(div) + ", got " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    for (int i = 0; i < 4; ++i) {
        const int win = config_.window_sizes[i];
        if (win > 0) {
            const int64_t grid_h = h / config_.stage_stride(i);
            const int64_t grid_w = w / config_.stage_stride(i);
            if (grid_h % win != 0 || grid_w % win != 0) {
                throw ShapeError("encode: window size " + std::to_string(win) +
                                 " does not tile the stage " + std::to_string(i) + " grid " +
                                 std::to_string(grid_h) + "x" + std::to_string(grid_w));
            }
        }
    }
}

FeaturePyramid EncoderImpl::forward(const torch::Tensor& image) {
    check_input(image);
    auto t = patch_embed->forward(image);  // (B, h, w, C1)
    const int64_t h = t.size(1), w = t.size(2);
    auto pos = pos_embed.to(t.dtype());
    if (h != config_.pos_grid || w != config_.pos_grid) {
        pos = F::interpolate(pos.permute({0, 3, 1, 2}),
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false))
                  .permute({0, 2, 3, 1});
    }
    t = t + pos;
    FeaturePyramid pyramid;
    for (int i = 0; i < 4; ++i) {
        t = stages[size_t(i)]->forward(t);
        pyramid[size_t(i)] = t.permute({0, 3, 1, 2}).contiguous();
        if (i < 3) t = transitions[size_t(i)]->forward(t);
    }
    return pyramid;
}

void EncoderImpl::insert_adapters(const AdapterConfig& cfg) {
    cfg.validate(config_);
    if (adapters_inserted_) {
        throw ConfigError("insert_adapters: adapters already inserted");
    }
    for (int i = 0; i < 4; ++i) {
        for (auto& block : stages[size_t(i)]->blocks) {
            block->attach_adapter(AdapterUnit(config_.stage_channels[i], cfg.bottleneck_dim));
        }
    }
    adapters_inserted_ = true;
}

void EncoderImpl::freeze_backbone() {
    for (auto& p : named_parameters()) {
        if (p.key().find("adapter") == std::string::npos) {
            p.value().set_requires_grad(false);
        }
    }
}

Encoder build_encoder(const EncoderConfig& config) {
    return Encoder(config);
}

}  // namespace segunet

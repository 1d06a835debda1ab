#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "segunet/adapter.hpp"
#include "segunet/config.hpp"

namespace segunet {

// The four hierarchical features, level i at stride patch_stride * 2^i
// (4/8/16/32 for the presets), channels per EncoderConfig. Layout (B, C, h, w).
using FeaturePyramid = std::array<torch::Tensor, 4>;

// 7x7 convolution at the patch stride; emits tokens in (B, h, w, C) layout.
class PatchEmbedImpl : public torch::nn::Module {
public:
    PatchEmbedImpl(int in_channels, int out_channels, int stride);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(PatchEmbed);

// Multi-head self attention over (B, h, w, C) tokens; window_size > 0 limits
// attention to non-overlapping window x window tiles.
class TokenAttentionImpl : public torch::nn::Module {
public:
    TokenAttentionImpl(int dim, int heads, int window_size);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear qkv{nullptr};
    torch::nn::Linear proj{nullptr};
    int heads;
    int window_size;
};
TORCH_MODULE(TokenAttention);

class TokenMlpImpl : public torch::nn::Module {
public:
    TokenMlpImpl(int dim, double ratio);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear fc1{nullptr};
    torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(TokenMlp);

// Pre-norm transformer block. When an adapter has been inserted, the block
// computes b(x + A(x)); otherwise plain b(x).
class EncoderBlockImpl : public torch::nn::Module {
public:
    EncoderBlockImpl(int dim, int heads, int window_size, double mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x);

    void attach_adapter(AdapterUnit unit);

    torch::nn::LayerNorm norm1{nullptr};
    torch::nn::LayerNorm norm2{nullptr};
    TokenAttention attn{nullptr};
    TokenMlp mlp{nullptr};
    AdapterUnit adapter{nullptr};  // null until insert_adapters
};
TORCH_MODULE(EncoderBlock);

class EncoderStageImpl : public torch::nn::Module {
public:
    EncoderStageImpl(int dim, int depth, int heads, int window_size, double mlp_ratio);
    torch::Tensor forward(torch::Tensor x);

    std::vector<EncoderBlock> blocks;
};
TORCH_MODULE(EncoderStage);

// 2x2 max pooling on tokens followed by a linear channel projection.
class StageTransitionImpl : public torch::nn::Module {
public:
    StageTransitionImpl(int in_dim, int out_dim);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(StageTransition);

// Hierarchical four-stage encoder. Construction is deterministic under
// torch::manual_seed; inference on a frozen encoder is safe to run
// concurrently, training mutation is single-writer.
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(EncoderConfig config);

    // Input (B, 3, H, W) with H and W divisible by config.min_divisor().
    // Shape violations throw ShapeError before any computation.
    FeaturePyramid forward(const torch::Tensor& image);

    // Inserts a fresh residual adapter in front of every block. Count of
    // adapters equals count of blocks.
    void insert_adapters(const AdapterConfig& cfg);
    // Excludes every original encoder parameter from gradient updates;
    // adapter parameters stay trainable.
    void freeze_backbone();

    bool has_adapters() const { return adapters_inserted_; }
    const EncoderConfig& config() const { return config_; }

    PatchEmbed patch_embed{nullptr};
    torch::Tensor pos_embed;
    std::vector<EncoderStage> stages;
    std::vector<StageTransition> transitions;

private:
    void check_input(const torch::Tensor& image) const;

    EncoderConfig config_;
    bool adapters_inserted_ = false;
};
TORCH_MODULE(Encoder);

Encoder build_encoder(const EncoderConfig& config);

}  // namespace segunet

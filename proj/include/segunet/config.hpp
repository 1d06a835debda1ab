#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "segunet/common.hpp"

namespace segunet {

// Hierarchical encoder layout. Presets use a stride-4 patch embedding, which
// together with the three 2x2 stage transitions gives pyramid strides
// 4/8/16/32 and requires input sizes divisible by patch_stride * 8.
struct EncoderConfig {
    int patch_stride = 4;
    std::array<int, 4> stage_channels{32, 64, 128, 256};
    std::array<int, 4> stage_depths{1, 1, 2, 1};
    std::array<int, 4> num_heads{1, 2, 4, 8};
    std::array<int, 4> window_sizes{8, 4, 2, 0};  // 0 = global attention
    double mlp_ratio = 4.0;
    int pos_grid = 16;  // base grid of the learned positional embedding

    // Smallest divisor an input height/width must satisfy.
    int min_divisor() const { return patch_stride * 8; }
    // Spatial stride of pyramid level i (0-based).
    int stage_stride(int i) const { return patch_stride << i; }
    int total_blocks() const;

    void validate() const;  // throws ConfigError naming the offending field
};

enum class PresetName { Tiny, Small, BasePlus, Large, Desk };

struct BackbonePreset {
    PresetName name;
    EncoderConfig config;
};

BackbonePreset backbone_preset(PresetName name);
// Accepts "tiny", "small", "baseplus", "large", "desk" (case-insensitive).
PresetName preset_name_from_string(const std::string& s);
std::string to_string(PresetName name);

struct AdapterConfig {
    int bottleneck_dim = 32;

    void validate(const EncoderConfig& encoder) const;
};

// Default bottleneck width for a preset: 32 for the full-scale backbones,
// 16 for DESK whose narrowest stage is only 32 channels wide.
int default_bottleneck_dim(PresetName name);

struct RFBConfig {
    int in_channels = 0;
    int out_channels = 64;
    std::array<int, 4> branch_dilations{1, 3, 5, 7};

    void validate() const;
};

struct DecoderConfig {
    int channels = 64;
    int num_blocks = 3;            // fixed
    std::string fusion = "concat";  // fixed
    std::string upsample = "bilinear";  // fixed

    void validate() const;
};

// Input standardization applied inside the model, recorded in checkpoints so
// that training and inference cannot drift apart.
struct Normalization {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct ModelConfig {
    std::string preset = "desk";
    EncoderConfig encoder = segunet::backbone_preset(PresetName::Desk).config;
    AdapterConfig adapter{default_bottleneck_dim(PresetName::Desk)};
    int rfb_out_channels = 64;
    DecoderConfig decoder;
    bool freeze_backbone = true;
    Normalization normalization;
    uint64_t seed = 42;

    void validate() const;

    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 5;        // desk default; full-scale runs use 50 or 20
    int batch_size = 4;    // desk default; full-scale runs use 12
    double eta_min = 0.0;
    std::optional<double> grad_clip;
    std::string anneal = "epoch";  // "epoch" or "step" cosine granularity
    int eval_every = 1;  // epochs between metric evaluations; <=0 = final only
    uint64_t seed = 42;

    void validate() const;

    static TrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct DataConfig {
    int image_size = 352;
    std::vector<double> multiscale{1.0};
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;

    void validate() const;

    static DataConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Fully materialized run configuration (the unit the CLI snapshots).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    uint64_t seed = 42;

    void validate() const;

    // Accepts nested objects or dotted keys ("model.adapter.bottleneck_dim").
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Expands top-level dotted keys into nested objects; nested input is returned
// unchanged. Later keys overwrite earlier ones.
nlohmann::json expand_dotted_keys(const nlohmann::json& j);

}  // namespace segunet

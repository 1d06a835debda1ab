#include "segunet/config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <nlohmann/json.hpp>

namespace segunet {

using nlohmann::json;

namespace {

template <typename T, size_t N>
std::array<T, N> array_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != N) {
        throw ConfigError(field + ": expected an array of " + std::to_string(N) + " values");
    }
    std::array<T, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = j[i].get<T>();
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

int EncoderConfig::total_blocks() const {
    int n = 0;
    for (int d : stage_depths) n += d;
    return n;
}

void EncoderConfig::validate() const {
    if (patch_stride < 1) {
        throw ConfigError("patch_stride: must be >= 1, got " + std::to_string(patch_stride));
    }
    for (int i = 0; i < 4; ++i) {
        if (stage_channels[i] <= 0) {
            throw ConfigError("stage_channels: must be positive, got " +
                              std::to_string(stage_channels[i]) + " at stage " + std::to_string(i));
        }
        if (i > 0 && stage_channels[i] <= stage_channels[i - 1]) {
            throw ConfigError("stage_channels: must be strictly increasing, got " +
                              std::to_string(stage_channels[i - 1]) + " -> " +
                              std::to_string(stage_channels[i]) + " at stage " + std::to_string(i));
        }
        if (stage_depths[i] < 1) {
            throw ConfigError("stage_depths: every stage depth must be >= 1, got " +
                              std::to_string(stage_depths[i]) + " at stage " + std::to_string(i));
        }
        if (num_heads[i] < 1 || stage_channels[i] % num_heads[i] != 0) {
            throw ConfigError("num_heads: heads must divide stage channels, got " +
                              std::to_string(num_heads[i]) + " heads for " +
                              std::to_string(stage_channels[i]) + " channels at stage " +
                              std::to_string(i));
        }
        if (window_sizes[i] < 0) {
            throw ConfigError("window_sizes: must be >= 0, got " +
                              std::to_string(window_sizes[i]) + " at stage " + std::to_string(i));
        }
    }
    if (mlp_ratio <= 0.0) {
        throw ConfigError("mlp_ratio: must be positive, got " + std::to_string(mlp_ratio));
    }
    if (pos_grid < 1) {
        throw ConfigError("pos_grid: must be >= 1, got " + std::to_string(pos_grid));
    }
}

BackbonePreset backbone_preset(PresetName name) {
    EncoderConfig c;
    c.patch_stride = 4;
    c.window_sizes = {8, 4, 2, 0};
    c.mlp_ratio = 4.0;
    c.pos_grid = 88;  // 352 / 4
    switch (name) {
        case PresetName::Tiny:
            c.stage_channels = {96, 192, 384, 768};
            c.stage_depths = {1, 2, 7, 2};
            c.num_heads = {1, 2, 4, 8};
            break;
        case PresetName::Small:
            c.stage_channels = {96, 192, 384, 768};
            c.stage_depths = {1, 2, 11, 2};
            c.num_heads = {1, 2, 4, 8};
            break;
        case PresetName::BasePlus:
            c.stage_channels = {112, 224, 448, 896};
            c.stage_depths = {2, 3, 16, 3};
            c.num_heads = {2, 4, 8, 16};
            break;
        case PresetName::Large:
            c.stage_channels = {144, 288, 576, 1152};
            c.stage_depths = {2, 6, 36, 4};
            c.num_heads = {2, 4, 8, 16};
            break;
        case PresetName::Desk:
            c.stage_channels = {32, 64, 128, 256};
            c.stage_depths = {1, 1, 2, 1};
            c.num_heads = {1, 2, 4, 8};
            c.pos_grid = 16;  // 64 / 4, the desk-scale default input
            break;
    }
    return BackbonePreset{name, c};
}

PresetName preset_name_from_string(const std::string& s) {
    const std::string k = lower(s);
    if (k == "tiny") return PresetName::Tiny;
    if (k == "small") return PresetName::Small;
    if (k == "baseplus" || k == "base_plus" || k == "base+") return PresetName::BasePlus;
    if (k == "large") return PresetName::Large;
    if (k == "desk") return PresetName::Desk;
    throw ConfigError("preset: unknown preset name \"" + s +
                      "\" (expected tiny, small, baseplus, large or desk)");
}

std::string to_string(PresetName name) {
    switch (name) {
        case PresetName::Tiny: return "tiny";
        case PresetName::Small: return "small";
        case PresetName::BasePlus: return "baseplus";
        case PresetName::Large: return "large";
        case PresetName::Desk: return "desk";
    }
    return "?";
}

void AdapterConfig::validate(const EncoderConfig& encoder) const {
    if (bottleneck_dim < 1) {
        throw ConfigError("adapter.bottleneck_dim: must be >= 1, got " +
                          std::to_string(bottleneck_dim));
    }
    const int min_ch = *std::min_element(encoder.stage_channels.begin(),
                                         encoder.stage_channels.end());
    if (bottleneck_dim >= min_ch) {
        throw ConfigError("adapter.bottleneck_dim: must be smaller than the smallest stage "
                          "channel count (" + std::to_string(min_ch) + "), got " +
                          std::to_string(bottleneck_dim));
    }
}

void RFBConfig::validate() const {
    if (in_channels <= 0) {
        throw ConfigError("rfb.in_channels: must be positive, got " + std::to_string(in_channels));
    }
    if (out_channels <= 0) {
        throw ConfigError("rfb.out_channels: must be positive, got " + std::to_string(out_channels));
    }
    for (int d : branch_dilations) {
        if (d < 1) {
            throw ConfigError("rfb.branch_dilations: must be >= 1, got " + std::to_string(d));
        }
    }
}

void DecoderConfig::validate() const {
    if (channels <= 0) {
        throw ConfigError("decoder.channels: must be positive, got " + std::to_string(channels));
    }
    if (num_blocks != 3) {
        throw ConfigError("decoder.num_blocks: fixed at 3, got " + std::to_string(num_blocks));
    }
    if (fusion != "concat") {
        throw ConfigError("decoder.fusion: only \"concat\" is supported, got \"" + fusion + "\"");
    }
    if (upsample != "bilinear") {
        throw ConfigError("decoder.upsample: only \"bilinear\" is supported, got \"" + upsample +
                          "\"");
    }
}

void ModelConfig::validate() const {
    preset_name_from_string(preset);
    encoder.validate();
    adapter.validate(encoder);
    if (rfb_out_channels <= 0) {
        throw ConfigError("rfb.out_channels: must be positive, got " +
                          std::to_string(rfb_out_channels));
    }
    decoder.validate();
    if (decoder.channels != rfb_out_channels) {
        throw ConfigError("decoder.channels: must equal rfb.out_channels for skip fusion (" +
                          std::to_string(decoder.channels) + " vs " +
                          std::to_string(rfb_out_channels) + ")");
    }
}

int default_bottleneck_dim(PresetName name) {
    return name == PresetName::Desk ? 16 : 32;
}

ModelConfig ModelConfig::from_json(const json& jin) {
    const json j = expand_dotted_keys(jin);
    ModelConfig cfg;
    if (j.contains("preset")) cfg.preset = j["preset"].get<std::string>();
    const PresetName preset_name = preset_name_from_string(cfg.preset);
    cfg.encoder = backbone_preset(preset_name).config;
    cfg.adapter.bottleneck_dim = default_bottleneck_dim(preset_name);
    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        if (e.contains("patch_stride")) cfg.encoder.patch_stride = e["patch_stride"].get<int>();
        if (e.contains("stage_channels"))
            cfg.encoder.stage_channels = array_from_json<int, 4>(e["stage_channels"], "encoder.stage_channels");
        if (e.contains("stage_depths"))
            cfg.encoder.stage_depths = array_from_json<int, 4>(e["stage_depths"], "encoder.stage_depths");
        if (e.contains("num_heads"))
            cfg.encoder.num_heads = array_from_json<int, 4>(e["num_heads"], "encoder.num_heads");
        if (e.contains("window_sizes"))
            cfg.encoder.window_sizes = array_from_json<int, 4>(e["window_sizes"], "encoder.window_sizes");
        if (e.contains("mlp_ratio")) cfg.encoder.mlp_ratio = e["mlp_ratio"].get<double>();
        if (e.contains("pos_grid")) cfg.encoder.pos_grid = e["pos_grid"].get<int>();
    }
    if (j.contains("adapter") && j["adapter"].contains("bottleneck_dim")) {
        cfg.adapter.bottleneck_dim = j["adapter"]["bottleneck_dim"].get<int>();
    }
    if (j.contains("rfb") && j["rfb"].contains("out_channels")) {
        cfg.rfb_out_channels = j["rfb"]["out_channels"].get<int>();
        cfg.decoder.channels = cfg.rfb_out_channels;
    }
    if (j.contains("decoder")) {
        const json& d = j["decoder"];
        if (d.contains("channels")) cfg.decoder.channels = d["channels"].get<int>();
        if (d.contains("num_blocks")) cfg.decoder.num_blocks = d["num_blocks"].get<int>();
        if (d.contains("fusion")) cfg.decoder.fusion = d["fusion"].get<std::string>();
        if (d.contains("upsample")) cfg.decoder.upsample = d["upsample"].get<std::string>();
    }
    if (j.contains("freeze_backbone")) cfg.freeze_backbone = j["freeze_backbone"].get<bool>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    return cfg;
}

json ModelConfig::to_json() const {
    json j;
    j["preset"] = preset;
    j["encoder"] = {
        {"patch_stride", encoder.patch_stride},
        {"stage_channels", encoder.stage_channels},
        {"stage_depths", encoder.stage_depths},
        {"num_heads", encoder.num_heads},
        {"window_sizes", encoder.window_sizes},
        {"mlp_ratio", encoder.mlp_ratio},
        {"pos_grid", encoder.pos_grid},
    };
    j["adapter"] = {{"bottleneck_dim", adapter.bottleneck_dim}};
    j["rfb"] = {{"out_channels", rfb_out_channels}};
    j["decoder"] = {
        {"channels", decoder.channels},
        {"num_blocks", decoder.num_blocks},
        {"fusion", decoder.fusion},
        {"upsample", decoder.upsample},
    };
    j["freeze_backbone"] = freeze_backbone;
    j["normalization"] = {{"mean", normalization.mean}, {"std", normalization.std}};
    j["seed"] = seed;
    return j;
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train.lr: must be positive, got " + std::to_string(lr));
    if (weight_decay < 0.0) {
        throw ConfigError("train.weight_decay: must be >= 0, got " + std::to_string(weight_decay));
    }
    if (epochs < 1) throw ConfigError("train.epochs: must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) {
        throw ConfigError("train.batch_size: must be >= 1, got " + std::to_string(batch_size));
    }
    if (eta_min < 0.0 || eta_min > lr) {
        throw ConfigError("train.eta_min: must lie in [0, lr], got " + std::to_string(eta_min));
    }
    if (grad_clip && *grad_clip <= 0.0) {
        throw ConfigError("train.grad_clip: must be positive when set, got " +
                          std::to_string(*grad_clip));
    }
    if (anneal != "epoch" && anneal != "step") {
        throw ConfigError("train.anneal: expected \"epoch\" or \"step\", got \"" + anneal + "\"");
    }
}

TrainConfig TrainConfig::from_json(const json& jin) {
    const json j = expand_dotted_keys(jin);
    TrainConfig cfg;
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("eta_min")) cfg.eta_min = j["eta_min"].get<double>();
    if (j.contains("grad_clip") && !j["grad_clip"].is_null()) {
        cfg.grad_clip = j["grad_clip"].get<double>();
    }
    if (j.contains("anneal")) cfg.anneal = j["anneal"].get<std::string>();
    if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    return cfg;
}

json TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["eta_min"] = eta_min;
    j["grad_clip"] = grad_clip ? json(*grad_clip) : json(nullptr);
    j["anneal"] = anneal;
    j["eval_every"] = eval_every;
    j["seed"] = seed;
    return j;
}

void DataConfig::validate() const {
    if (image_size < 32 || image_size % 32 != 0) {
        throw ConfigError("data.image_size: must be a positive multiple of 32, got " +
                          std::to_string(image_size));
    }
    if (multiscale.empty()) throw ConfigError("data.multiscale: must not be empty");
    for (double s : multiscale) {
        if (s <= 0.0) {
            throw ConfigError("data.multiscale: scales must be positive, got " + std::to_string(s));
        }
    }
    if (hflip_prob < 0.0 || hflip_prob > 1.0) {
        throw ConfigError("data.hflip_prob: must lie in [0, 1], got " + std::to_string(hflip_prob));
    }
    if (vflip_prob < 0.0 || vflip_prob > 1.0) {
        throw ConfigError("data.vflip_prob: must lie in [0, 1], got " + std::to_string(vflip_prob));
    }
}

DataConfig DataConfig::from_json(const json& jin) {
    const json j = expand_dotted_keys(jin);
    DataConfig cfg;
    if (j.contains("image_size")) cfg.image_size = j["image_size"].get<int>();
    if (j.contains("multiscale")) cfg.multiscale = j["multiscale"].get<std::vector<double>>();
    if (j.contains("hflip_prob")) cfg.hflip_prob = j["hflip_prob"].get<double>();
    if (j.contains("vflip_prob")) cfg.vflip_prob = j["vflip_prob"].get<double>();
    return cfg;
}

json DataConfig::to_json() const {
    return json{{"image_size", image_size},
                {"multiscale", multiscale},
                {"hflip_prob", hflip_prob},
                {"vflip_prob", vflip_prob}};
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    data.validate();
}

RunConfig RunConfig::from_json(const json& jin) {
    const json j = expand_dotted_keys(jin);
    RunConfig cfg;
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    cfg.model = j.contains("model") ? ModelConfig::from_json(j["model"]) : ModelConfig{};
    cfg.train = j.contains("train") ? TrainConfig::from_json(j["train"]) : TrainConfig{};
    cfg.data = j.contains("data") ? DataConfig::from_json(j["data"]) : DataConfig{};
    // A top-level seed propagates unless the section pinned its own.
    if (j.contains("seed")) {
        if (!(j.contains("model") && expand_dotted_keys(j["model"]).contains("seed"))) {
            cfg.model.seed = cfg.seed;
        }
        if (!(j.contains("train") && expand_dotted_keys(j["train"]).contains("seed"))) {
            cfg.train.seed = cfg.seed;
        }
    } else {
        cfg.seed = cfg.model.seed;
    }
    return cfg;
}

json RunConfig::to_json() const {
    return json{{"seed", seed},
                {"model", model.to_json()},
                {"train", train.to_json()},
                {"data", data.to_json()}};
}

json expand_dotted_keys(const json& j) {
    if (!j.is_object()) return j;
    json out = json::object();
    for (const auto& [key, value] : j.items()) {
        json expanded = expand_dotted_keys(value);
        if (key.find('.') == std::string::npos) {
            if (out.contains(key) && out[key].is_object() && expanded.is_object()) {
                out[key].update(expanded, /*merge_objects=*/true);
            } else {
                out[key] = expanded;
            }
            continue;
        }
        // Walk "a.b.c" down, creating objects as needed.
        std::vector<std::string> parts;
        std::stringstream ss(key);
        std::string part;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        json* node = &out;
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) {
                (*node)[parts[i]] = json::object();
            }
            node = &(*node)[parts[i]];
        }
        if (node->contains(parts.back()) && (*node)[parts.back()].is_object() &&
            expanded.is_object()) {
            (*node)[parts.back()].update(expanded, /*merge_objects=*/true);
        } else {
            (*node)[parts.back()] = expanded;
        }
    }
    return out;
}

}  // namespace segunet

#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "segunet/config.hpp"
#include "segunet/rng.hpp"

namespace segunet::data {

struct DatasetSpec {
    std::string root;
    std::string image_dir = "images";
    std::string mask_dir = "masks";
    std::string split;
    int image_size = 352;
};

// image: (3,H,W) float32 in [0,1]; mask: (1,H,W) float32 in {0,1}.
struct Sample {
    torch::Tensor image;
    torch::Tensor mask;
    std::string stem;
};

// Stem-matched image/mask folder pair in deterministic sorted-stem order.
// Orphan stems or unreadable directories raise DataError listing the culprits.
class FolderDataset {
public:
    explicit FolderDataset(DatasetSpec spec);

    size_t size() const { return stems_.size(); }
    const std::vector<std::string>& stems() const { return stems_; }
    const DatasetSpec& spec() const { return spec_; }

    Sample get(size_t index) const;  // loads from disk; binarizes mask at >127

private:
    DatasetSpec spec_;
    std::vector<std::string> stems_;
    std::vector<std::string> image_paths_;
    std::vector<std::string> mask_paths_;
};

// Image IO shared with metrics/engine. Grayscale values scaled to [0,1].
torch::Tensor read_image_rgb01(const std::string& path);   // (3,H,W)
torch::Tensor read_gray01(const std::string& path);        // (H,W)
torch::Tensor read_mask_binary(const std::string& path);   // (H,W), {0,1} at >127
void write_gray_png(const std::string& path, const torch::Tensor& gray01);  // round(255*v)

// Random horizontal/vertical flips with a shared decision for image and mask.
Sample augment(const Sample& s, const DataConfig& cfg, Rng& rng);

// Bilinear image, nearest mask (binarity preserved); size must be divisible
// by the model's spatial contract (32 for the stride-4 presets).
Sample resize_pair(const Sample& s, int size, int divisor = 32);

// Multi-scale rule: 32 * round(size * scale / 32).
int scaled_size(int base_size, double scale);

struct SyntheticShapesConfig {
    int n_samples = 16;
    int canvas = 64;
    int min_shapes = 1;
    int max_shapes = 3;
    double contrast = 0.35;  // |foreground - background| intensity gap
    double noise_std = 0.03;
    uint64_t seed = 7;
};

// Writes <out_dir>/images/*.png and <out_dir>/masks/*.png. Masks are exact
// shape rasterizations; foreground fraction enforced in (0.01, 0.6) by
// rejection sampling. Deterministic under seed.
DatasetSpec generate_synthetic(const SyntheticShapesConfig& cfg, const std::string& out_dir);

}  // namespace segunet::data

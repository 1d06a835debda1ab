#include "segunet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "segunet/common.hpp"

namespace fs = std::filesystem;

namespace segunet::data {

namespace {

bool has_image_ext(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
        return static_cast<char>(std::tolower(c));
    });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::map<std::string, std::string> scan_stems(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::map<std::string, std::string> stems;  // sorted by construction
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && has_image_ext(entry.path())) {
            stems[entry.path().stem().string()] = entry.path().string();
        }
    }
    return stems;
}

}  // namespace

FolderDataset::FolderDataset(DatasetSpec spec) : spec_(std::move(spec)) {
    const std::string image_dir = (fs::path(spec_.root) / spec_.image_dir).string();
    const std::string mask_dir = (fs::path(spec_.root) / spec_.mask_dir).string();
    auto images = scan_stems(image_dir);
    auto masks = scan_stems(mask_dir);

    std::vector<std::string> orphans;
    for (const auto& [stem, path] : images) {
        if (!masks.count(stem)) orphans.push_back("image without mask: " + stem);
    }
    for (const auto& [stem, path] : masks) {
        if (!images.count(stem)) orphans.push_back("mask without image: " + stem);
    }
    if (!orphans.empty()) {
        std::ostringstream os;
        os << "orphan stems in " << spec_.root << ":";
        for (const auto& o : orphans) os << " [" << o << "]";
        throw DataError(os.str());
    }
    if (images.empty()) throw DataError("no image/mask pairs found under " + spec_.root);
    for (const auto& [stem, path] : images) {
        stems_.push_back(stem);
        image_paths_.push_back(path);
        mask_paths_.push_back(masks.at(stem));
    }
}

Sample FolderDataset::get(size_t index) const {
    if (index >= stems_.size()) {
        throw DataError("sample index " + std::to_string(index) + " out of range");
    }
    Sample s;
    s.stem = stems_[index];
    s.image = read_image_rgb01(image_paths_[index]);
    s.mask = read_mask_binary(mask_paths_[index]).unsqueeze(0);
    if (s.image.size(1) != s.mask.size(1) || s.image.size(2) != s.mask.size(2)) {
        std::ostringstream os;
        os << "image/mask size mismatch for stem '" << s.stem << "': image "
           << s.image.sizes() << " vs mask " << s.mask.sizes();
        throw DataError(os.str());
    }
    return s;
}

torch::Tensor read_image_rgb01(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("unreadable image file: " + path);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    torch::Tensor t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
    return t.permute({2, 0, 1}).to(torch::kFloat32).div(255).clone();
}

torch::Tensor read_gray01(const std::string& path) {
    cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw DataError("unreadable image file: " + path);
    torch::Tensor t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8);
    return t.to(torch::kFloat32).div(255).clone();
}

torch::Tensor read_mask_binary(const std::string& path) {
    cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw DataError("unreadable mask file: " + path);
    torch::Tensor t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8);
    return (t > 127).to(torch::kFloat32).clone();
}

void write_gray_png(const std::string& path, const torch::Tensor& gray01) {
    torch::Tensor t = gray01.detach().to(torch::kFloat32).cpu();
    if (t.dim() == 3 && t.size(0) == 1) t = t.squeeze(0);
    if (t.dim() != 2) {
        std::ostringstream os;
        os << "write_gray_png expects (H,W) or (1,H,W), got " << gray01.sizes();
        throw ShapeError(os.str());
    }
    torch::Tensor bytes = (t * 255).round().clamp(0, 255).to(torch::kUInt8).contiguous();
    cv::Mat m(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1,
              bytes.data_ptr());
    if (!cv::imwrite(path, m)) throw DataError("cannot write image file: " + path);
}

Sample augment(const Sample& s, const DataConfig& cfg, Rng& rng) {
    Sample out = s;
    if (rng.bernoulli(cfg.hflip_prob)) {
        out.image = torch::flip(out.image, {2});
        out.mask = torch::flip(out.mask, {2});
    }
    if (rng.bernoulli(cfg.vflip_prob)) {
        out.image = torch::flip(out.image, {1});
        out.mask = torch::flip(out.mask, {1});
    }
    return out;
}

Sample resize_pair(const Sample& s, int size, int divisor) {
    if (size <= 0 || size % divisor != 0) {
        throw ConfigError("data.image_size: must be a positive multiple of " +
                          std::to_string(divisor) + ", got " + std::to_string(size));
    }
    if (s.image.size(1) == size && s.image.size(2) == size) return s;
    namespace F = torch::nn::functional;
    Sample out;
    out.stem = s.stem;
    out.image = F::interpolate(s.image.unsqueeze(0),
                               F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{size, size})
                                   .mode(torch::kBilinear)
                                   .align_corners(false))
                    .squeeze(0);
    out.mask = F::interpolate(s.mask.unsqueeze(0), F::InterpolateFuncOptions()
                                                       .size(std::vector<int64_t>{size, size})
                                                       .mode(torch::kNearest))
                   .squeeze(0);
    return out;
}

int scaled_size(int base_size, double scale) {
    return 32 * static_cast<int>(std::lround(base_size * scale / 32.0));
}

namespace {

// Exact rasterizers shared by image and mask so the mask is the true shape
// support. Coordinates are doubles in canvas units.
struct Shape {
    enum class Kind { Disc, Rect } kind;
    double cx, cy, a, b;  // disc: radius in a; rect: half extents a, b
};

bool inside(const Shape& s, int y, int x) {
    const double dx = x + 0.5 - s.cx;
    const double dy = y + 0.5 - s.cy;
    if (s.kind == Shape::Kind::Disc) return dx * dx + dy * dy <= s.a * s.a;
    return std::abs(dx) <= s.a && std::abs(dy) <= s.b;
}

}  // namespace

DatasetSpec generate_synthetic(const SyntheticShapesConfig& cfg, const std::string& out_dir) {
    if (cfg.n_samples <= 0) throw ConfigError("synth.n_samples: must be positive");
    if (cfg.canvas < 16) throw ConfigError("synth.canvas: must be >= 16");
    if (cfg.contrast <= 0 || cfg.contrast > 1) {
        throw ConfigError("synth.contrast: must lie in (0,1]");
    }
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks")) {
        throw DataError("cannot create synthetic dataset directories under " + out_dir);
    }

    Rng rng(cfg.seed);
    const int n = cfg.canvas;
    for (int i = 0; i < cfg.n_samples; ++i) {
        std::vector<uint8_t> mask;
        std::vector<Shape> shapes;
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 100) {
                throw DataError("synthetic generator could not hit the foreground-fraction "
                                "window (0.01, 0.6); relax shape sizes");
            }
            shapes.clear();
            const int count = static_cast<int>(rng.uniform_int(cfg.min_shapes, cfg.max_shapes));
            for (int k = 0; k < count; ++k) {
                Shape s;
                s.kind = rng.bernoulli(0.5) ? Shape::Kind::Disc : Shape::Kind::Rect;
                s.cx = rng.uniform(0.2 * n, 0.8 * n);
                s.cy = rng.uniform(0.2 * n, 0.8 * n);
                s.a = rng.uniform(0.06 * n, 0.22 * n);
                s.b = rng.uniform(0.06 * n, 0.22 * n);
                shapes.push_back(s);
            }
            mask.assign(static_cast<size_t>(n) * n, 0);
            int64_t fg = 0;
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    for (const auto& s : shapes) {
                        if (inside(s, y, x)) {
                            mask[static_cast<size_t>(y) * n + x] = 1;
                            ++fg;
                            break;
                        }
                    }
                }
            }
            const double fraction = static_cast<double>(fg) / (n * n);
            if (fraction > 0.01 && fraction < 0.6) break;
        }

        // Low-contrast scene: foreground differs from background by `contrast`
        // in intensity, plus mild per-channel tinting and gaussian noise.
        const double bg = rng.uniform(0.25, 0.75);
        const double fg_val = bg + (rng.bernoulli(0.5) ? cfg.contrast : -cfg.contrast);
        std::array<double, 3> tint{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                   rng.uniform(-0.05, 0.05)};
        cv::Mat image(n, n, CV_8UC3);
        cv::Mat mask_img(n, n, CV_8UC1);
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const bool is_fg = mask[static_cast<size_t>(y) * n + x] != 0;
                mask_img.at<uint8_t>(y, x) = is_fg ? 255 : 0;
                const double base = is_fg ? fg_val : bg;
                for (int c = 0; c < 3; ++c) {
                    // Box-Muller keeps the noise stream portable.
                    const double u1 = std::max(rng.uniform(), 1e-12);
                    const double u2 = rng.uniform();
                    const double gauss =
                        std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
                    double v = base + tint[static_cast<size_t>(c)] + cfg.noise_std * gauss;
                    v = std::min(1.0, std::max(0.0, v));
                    // OpenCV channel order is BGR on write; tint symmetric so
                    // ordering only affects the tint channel assignment.
                    image.at<cv::Vec3b>(y, x)[c] = static_cast<uint8_t>(std::lround(255 * v));
                }
            }
        }
        std::ostringstream stem;
        stem << "shape_" << std::setw(4) << std::setfill('0') << i;
        if (!cv::imwrite((root / "images" / (stem.str() + ".png")).string(), image) ||
            !cv::imwrite((root / "masks" / (stem.str() + ".png")).string(), mask_img)) {
            throw DataError("cannot write synthetic sample " + stem.str());
        }
    }

    DatasetSpec spec;
    spec.root = out_dir;
    spec.image_size = cfg.canvas;
    return spec;
}

}  // namespace segunet::data

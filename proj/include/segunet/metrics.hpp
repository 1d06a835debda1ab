#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace segunet::metrics {

// All per-sample metrics take (H,W) tensors: p in [0,1] (range-checked),
// g binary {0,1}. Conventions follow the measures' original published
// evaluation code; degenerate cases are documented per function.

double mae(const torch::Tensor& p, const torch::Tensor& g);

// Threshold p at `threshold` (inclusive). Empty-union => 1 by convention.
double mdice(const torch::Tensor& p, const torch::Tensor& g, double threshold = 0.5);
double miou(const torch::Tensor& p, const torch::Tensor& g, double threshold = 0.5);

// Structure measure (alpha-weighted object/region similarity). Degenerate
// conventions: g all-zero -> 1 - mean(p); g all-one -> mean(p); clamped at 0.
double s_measure(const torch::Tensor& p, const torch::Tensor& g, double alpha = 0.5);

// Enhanced-alignment measure averaged over the 256 binarization thresholds
// t/255, t = 0..255. Degenerate g: all-zero -> 1 - FM; all-one -> FM.
double e_measure_mean(const torch::Tensor& p, const torch::Tensor& g);

// F with beta^2 = 0.3 at threshold min(2*mean(p), 1). Empty intersection -> 0.
double f_adaptive(const torch::Tensor& p, const torch::Tensor& g);

// Dependency/location-weighted F (beta = 1). Empty g -> 0 by convention.
double f_weighted(const torch::Tensor& p, const torch::Tensor& g);

// Fixed-threshold F with beta^2 = 0.3. Empty intersection -> 0.
double f_beta(const torch::Tensor& p, const torch::Tensor& g, double threshold = 0.5);

struct MetricSet {
    bool s = true;
    bool f_adaptive = true;
    bool f_weighted = true;
    bool e_mean = true;
    bool mae = true;
    bool mdice = true;
    bool miou = true;
    bool iou = true;
    bool f_beta = true;

    static MetricSet all() { return MetricSet{}; }
};

struct MetricReport {
    double s_alpha = 0;
    double f_adaptive = 0;
    double f_weighted = 0;
    double e_phi_mean = 0;
    double mae = 0;
    double mdice = 0;
    double miou = 0;
    double iou = 0;
    double f_beta = 0;
    int n_samples = 0;
};

// Unweighted running mean over samples.
class MetricAccumulator {
public:
    explicit MetricAccumulator(MetricSet set = MetricSet::all()) : set_(set) {}

    void add(const torch::Tensor& p, const torch::Tensor& g);
    MetricReport report() const;

private:
    MetricSet set_;
    MetricReport sums_;
    int n_ = 0;
};

// Evaluates stem-matched prediction/ground-truth folders. Orphan stems abort
// with a DataError listing them unless allow_missing, in which case only the
// intersection is scored.
MetricReport evaluate_folder(const std::string& pred_dir, const std::string& gt_dir,
                             const MetricSet& set = MetricSet::all(),
                             bool allow_missing = false);

// CSV columns exactly: dataset,n,S,Fadp,Fw,Em,MAE,mDice,mIoU,IoU,F
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, MetricReport>>& rows);
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& dataset, const MetricReport& r);

}  // namespace segunet::metrics

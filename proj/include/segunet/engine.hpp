#pragma once

#include <string>
#include <vector>

#include "segunet/config.hpp"
#include "segunet/data.hpp"
#include "segunet/metrics.hpp"
#include "segunet/model.hpp"

namespace segunet::engine {

// eta_min + 0.5*(base - eta_min)*(1 + cos(pi*step/total)).
double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double eta_min);

struct StepLog {
    int64_t step = 0;
    double lr = 0;
    double l_wbce = 0;
    double l_wiou = 0;
    double total = 0;
};

struct EpochLog {
    int epoch = 0;
    int64_t step = 0;  // global step count at end of epoch
    double mean_loss = 0;
    metrics::MetricReport train_metrics;  // on the unaugmented training set
};

struct RunRecord {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    std::string checkpoint_path;
};

// AdamW (betas 0.9/0.999, eps 1e-8) over the trainable parameters only, with
// cosine decay per TrainConfig.anneal granularity. Deterministic under seed.
// When out_dir is nonempty, persists log.csv, metrics.csv, config.snapshot and
// final.sunet there. NaN loss raises TrainingAbort carrying (step, lr, loss).
RunRecord train(SegUNet model, data::FolderDataset& dataset, const RunConfig& cfg,
                const std::string& out_dir = "");

// Predicts each sample at eval_size (bilinear prob resize back to the native
// ground-truth resolution) and aggregates the metric battery.
metrics::MetricReport evaluate(SegUNet model, data::FolderDataset& dataset, int eval_size,
                               const metrics::MetricSet& set = metrics::MetricSet::all());

// Writes round(255*p) masks, stem-matched, at native resolution.
void export_predictions(SegUNet model, data::FolderDataset& dataset, int eval_size,
                        const std::string& out_dir);

struct SweepRow {
    std::string preset;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;
    metrics::MetricReport report;
};

struct SweepTable {
    std::vector<SweepRow> rows;
};

// Trains and evaluates each preset under each seed with identical data order;
// per-preset failures are isolated into failed rows. Writes sweep.csv (full
// metric schema plus preset/seed) and sweep.md (S/Fadp/Em/MAE layout).
SweepTable ablation_sweep(const std::vector<std::string>& presets,
                          const std::vector<uint64_t>& seeds, data::FolderDataset& dataset,
                          const RunConfig& base_cfg, const std::string& out_dir);

std::string sweep_markdown(const SweepTable& table, const std::string& dataset_name);
void write_sweep_outputs(const SweepTable& table, const std::string& dataset_name,
                         const std::string& out_dir);

}  // namespace segunet::engine

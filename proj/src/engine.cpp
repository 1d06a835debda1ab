#include "segunet/engine.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segunet/checkpoint.hpp"
#include "segunet/common.hpp"
#include "segunet/loss.hpp"
#include "segunet/rng.hpp"

namespace fs = std::filesystem;

namespace segunet::engine {

double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double eta_min) {
    if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) {
        throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + "]");
    }
    const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + std::cos(phase));
}

namespace {

void set_lr(torch::optim::AdamW& opt, double lr) {
    for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

torch::Tensor predict_native(SegUNet& model, const data::Sample& sample, int eval_size) {
    data::Sample resized = data::resize_pair(sample, eval_size);
    torch::Tensor p = model->predict(resized.image.unsqueeze(0));
    const auto h = sample.mask.size(1);
    const auto w = sample.mask.size(2);
    if (p.size(2) != h || p.size(3) != w) {
        p = torch::nn::functional::interpolate(p, torch::nn::functional::InterpolateFuncOptions()
                                                      .size(std::vector<int64_t>{h, w})
                                                      .mode(torch::kBilinear)
                                                      .align_corners(false));
    }
    return p.squeeze(0).squeeze(0).clamp(0, 1);
}

}  // namespace

RunRecord train(SegUNet model, data::FolderDataset& dataset, const RunConfig& cfg,
                const std::string& out_dir) {
    cfg.validate();
    const TrainConfig& tc = cfg.train;
    if (dataset.size() == 0) throw DataError("training dataset is empty");

    torch::manual_seed(tc.seed);
    Rng rng(tc.seed);

    std::vector<torch::Tensor> trainable;
    std::vector<std::pair<std::string, torch::Tensor>> frozen_snapshot;
    for (const auto& p : model->named_parameters()) {
        if (p.value().requires_grad()) {
            trainable.push_back(p.value());
        } else {
            frozen_snapshot.emplace_back(p.key(), p.value().detach().clone());
        }
    }
    if (trainable.empty()) throw ConfigError("model has no trainable parameters");

    torch::optim::AdamW optimizer(
        trainable, torch::optim::AdamWOptions(tc.lr).betas({0.9, 0.999}).eps(1e-8).weight_decay(
                       tc.weight_decay));

    const int64_t n = static_cast<int64_t>(dataset.size());
    const int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const int64_t total_steps = steps_per_epoch * tc.epochs;
    const bool per_step = tc.anneal == "step";

    RunRecord record;
    int64_t global_step = 0;
    model->train();
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        if (!per_step) set_lr(optimizer, cosine_lr(epoch, tc.epochs, tc.lr, tc.eta_min));
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);

        double epoch_loss = 0;
        for (int64_t start = 0; start < n; start += tc.batch_size) {
            if (per_step) set_lr(optimizer, cosine_lr(global_step, total_steps, tc.lr, tc.eta_min));
            const double lr_now = optimizer.param_groups()[0].options().get_lr();

            // One scale per batch.
            double scale = 1.0;
            if (!cfg.data.multiscale.empty()) {
                scale = cfg.data.multiscale[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int64_t>(cfg.data.multiscale.size()) - 1))];
            }
            const int target = data::scaled_size(cfg.data.image_size, scale);

            std::vector<torch::Tensor> images, masks;
            for (int64_t i = start; i < std::min(start + tc.batch_size, n); ++i) {
                data::Sample s = dataset.get(static_cast<size_t>(order[static_cast<size_t>(i)]));
                s = data::augment(s, cfg.data, rng);
                s = data::resize_pair(s, target);
                images.push_back(s.image);
                masks.push_back(s.mask);
            }
            torch::Tensor x = torch::stack(images);
            torch::Tensor g = torch::stack(masks);

            SegmentationOutputs outputs = model->forward(x);
            LossBreakdown lb = total_loss(outputs, g);
            const double loss_val = lb.total.item<double>();
            if (!std::isfinite(loss_val)) {
                std::ostringstream os;
                os << "non-finite loss at step " << global_step << " (lr " << lr_now << ", wbce "
                   << lb.l_wbce.item<double>() << ", wiou " << lb.l_wiou.item<double>() << ")";
                throw TrainingAbort(global_step, lr_now, loss_val, os.str());
            }

            optimizer.zero_grad();
            lb.total.backward();
            if (tc.grad_clip) torch::nn::utils::clip_grad_norm_(trainable, *tc.grad_clip);
            optimizer.step();

            record.steps.push_back({global_step, lr_now, lb.l_wbce.item<double>(),
                                    lb.l_wiou.item<double>(), loss_val});
            epoch_loss += loss_val;
            ++global_step;
        }

        // Freezing contract: original encoder parameters stay bitwise intact.
        for (const auto& [path, snapshot] : frozen_snapshot) {
            torch::Tensor now = model->named_parameters()[path];
            if (!now.equal(snapshot)) {
                throw Error("frozen parameter '" + path + "' changed during epoch " +
                            std::to_string(epoch));
            }
        }

        EpochLog el;
        el.epoch = epoch;
        el.step = global_step;
        el.mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        const bool last = epoch + 1 == tc.epochs;
        if (last || (tc.eval_every > 0 && (epoch + 1) % tc.eval_every == 0)) {
            el.train_metrics = evaluate(model, dataset, cfg.data.image_size);
            model->train();
        }
        record.epochs.push_back(el);
    }
    model->eval();

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        {
            std::ofstream log(fs::path(out_dir) / "log.csv", std::ios::trunc);
            log << "step,lr,l_wbce,l_wiou,total\n";
            for (const auto& s : record.steps) {
                log << s.step << ',' << std::setprecision(12) << s.lr << ',' << s.l_wbce << ','
                    << s.l_wiou << ',' << s.total << '\n';
            }
        }
        {
            std::ofstream mcsv(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
            mcsv << "epoch,step,mean_loss," << metrics::metrics_csv_header() << '\n';
            for (const auto& e : record.epochs) {
                mcsv << e.epoch << ',' << e.step << ',' << std::setprecision(12) << e.mean_loss
                     << ',' << metrics::metrics_csv_row("train", e.train_metrics) << '\n';
            }
        }
        {
            std::ofstream snap(fs::path(out_dir) / "config.snapshot", std::ios::trunc);
            snap << cfg.to_json().dump(2) << '\n';
        }
        CheckpointExtras extras;
        extras.meta = {{"epochs", tc.epochs}, {"steps", global_step}};
        record.checkpoint_path = (fs::path(out_dir) / "final.sunet").string();
        save_checkpoint(model, record.checkpoint_path, &extras);
    }
    return record;
}

metrics::MetricReport evaluate(SegUNet model, data::FolderDataset& dataset, int eval_size,
                               const metrics::MetricSet& set) {
    torch::NoGradGuard no_grad;
    model->eval();
    metrics::MetricAccumulator acc(set);
    for (size_t i = 0; i < dataset.size(); ++i) {
        data::Sample sample = dataset.get(i);
        torch::Tensor p = predict_native(model, sample, eval_size);
        acc.add(p, sample.mask.squeeze(0));
    }
    return acc.report();
}

void export_predictions(SegUNet model, data::FolderDataset& dataset, int eval_size,
                        const std::string& out_dir) {
    torch::NoGradGuard no_grad;
    model->eval();
    fs::create_directories(out_dir);
    for (size_t i = 0; i < dataset.size(); ++i) {
        data::Sample sample = dataset.get(i);
        torch::Tensor p = predict_native(model, sample, eval_size);
        data::write_gray_png((fs::path(out_dir) / (sample.stem + ".png")).string(), p);
    }
}

SweepTable ablation_sweep(const std::vector<std::string>& presets,
                          const std::vector<uint64_t>& seeds, data::FolderDataset& dataset,
                          const RunConfig& base_cfg, const std::string& out_dir) {
    if (presets.empty()) throw ConfigError("sweep: need at least one preset");
    if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
    SweepTable table;
    for (const auto& preset : presets) {
        for (uint64_t seed : seeds) {
            SweepRow row;
            row.preset = preset;
            row.seed = seed;
            try {
                RunConfig cfg = base_cfg;
                cfg.model = ModelConfig::from_json(nlohmann::json{{"preset", preset}});
                cfg.model.freeze_backbone = base_cfg.model.freeze_backbone;
                cfg.model.seed = seed;
                cfg.train.seed = seed;
                cfg.seed = seed;
                cfg.validate();
                SegUNet model = build_model(cfg.model);
                train(model, dataset, cfg);
                row.report = evaluate(model, dataset, cfg.data.image_size);
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            table.rows.push_back(std::move(row));
        }
    }
    if (!out_dir.empty()) {
        write_sweep_outputs(table, fs::path(dataset.spec().root).filename().string(), out_dir);
    }
    return table;
}

std::string sweep_markdown(const SweepTable& table, const std::string& dataset_name) {
    std::ostringstream os;
    os << "## Backbone ablation (" << dataset_name << ")\n\n";
    os << "| Backbone | Seed | S_a | F_adp | E_phi | MAE |\n";
    os << "|---|---|---|---|---|---|\n";
    for (const auto& row : table.rows) {
        if (row.failed) {
            os << "| " << row.preset << " | " << row.seed << " | failed: " << row.error
               << " | | | |\n";
            continue;
        }
        os << "| " << row.preset << " | " << row.seed << " | " << std::fixed
           << std::setprecision(4) << row.report.s_alpha << " | " << row.report.f_adaptive
           << " | " << row.report.e_phi_mean << " | " << row.report.mae << " |\n";
    }
    return os.str();
}

void write_sweep_outputs(const SweepTable& table, const std::string& dataset_name,
                         const std::string& out_dir) {
    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "sweep.csv", std::ios::trunc);
        csv << "preset,seed," << metrics::metrics_csv_header() << ",failed,error\n";
        for (const auto& row : table.rows) {
            csv << row.preset << ',' << row.seed << ','
                << metrics::metrics_csv_row(dataset_name, row.report) << ','
                << (row.failed ? "1" : "0") << ',' << (row.failed ? row.error : "") << '\n';
        }
    }
    {
        std::ofstream md(fs::path(out_dir) / "sweep.md", std::ios::trunc);
        md << sweep_markdown(table, dataset_name);
    }
}

}  // namespace segunet::engine

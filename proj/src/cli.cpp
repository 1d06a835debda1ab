#include "segunet/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "segunet/checkpoint.hpp"
#include "segunet/common.hpp"
#include "segunet/config.hpp"
#include "segunet/data.hpp"
#include "segunet/engine.hpp"
#include "segunet/metrics.hpp"
#include "segunet/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace segunet::cli {

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json deep_merge(json base, const json& overlay) {
    if (!base.is_object() || !overlay.is_object()) return overlay;
    for (const auto& [key, value] : overlay.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object()) {
            base[key] = deep_merge(base[key], value);
        } else {
            base[key] = value;
        }
    }
    return base;
}

// Flag values shared by the subcommands; optionals record what the user set.
struct CommonFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<double> lr;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<int> image_size;
    std::optional<std::string> anneal;
    std::optional<int> eval_every;
};

// Seed precedence: built-in default < SEGUNET_SEED < config file < --seed.
RunConfig resolve_config(const CommonFlags& flags) {
    json doc = json::object();
    if (const char* env = std::getenv("SEGUNET_SEED")) {
        try {
            doc["seed"] = static_cast<uint64_t>(std::stoull(env));
        } catch (const std::exception&) {
            throw ConfigError(std::string("SEGUNET_SEED: not an unsigned integer: ") + env);
        }
    }
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw ConfigError("cannot read config file: " + flags.config_path);
        json file_doc;
        try {
            file_doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config file " + flags.config_path + ": " + e.what());
        }
        doc = deep_merge(doc, expand_dotted_keys(file_doc));
    }
    if (flags.preset) doc["model"]["preset"] = *flags.preset;
    if (flags.lr) doc["train"]["lr"] = *flags.lr;
    if (flags.epochs) doc["train"]["epochs"] = *flags.epochs;
    if (flags.batch_size) doc["train"]["batch_size"] = *flags.batch_size;
    if (flags.image_size) doc["data"]["image_size"] = *flags.image_size;
    if (flags.anneal) doc["train"]["anneal"] = *flags.anneal;
    if (flags.eval_every) doc["train"]["eval_every"] = *flags.eval_every;
    if (flags.seed) {
        doc["seed"] = *flags.seed;
        if (doc.contains("model")) doc["model"].erase("seed");
        if (doc.contains("train")) doc["train"].erase("seed");
    }
    RunConfig rc = RunConfig::from_json(doc);
    rc.validate();
    return rc;
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::string>& argv, const RunConfig& cfg,
                    const json& artifacts) {
    json m;
    m["command"] = command;
    m["argv"] = argv;
    m["timestamp_utc"] = utc_timestamp();
    m["seed"] = cfg.seed;
    m["config"] = cfg.to_json();
    m["artifacts"] = artifacts;
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << m.dump(2) << '\n';
}

std::vector<std::string> collect_argv(int argc, const char* const* argv) {
    std::vector<std::string> v;
    for (int i = 0; i < argc; ++i) v.emplace_back(argv[i]);
    return v;
}

int cmd_train(const CommonFlags& flags, const std::string& data_dir, const std::string& out_dir,
              const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(flags);
    data::DatasetSpec spec;
    spec.root = data_dir;
    spec.image_size = cfg.data.image_size;
    data::FolderDataset dataset(spec);

    write_manifest((fs::path(out_dir) / "manifest.json").string(), "train", argv, cfg,
                   json{{"out_dir", out_dir},
                        {"log_csv", (fs::path(out_dir) / "log.csv").string()},
                        {"metrics_csv", (fs::path(out_dir) / "metrics.csv").string()},
                        {"checkpoint", (fs::path(out_dir) / "final.sunet").string()}});

    SegUNet model = build_model(cfg.model);
    engine::train(model, dataset, cfg, out_dir);
    return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_csv,
             const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(flags);
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    cfg.model = loaded.model->config();

    // Either a single dataset root (<dir>/images + <dir>/masks) or a folder
    // of such roots, one metrics row per dataset.
    std::vector<std::pair<std::string, std::string>> datasets;  // (name, root)
    if (fs::is_directory(fs::path(data_dir) / "images")) {
        datasets.emplace_back(fs::path(data_dir).filename().string(), data_dir);
    } else {
        if (!fs::is_directory(data_dir)) throw DataError("not a directory: " + data_dir);
        for (const auto& entry : fs::directory_iterator(data_dir)) {
            if (entry.is_directory() && fs::is_directory(entry.path() / "images") &&
                fs::is_directory(entry.path() / "masks")) {
                datasets.emplace_back(entry.path().filename().string(), entry.path().string());
            }
        }
        std::sort(datasets.begin(), datasets.end());
        if (datasets.empty()) {
            throw DataError("no dataset folders (images/ + masks/) under " + data_dir);
        }
    }

    write_manifest(out_csv + ".manifest.json", "eval", argv, cfg,
                   json{{"checkpoint", checkpoint_path}, {"metrics_csv", out_csv}});

    std::vector<std::pair<std::string, metrics::MetricReport>> rows;
    for (const auto& [name, root] : datasets) {
        data::DatasetSpec spec;
        spec.root = root;
        spec.image_size = cfg.data.image_size;
        data::FolderDataset dataset(spec);
        rows.emplace_back(name, engine::evaluate(loaded.model, dataset, cfg.data.image_size));
    }
    metrics::write_metrics_csv(out_csv, rows);
    return kExitOk;
}

int cmd_predict(const CommonFlags& flags, const std::string& checkpoint_path,
                const std::string& image_path, const std::string& out_dir,
                const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(flags);
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    cfg.model = loaded.model->config();

    std::vector<fs::path> inputs;
    if (fs::is_directory(image_path)) {
        for (const auto& entry : fs::directory_iterator(image_path)) {
            if (entry.is_regular_file()) inputs.push_back(entry.path());
        }
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.emplace_back(image_path);
    }
    if (inputs.empty()) throw DataError("no input images under " + image_path);

    write_manifest((fs::path(out_dir) / "manifest.json").string(), "predict", argv, cfg,
                   json{{"checkpoint", checkpoint_path}, {"out_dir", out_dir}});
    fs::create_directories(out_dir);

    torch::NoGradGuard no_grad;
    loaded.model->eval();
    namespace F = torch::nn::functional;
    std::vector<std::string> failures;
    for (const auto& path : inputs) {
        torch::Tensor image;
        try {
            image = data::read_image_rgb01(path.string());
        } catch (const DataError& e) {
            failures.emplace_back(e.what());
            continue;
        }
        const auto h = image.size(1);
        const auto w = image.size(2);
        torch::Tensor resized =
            F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{cfg.data.image_size,
                                                                              cfg.data.image_size})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false));
        torch::Tensor p = loaded.model->predict(resized);
        p = F::interpolate(p, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false))
                .clamp(0, 1);
        data::write_gray_png((fs::path(out_dir) / (path.stem().string() + ".png")).string(),
                             p.squeeze(0).squeeze(0));
    }
    if (!failures.empty()) {
        std::ostringstream os;
        os << "unreadable inputs:";
        for (const auto& f : failures) os << " [" << f << "]";
        throw DataError(os.str());
    }
    return kExitOk;
}

int cmd_synth(const CommonFlags& flags, data::SyntheticShapesConfig scfg,
              const std::string& out_dir, const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(flags);
    scfg.seed = cfg.seed;  // resolved precedence: --seed > config > SEGUNET_SEED
    write_manifest((fs::path(out_dir) / "manifest.json").string(), "synth", argv, cfg,
                   json{{"out_dir", out_dir},
                        {"n_samples", scfg.n_samples},
                        {"canvas", scfg.canvas},
                        {"synth_seed", scfg.seed},
                        {"contrast", scfg.contrast},
                        {"noise_std", scfg.noise_std}});
    data::generate_synthetic(scfg, out_dir);
    return kExitOk;
}

int cmd_sweep(const CommonFlags& flags, const std::vector<std::string>& presets,
              const std::vector<uint64_t>& seeds, const std::string& data_dir,
              const std::string& out_dir, const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(flags);
    data::DatasetSpec spec;
    spec.root = data_dir;
    spec.image_size = cfg.data.image_size;
    data::FolderDataset dataset(spec);

    write_manifest((fs::path(out_dir) / "manifest.json").string(), "sweep", argv, cfg,
                   json{{"out_dir", out_dir},
                        {"presets", presets},
                        {"seeds", seeds},
                        {"sweep_csv", (fs::path(out_dir) / "sweep.csv").string()},
                        {"sweep_md", (fs::path(out_dir) / "sweep.md").string()}});

    engine::ablation_sweep(presets, seeds, dataset, cfg, out_dir);
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"segmentation training/evaluation toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto add_common = [&](CLI::App* cmd, bool with_train_flags) {
        cmd->add_option("--config", flags.config_path, "JSON config file (dotted keys allowed)");
        cmd->add_option("--seed", flags.seed, "master seed (overrides config and SEGUNET_SEED)");
        cmd->add_option("--image-size", flags.image_size, "square training/eval resolution");
        if (with_train_flags) {
            cmd->add_option("--preset", flags.preset, "backbone preset (tiny|small|baseplus|large|desk)");
            cmd->add_option("--lr", flags.lr, "initial learning rate");
            cmd->add_option("--epochs", flags.epochs, "training epochs");
            cmd->add_option("--batch-size", flags.batch_size, "batch size");
            cmd->add_option("--anneal", flags.anneal, "cosine granularity: epoch|step");
            cmd->add_option("--eval-every", flags.eval_every, "epochs between metric evals");
        }
    };

    std::string data_dir, out_path, checkpoint_path, image_path;

    CLI::App* train = app.add_subcommand("train", "train a model on an images/+masks/ folder");
    add_common(train, true);
    train->add_option("--data", data_dir, "dataset root containing images/ and masks/")
        ->required();
    train->add_option("--out", out_path, "run output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint, write a metrics CSV");
    add_common(eval, false);
    eval->add_option("--checkpoint", checkpoint_path, "path to a .sunet checkpoint")->required();
    eval->add_option("--data", data_dir, "dataset root or folder of dataset roots")->required();
    eval->add_option("--out", out_path, "output CSV path")->required();

    CLI::App* predict = app.add_subcommand("predict", "export probability masks for images");
    add_common(predict, false);
    predict->add_option("--checkpoint", checkpoint_path, "path to a .sunet checkpoint")
        ->required();
    predict->add_option("--image", image_path, "input image file or directory")->required();
    predict->add_option("--out", out_path, "output directory")->required();

    data::SyntheticShapesConfig scfg;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic shapes corpus");
    add_common(synth, false);
    synth->add_option("--out", out_path, "output dataset directory")->required();
    synth->add_option("--n", scfg.n_samples, "number of samples");
    synth->add_option("--canvas", scfg.canvas, "square canvas size");
    synth->add_option("--contrast", scfg.contrast, "foreground/background intensity gap");
    synth->add_option("--noise", scfg.noise_std, "gaussian noise std");

    std::vector<std::string> presets;
    std::vector<uint64_t> sweep_seeds{1, 2, 3};
    CLI::App* sweep = app.add_subcommand("sweep", "backbone ablation sweep");
    add_common(sweep, true);
    sweep->add_option("--presets", presets, "comma-separated preset list")
        ->required()
        ->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seed list")->delimiter(',');
    sweep->add_option("--data", data_dir, "dataset root containing images/ and masks/")
        ->required();
    sweep->add_option("--out", out_path, "sweep output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return kExitOk;  // --help
        std::cerr << "error: config: " << e.what() << '\n';
        return kExitConfig;
    }

    const std::vector<std::string> argv_copy = collect_argv(argc, argv);
    try {
        if (train->parsed()) return cmd_train(flags, data_dir, out_path, argv_copy);
        if (eval->parsed()) {
            return cmd_eval(flags, checkpoint_path, data_dir, out_path, argv_copy);
        }
        if (predict->parsed()) {
            return cmd_predict(flags, checkpoint_path, image_path, out_path, argv_copy);
        }
        if (synth->parsed()) return cmd_synth(flags, scfg, out_path, argv_copy);
        if (sweep->parsed()) {
            return cmd_sweep(flags, presets, sweep_seeds, data_dir, out_path, argv_copy);
        }
        std::cerr << "error: config: no subcommand\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << '\n';
        return kExitData;
    } catch (const TrainingAbort& e) {
        std::cerr << "error: training-abort: step=" << e.step() << " lr=" << e.lr()
                  << " loss=" << e.loss() << ": " << e.what() << '\n';
        return kExitTrainAbort;
    } catch (const CheckpointError& e) {
        std::cerr << "error: checkpoint: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace segunet::cli

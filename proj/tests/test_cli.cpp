// End-to-end checks of the segunet binary: exit codes, artifacts, manifests,
// seed precedence, and parity with the in-process engine.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segunet/checkpoint.hpp"
#include "segunet/data.hpp"
#include "segunet/engine.hpp"
#include "segunet/metrics.hpp"
#include "oracles/test_util.hpp"

using namespace segunet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_binary() {
    if (const char* env = std::getenv("SEGUNET_BIN")) return env;
    return "../segunet";  // tests run from build/tests when invoked manually
}

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

// Runs `[env_prefix] segunet <args>` through the shell, capturing streams.
CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    static testutil::TempDir capture;
    static int counter = 0;
    const fs::path out_file = capture.sub("out" + std::to_string(counter));
    const fs::path err_file = capture.sub("err" + std::to_string(counter));
    ++counter;

    std::ostringstream cmd;
    if (!env_prefix.empty()) cmd << env_prefix << ' ';
    cmd << '"' << cli_binary() << "\" " << args << " > \"" << out_file.string() << "\" 2> \""
        << err_file.string() << '"';
    const int status = std::system(cmd.str().c_str());

    CmdResult r;
    if (status != -1 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    r.out = read_all(out_file);
    r.err = read_all(err_file);
    return r;
}

std::string make_corpus(const testutil::TempDir& tmp, const std::string& name, int n,
                        uint64_t seed) {
    data::SyntheticShapesConfig cfg;
    cfg.n_samples = n;
    cfg.canvas = 32;
    cfg.seed = seed;
    return data::generate_synthetic(cfg, (tmp.path() / name).string()).root;
}

json load_manifest(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return json::parse(in);
}

bool trees_match(const fs::path& a, const fs::path& b) {
    for (const std::string sub : {"images", "masks"}) {
        for (const auto& entry : fs::directory_iterator(a / sub)) {
            if (slurp(entry.path()) != slurp(b / sub / entry.path().filename())) return false;
        }
    }
    return true;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

const std::string kTrainFlags = "--image-size 32 --epochs 1 --batch-size 4 --eval-every 0";

}  // namespace

TEST_CASE("argument errors exit 2 with a machine-parseable reason") {
    CmdResult r = run_cli("");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("error: config:") != std::string::npos);

    r = run_cli("train --no-such-flag");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("error: config:") != std::string::npos);

    r = run_cli("--help");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("train") != std::string::npos);
}

TEST_CASE("synth is reproducible and --seed wins the precedence chain") {
    testutil::TempDir tmp;
    const std::string common = "synth --n 4 --canvas 32 ";

    const auto a = run_cli(common + "--seed 9 --out \"" + tmp.sub("a").string() + '"');
    REQUIRE(a.exit_code == 0);
    const auto b = run_cli(common + "--seed 9 --out \"" + tmp.sub("b").string() + '"');
    REQUIRE(b.exit_code == 0);
    CHECK(trees_match(tmp.sub("a"), tmp.sub("b")));

    const auto c = run_cli(common + "--seed 10 --out \"" + tmp.sub("c").string() + '"');
    REQUIRE(c.exit_code == 0);
    CHECK(!trees_match(tmp.sub("a"), tmp.sub("c")));

    // SEGUNET_SEED is the lowest-priority source: it matches --seed 9 when no
    // flag is given and loses to an explicit --seed.
    const auto d = run_cli(common + "--out \"" + tmp.sub("d").string() + '"', "SEGUNET_SEED=9");
    REQUIRE(d.exit_code == 0);
    CHECK(trees_match(tmp.sub("a"), tmp.sub("d")));

    const auto e = run_cli(common + "--seed 9 --out \"" + tmp.sub("e").string() + '"',
                           "SEGUNET_SEED=10");
    REQUIRE(e.exit_code == 0);
    CHECK(trees_match(tmp.sub("a"), tmp.sub("e")));

    const json manifest = load_manifest(tmp.sub("a") / "manifest.json");
    CHECK(manifest.at("command") == "synth");
    CHECK(manifest.at("seed").get<uint64_t>() == 9);
    CHECK(manifest.at("artifacts").at("synth_seed").get<uint64_t>() == 9);
    CHECK(manifest.at("artifacts").at("n_samples").get<int>() == 4);

    SUBCASE("config file seed beats SEGUNET_SEED") {
        std::ofstream(tmp.sub("seed8.json")) << R"({"seed": 8})";
        const auto f = run_cli(common + "--config \"" + tmp.sub("seed8.json").string() +
                                   "\" --out \"" + tmp.sub("f").string() + '"',
                               "SEGUNET_SEED=11");
        REQUIRE(f.exit_code == 0);
        const json mf = load_manifest(tmp.sub("f") / "manifest.json");
        CHECK(mf.at("seed").get<uint64_t>() == 8);
        CHECK(mf.at("artifacts").at("synth_seed").get<uint64_t>() == 8);
    }
}

TEST_CASE("train happy path produces the full artifact set") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 4, 21);
    const std::string out = tmp.sub("run").string();

    const CmdResult r = run_cli("train --data \"" + corpus + "\" --out \"" + out + "\" " +
                                kTrainFlags);
    REQUIRE_MESSAGE(r.exit_code == 0, "stderr: ", r.err);
    for (const std::string f :
         {"manifest.json", "log.csv", "metrics.csv", "config.snapshot", "final.sunet"}) {
        CHECK_MESSAGE(fs::exists(fs::path(out) / f), "missing artifact ", f);
    }

    const json manifest = load_manifest(fs::path(out) / "manifest.json");
    CHECK(manifest.at("command") == "train");
    CHECK(manifest.at("config").at("train").at("epochs").get<int>() == 1);
    CHECK(manifest.at("config").at("train").at("lr").get<double>() == 0.001);
    CHECK(manifest.at("config").at("data").at("image_size").get<int>() == 32);
    CHECK(manifest.at("artifacts").at("checkpoint").get<std::string>() ==
          (fs::path(out) / "final.sunet").string());

    // The checkpoint the CLI wrote loads in-process.
    const LoadedCheckpoint loaded = load_checkpoint((fs::path(out) / "final.sunet").string());
    CHECK(loaded.extras.meta.at("epochs").get<int>() == 1);
}

TEST_CASE("missing data directory exits 3 and names the path") {
    testutil::TempDir tmp;
    const std::string missing = (tmp.path() / "nope").string();
    const CmdResult r = run_cli("train --data \"" + missing + "\" --out \"" +
                                tmp.sub("run").string() + "\" " + kTrainFlags);
    CHECK(r.exit_code == 3);
    CHECK(r.err.find("error: data:") != std::string::npos);
    CHECK(r.err.find("nope") != std::string::npos);
}

TEST_CASE("config problems exit 2") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 4, 22);

    SUBCASE("unparseable config file") {
        std::ofstream(tmp.sub("bad.json")) << "{not json";
        const CmdResult r =
            run_cli("train --config \"" + tmp.sub("bad.json").string() + "\" --data \"" +
                    corpus + "\" --out \"" + tmp.sub("run").string() + "\" " + kTrainFlags);
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("error: config:") != std::string::npos);
    }
    SUBCASE("invalid field value") {
        std::ofstream(tmp.sub("neg.json")) << R"({"train.lr": -1.0})";
        const CmdResult r =
            run_cli("train --config \"" + tmp.sub("neg.json").string() + "\" --data \"" +
                    corpus + "\" --out \"" + tmp.sub("run").string() + "\" " + kTrainFlags);
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("lr") != std::string::npos);
    }
    SUBCASE("malformed SEGUNET_SEED") {
        const CmdResult r = run_cli("synth --n 2 --out \"" + tmp.sub("s").string() + '"',
                                    "SEGUNET_SEED=abc");
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("SEGUNET_SEED") != std::string::npos);
    }
}

TEST_CASE("eval writes the declared CSV schema and matches the in-process engine") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 4, 23);
    const std::string run_dir = tmp.sub("run").string();
    REQUIRE(run_cli("train --data \"" + corpus + "\" --out \"" + run_dir + "\" " + kTrainFlags)
                .exit_code == 0);
    const std::string ckpt = (fs::path(run_dir) / "final.sunet").string();

    const std::string csv_path = tmp.sub("metrics.csv").string();
    const CmdResult r = run_cli("eval --checkpoint \"" + ckpt + "\" --data \"" + corpus +
                                "\" --out \"" + csv_path + "\" --image-size 32");
    REQUIRE_MESSAGE(r.exit_code == 0, "stderr: ", r.err);
    CHECK(fs::exists(csv_path + ".manifest.json"));

    std::ifstream in(csv_path);
    REQUIRE(in.good());
    std::string header, row;
    REQUIRE(std::getline(in, header));
    REQUIRE(std::getline(in, row));
    CHECK(header == "dataset,n,S,Fadp,Fw,Em,MAE,mDice,mIoU,IoU,F");

    const auto fields = split_csv(row);
    REQUIRE(fields.size() == 11);
    CHECK(fields[0] == "corpus");
    CHECK(fields[1] == "4");

    data::DatasetSpec spec;
    spec.root = corpus;
    data::FolderDataset ds(spec);
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const metrics::MetricReport rep = engine::evaluate(loaded.model, ds, 32);
    const double want[9] = {rep.s_alpha, rep.f_adaptive, rep.f_weighted,
                            rep.e_phi_mean, rep.mae,     rep.mdice,
                            rep.miou,     rep.iou,       rep.f_beta};
    for (int i = 0; i < 9; ++i) {
        CHECK(std::abs(std::stod(fields[static_cast<size_t>(i + 2)]) - want[i]) <= 1e-6);
    }

    SUBCASE("a folder of dataset roots yields one sorted row per dataset") {
        testutil::TempDir multi;
        make_corpus(multi, "b_set", 2, 31);
        make_corpus(multi, "a_set", 2, 30);
        const std::string multi_csv = tmp.sub("multi.csv").string();
        const CmdResult rm = run_cli("eval --checkpoint \"" + ckpt + "\" --data \"" +
                                     multi.path().string() + "\" --out \"" + multi_csv +
                                     "\" --image-size 32");
        REQUIRE_MESSAGE(rm.exit_code == 0, "stderr: ", rm.err);
        std::ifstream min(multi_csv);
        std::string h, r1, r2;
        REQUIRE(std::getline(min, h));
        REQUIRE(std::getline(min, r1));
        REQUIRE(std::getline(min, r2));
        CHECK(r1.rfind("a_set,2,", 0) == 0);
        CHECK(r2.rfind("b_set,2,", 0) == 0);
    }
}

TEST_CASE("predict exports round(255*p) masks stem-matched at native size") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 4, 24);
    const std::string run_dir = tmp.sub("run").string();
    REQUIRE(run_cli("train --data \"" + corpus + "\" --out \"" + run_dir + "\" " + kTrainFlags)
                .exit_code == 0);
    const std::string ckpt = (fs::path(run_dir) / "final.sunet").string();

    SUBCASE("single image matches the in-memory prediction bitwise") {
        const std::string image = (fs::path(corpus) / "images" / "shape_0000.png").string();
        const std::string out = tmp.sub("pred1").string();
        const CmdResult r = run_cli("predict --checkpoint \"" + ckpt + "\" --image \"" + image +
                                    "\" --out \"" + out + "\" --image-size 32");
        REQUIRE_MESSAGE(r.exit_code == 0, "stderr: ", r.err);
        const fs::path mask_path = fs::path(out) / "shape_0000.png";
        REQUIRE(fs::exists(mask_path));

        const torch::Tensor got = data::read_gray01(mask_path.string());
        REQUIRE(got.sizes() == torch::IntArrayRef({32, 32}));

        // Mirror the CLI pipeline exactly: resize to image_size, predict,
        // resize back to native, clamp, then 8-bit-quantize.
        LoadedCheckpoint loaded = load_checkpoint(ckpt);
        loaded.model->eval();
        torch::NoGradGuard no_grad;
        namespace F = torch::nn::functional;
        torch::Tensor x = data::read_image_rgb01(image).unsqueeze(0);
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{32, 32})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
        torch::Tensor p = loaded.model->predict(x);
        p = F::interpolate(p, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{32, 32})
                                  .mode(torch::kBilinear)
                                  .align_corners(false))
                .clamp(0, 1)
                .squeeze(0)
                .squeeze(0);
        const torch::Tensor want = (p * 255).round().clamp(0, 255) / 255.0;
        CHECK((got - want).abs().max().item<double>() <= 1e-9);
    }
    SUBCASE("directory input exports one mask per stem; odd sizes resample back") {
        // A 48x48 input must come back as a 48x48 mask even at --image-size 32.
        const std::string odd_dir = tmp.sub("odd").string();
        fs::create_directories(odd_dir);
        data::write_gray_png((fs::path(odd_dir) / "big.png").string(),
                             torch::rand({48, 48}));
        const CmdResult r = run_cli("predict --checkpoint \"" + ckpt + "\" --image \"" +
                                    odd_dir + "\" --out \"" + tmp.sub("pred2").string() +
                                    "\" --image-size 32");
        REQUIRE_MESSAGE(r.exit_code == 0, "stderr: ", r.err);
        const torch::Tensor got =
            data::read_gray01((tmp.sub("pred2") / "big.png").string());
        CHECK(got.sizes() == torch::IntArrayRef({48, 48}));
    }
    SUBCASE("unreadable inputs are itemized with exit 3") {
        const std::string bad_dir = tmp.sub("bad").string();
        fs::create_directories(bad_dir);
        std::ofstream(fs::path(bad_dir) / "junk.png") << "not an image";
        const CmdResult r = run_cli("predict --checkpoint \"" + ckpt + "\" --image \"" +
                                    bad_dir + "\" --out \"" + tmp.sub("pred3").string() +
                                    "\" --image-size 32");
        CHECK(r.exit_code == 3);
        CHECK(r.err.find("junk.png") != std::string::npos);
    }
}

TEST_CASE("corrupt checkpoints exit 5") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 2, 25);
    std::ofstream(tmp.sub("garbage.sunet"), std::ios::binary) << "XXXXXXXXnope";
    const CmdResult r = run_cli("eval --checkpoint \"" + tmp.sub("garbage.sunet").string() +
                                "\" --data \"" + corpus + "\" --out \"" +
                                tmp.sub("m.csv").string() + "\" --image-size 32");
    CHECK(r.exit_code == 5);
    CHECK(r.err.find("error: checkpoint:") != std::string::npos);
}

TEST_CASE("sweep command emits the ablation table artifacts") {
    testutil::TempDir tmp;
    const std::string corpus = make_corpus(tmp, "corpus", 4, 26);
    const std::string out = tmp.sub("sweep").string();
    const CmdResult r = run_cli("sweep --presets desk --seeds 3 --data \"" + corpus +
                                "\" --out \"" + out + "\" " + kTrainFlags);
    REQUIRE_MESSAGE(r.exit_code == 0, "stderr: ", r.err);

    CHECK(fs::exists(fs::path(out) / "sweep.csv"));
    CHECK(fs::exists(fs::path(out) / "sweep.md"));
    const std::string md = read_all(fs::path(out) / "sweep.md");
    CHECK(md.find("| Backbone | Seed | S_a | F_adp | E_phi | MAE |") != std::string::npos);
    CHECK(md.find("| desk | 3 |") != std::string::npos);

    const json manifest = load_manifest(fs::path(out) / "manifest.json");
    CHECK(manifest.at("command") == "sweep");
    CHECK(manifest.at("artifacts").at("presets") == json::array({"desk"}));
}

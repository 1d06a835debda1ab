#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <fstream>
#include <set>

#include <torch/torch.h>

#include "oracles/oracle_params.hpp"
#include "oracles/test_util.hpp"
#include "segunet/checkpoint.hpp"
#include "segunet/model.hpp"

using namespace segunet;

namespace {

ModelConfig desk_config(uint64_t seed = 42) {
    ModelConfig cfg;  // defaults are the desk preset
    cfg.seed = seed;
    return cfg;
}

bool trees_equal(SegUNet& a, SegUNet& b) {
    auto pa = a->named_parameters();
    auto pb = b->named_parameters();
    if (pa.size() != pb.size()) return false;
    for (const auto& p : pa) {
        if (!pb.contains(p.key()) || !p.value().equal(pb[p.key()])) return false;
    }
    auto ba = a->named_buffers();
    auto bb = b->named_buffers();
    if (ba.size() != bb.size()) return false;
    for (const auto& p : ba) {
        if (!bb.contains(p.key()) || !p.value().equal(bb[p.key()])) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("desk model emits three full-resolution heads") {
    SegUNet model = build_model(desk_config());
    model->eval();
    torch::NoGradGuard ng;
    auto out = model->forward(torch::rand({1, 3, 64, 64}));
    for (const auto& s : out.logits) {
        CHECK(s.sizes() == torch::IntArrayRef({1, 1, 64, 64}));
        CHECK(s.isfinite().all().item<bool>());
    }
    auto out2 = model->forward(torch::rand({2, 3, 96, 96}));
    for (const auto& s : out2.logits) {
        CHECK(s.sizes() == torch::IntArrayRef({2, 1, 96, 96}));
    }
    auto p = model->predict(torch::rand({1, 3, 64, 64}));
    CHECK(p.sizes() == torch::IntArrayRef({1, 1, 64, 64}));
    CHECK(p.min().item<double>() >= 0.0);
    CHECK(p.max().item<double>() <= 1.0);
}

TEST_CASE("construction is deterministic under the config seed") {
    SegUNet a = build_model(desk_config(7));
    SegUNet b = build_model(desk_config(7));
    CHECK(trees_equal(a, b));
    SegUNet c = build_model(desk_config(8));
    CHECK(!trees_equal(a, c));

    a->eval();
    b->eval();
    torch::NoGradGuard ng;
    torch::manual_seed(0);
    auto x = torch::rand({1, 3, 64, 64});
    auto ya = a->forward(x);
    auto yb = b->forward(x);
    for (int i = 0; i < 3; ++i) CHECK(ya.logits[size_t(i)].equal(yb.logits[size_t(i)]));
}

TEST_CASE("freezing leaves exactly adapters, rfbs and decoder trainable") {
    SegUNet model = build_model(desk_config());
    int64_t frozen = 0, trainable = 0;
    for (const auto& p : model->named_parameters()) {
        const std::string& key = p.key();
        const bool is_adapter = key.find("adapter") != std::string::npos;
        const bool is_head = key.rfind("rfb", 0) == 0 || key.rfind("decoder", 0) == 0;
        if (p.value().requires_grad()) {
            CHECK_MESSAGE((is_adapter || is_head), key << " should be frozen");
            trainable += p.value().numel();
        } else {
            CHECK_MESSAGE((!is_adapter && !is_head), key << " should be trainable");
            frozen += p.value().numel();
        }
    }
    CHECK(trainable == trainable_parameter_count(*model));
    CHECK(frozen + trainable == parameter_count(*model));
    CHECK(frozen > 0);

    // freeze_backbone=false keeps everything trainable.
    ModelConfig unfrozen = desk_config();
    unfrozen.freeze_backbone = false;
    SegUNet m2 = build_model(unfrozen);
    CHECK(trainable_parameter_count(*m2) == parameter_count(*m2));
}

TEST_CASE("parameter count matches the closed-form oracle") {
    SegUNet model = build_model(desk_config());
    CHECK(parameter_count(*model) == oracle::model_params(desk_config()));

    // The adapter share: backbone total minus adapters is frozen.
    const int64_t adapters = oracle::adapters_params(desk_config().encoder, 16);
    const int64_t rfbdec = oracle::model_params(desk_config()) -
                           oracle::encoder_params(desk_config().encoder) - adapters;
    CHECK(trainable_parameter_count(*model) == adapters + rfbdec);
}

TEST_CASE("normalization happens inside the model") {
    // A model fed a constant image must see (x - mean)/std; verify by checking
    // that two different constants produce different outputs even though both
    // are far from the data distribution.
    SegUNet model = build_model(desk_config());
    model->eval();
    torch::NoGradGuard ng;
    auto y0 = model->forward(torch::zeros({1, 3, 64, 64}));
    auto y1 = model->forward(torch::ones({1, 3, 64, 64}));
    CHECK(!y0.logits[0].equal(y1.logits[0]));
    // Buffers record the constants.
    auto buffers = model->named_buffers();
    REQUIRE(buffers.contains("norm_mean"));
    REQUIRE(buffers.contains("norm_std"));
    CHECK(buffers["norm_mean"].numel() == 3);
}

TEST_CASE("batch splitting is equivalent to whole-batch inference") {
    SegUNet model = build_model(desk_config(3));
    model->eval();
    torch::NoGradGuard ng;
    torch::manual_seed(1);
    auto x = torch::rand({4, 3, 64, 64});
    auto whole = model->forward(x);
    for (int64_t s = 0; s < 4; ++s) {
        auto part = model->forward(x.index({torch::indexing::Slice(s, s + 1)}));
        for (int i = 0; i < 3; ++i) {
            const double diff = (whole.logits[size_t(i)]
                                     .index({torch::indexing::Slice(s, s + 1)}) -
                                 part.logits[size_t(i)])
                                    .abs()
                                    .max()
                                    .item<double>();
            CHECK(diff <= 1e-5);
        }
    }
}

TEST_CASE("checkpoint round trip restores parameters bitwise") {
    testutil::TempDir tmp("segunet_ckpt");
    SegUNet model = build_model(desk_config(9));
    model->eval();
    // Perturb away from init so the restore is not trivially the seed state.
    {
        torch::NoGradGuard ng;
        for (auto& p : model->parameters()) p.add_(torch::randn_like(p) * 0.01);
    }
    const std::string path = tmp.sub("model.sunet");
    CheckpointExtras extras;
    extras.meta = {{"epoch", 3}, {"step", 123}};
    extras.tensors["opt/decoder.head0.bias/exp_avg"] = torch::randn({1});
    save_checkpoint(model, path, &extras);

    auto loaded = load_checkpoint(path);
    loaded.model->eval();
    CHECK(trees_equal(model, loaded.model));
    CHECK(loaded.extras.meta["epoch"] == 3);
    CHECK(loaded.extras.meta["step"] == 123);
    REQUIRE(loaded.extras.tensors.count("opt/decoder.head0.bias/exp_avg") == 1);
    CHECK(loaded.extras.tensors["opt/decoder.head0.bias/exp_avg"].equal(
        extras.tensors["opt/decoder.head0.bias/exp_avg"]));

    // Same forward pass bitwise.
    torch::NoGradGuard ng;
    torch::manual_seed(2);
    auto x = torch::rand({1, 3, 64, 64});
    auto ya = model->forward(x);
    auto yb = loaded.model->forward(x);
    for (int i = 0; i < 3; ++i) CHECK(ya.logits[size_t(i)].equal(yb.logits[size_t(i)]));

    // Freeze state is reconstructed from the embedded config.
    CHECK(trainable_parameter_count(*loaded.model) == trainable_parameter_count(*model));
}

TEST_CASE("checkpoint stores every parameter and buffer path") {
    testutil::TempDir tmp("segunet_ckpt_paths");
    SegUNet model = build_model(desk_config());
    const std::string path = tmp.sub("model.sunet");
    save_checkpoint(model, path);

    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "SUNETCP1");
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    auto j = nlohmann::json::parse(header);
    CHECK(j["schema_version"] == 1);
    CHECK(j.contains("model_config"));

    std::set<std::string> stored;
    for (const auto& t : j["tensors"]) stored.insert(t["name"].get<std::string>());
    for (const auto& p : model->named_parameters()) {
        CHECK_MESSAGE(stored.count("param/" + p.key()) == 1, p.key());
    }
    for (const auto& b : model->named_buffers()) {
        CHECK_MESSAGE(stored.count("buffer/" + b.key()) == 1, b.key());
    }
    CHECK(stored.size() ==
          model->named_parameters().size() + model->named_buffers().size());
}

TEST_CASE("checkpoint failure modes carry distinct kinds") {
    testutil::TempDir tmp("segunet_ckpt_err");
    SegUNet model = build_model(desk_config());
    const std::string path = tmp.sub("model.sunet");
    save_checkpoint(model, path);

    auto slurp = [&](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    auto spit = [&](const std::string& p, const std::string& bytes) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    const std::string bytes = slurp(path);

    auto kind_of = [&](const std::string& p) {
        try {
            load_checkpoint(p);
        } catch (const CheckpointError& e) {
            return e.kind();
        }
        throw std::runtime_error("expected CheckpointError");
    };

    // Io: no such file.
    CHECK(kind_of(tmp.sub("missing.sunet")) == CheckpointError::Kind::Io);

    // Corrupt: wrong magic.
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    spit(tmp.sub("bad_magic.sunet"), bad_magic);
    CHECK(kind_of(tmp.sub("bad_magic.sunet")) == CheckpointError::Kind::Corrupt);

    // Corrupt: truncated payload.
    spit(tmp.sub("trunc.sunet"), bytes.substr(0, bytes.size() - 64));
    CHECK(kind_of(tmp.sub("trunc.sunet")) == CheckpointError::Kind::Corrupt);

    // SchemaMismatch: bumped version.
    {
        uint64_t header_len = 0;
        std::memcpy(&header_len, bytes.data() + 8, 8);
        std::string header = bytes.substr(16, header_len);
        auto j = nlohmann::json::parse(header);
        j["schema_version"] = 999;
        const std::string new_header = j.dump();
        uint64_t new_len = new_header.size();
        std::string out = bytes.substr(0, 8);
        out.append(reinterpret_cast<const char*>(&new_len), 8);
        out += new_header;
        out += bytes.substr(16 + header_len);
        spit(tmp.sub("schema.sunet"), out);
        CHECK(kind_of(tmp.sub("schema.sunet")) == CheckpointError::Kind::SchemaMismatch);
    }

    // MissingKeys / ExtraKeys: drop or rename one tensor record.
    {
        uint64_t header_len = 0;
        std::memcpy(&header_len, bytes.data() + 8, 8);
        std::string header = bytes.substr(16, header_len);
        auto j = nlohmann::json::parse(header);

        auto drop = j;
        drop["tensors"].erase(0);
        auto rebuild = [&](const nlohmann::json& hj, const std::string& p) {
            const std::string nh = hj.dump();
            uint64_t nl = nh.size();
            std::string out = bytes.substr(0, 8);
            out.append(reinterpret_cast<const char*>(&nl), 8);
            out += nh;
            out += bytes.substr(16 + header_len);
            spit(p, out);
        };
        rebuild(drop, tmp.sub("missingkeys.sunet"));
        CHECK(kind_of(tmp.sub("missingkeys.sunet")) == CheckpointError::Kind::MissingKeys);

        // A stray tensor with a param/ name nothing in the model claims.
        auto extra = j;
        nlohmann::json stray = extra["tensors"][0];
        stray["name"] = "param/encoder.not_a_real_parameter";
        extra["tensors"].push_back(stray);
        rebuild(extra, tmp.sub("extrakeys.sunet"));
        CHECK(kind_of(tmp.sub("extrakeys.sunet")) == CheckpointError::Kind::ExtraKeys);
    }

    // Corrupt: embedded config made invalid.
    {
        uint64_t header_len = 0;
        std::memcpy(&header_len, bytes.data() + 8, 8);
        std::string header = bytes.substr(16, header_len);
        auto j = nlohmann::json::parse(header);
        j["model_config"]["decoder"]["num_blocks"] = 5;
        const std::string nh = j.dump();
        uint64_t nl = nh.size();
        std::string out = bytes.substr(0, 8);
        out.append(reinterpret_cast<const char*>(&nl), 8);
        out += nh;
        out += bytes.substr(16 + header_len);
        spit(tmp.sub("badcfg.sunet"), out);
        CHECK(kind_of(tmp.sub("badcfg.sunet")) == CheckpointError::Kind::Corrupt);
    }
}

TEST_CASE("adapter-free and unfrozen variants round trip too") {
    testutil::TempDir tmp("segunet_ckpt_variants");
    ModelConfig cfg = desk_config(11);
    cfg.freeze_backbone = false;
    SegUNet model = build_model(cfg);
    const std::string path = tmp.sub("m.sunet");
    save_checkpoint(model, path);
    auto loaded = load_checkpoint(path);
    CHECK(trees_equal(model, loaded.model));
    CHECK(trainable_parameter_count(*loaded.model) == parameter_count(*loaded.model));
}

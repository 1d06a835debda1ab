#include "segunet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "segunet/common.hpp"

namespace segunet {

namespace {

constexpr char kMagic[8] = {'S', 'U', 'N', 'E', 'T', 'C', 'P', '1'};

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "float32";
        case torch::kFloat64: return "float64";
        case torch::kInt64: return "int64";
        default:
            throw CheckpointError(CheckpointError::Kind::Io,
                                  std::string("unsupported tensor dtype for checkpoint: ") +
                                      torch::toString(t));
    }
}

torch::ScalarType dtype_from_name(const std::string& name) {
    if (name == "float32") return torch::kFloat32;
    if (name == "float64") return torch::kFloat64;
    if (name == "int64") return torch::kInt64;
    throw CheckpointError(CheckpointError::Kind::Corrupt,
                          "unknown dtype in checkpoint header: " + name);
}

void append_tensor_entry(nlohmann::json& entries, std::vector<char>& payload,
                         const std::string& name, const torch::Tensor& t) {
    torch::Tensor flat = t.detach().contiguous().cpu();
    const auto nbytes = static_cast<size_t>(flat.numel() * flat.element_size());
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = std::vector<int64_t>(flat.sizes().begin(), flat.sizes().end());
    e["dtype"] = dtype_name(flat.scalar_type());
    e["offset"] = payload.size();
    e["nbytes"] = nbytes;
    entries.push_back(std::move(e));
    const size_t old = payload.size();
    payload.resize(old + nbytes);
    std::memcpy(payload.data() + old, flat.data_ptr(), nbytes);
}

}  // namespace

void save_checkpoint(const SegUNet& model, const std::string& path,
                     const CheckpointExtras* extras) {
    nlohmann::json header;
    header["schema_version"] = kCheckpointSchemaVersion;
    header["model_config"] = model->config().to_json();
    if (extras && !extras->meta.empty()) header["training_state"] = extras->meta;

    nlohmann::json entries = nlohmann::json::array();
    std::vector<char> payload;
    for (const auto& p : model->named_parameters()) {
        append_tensor_entry(entries, payload, "param/" + p.key(), p.value());
    }
    for (const auto& b : model->named_buffers()) {
        append_tensor_entry(entries, payload, "buffer/" + b.key(), b.value());
    }
    if (extras) {
        for (const auto& [name, t] : extras->tensors) {
            append_tensor_entry(entries, payload, name, t);
        }
    }
    header["tensors"] = std::move(entries);

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open for write: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open for read: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              "not a .sunet checkpoint (bad magic): " + path);
    }
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) {
        hlen |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    if (16 + hlen > bytes.size()) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              "truncated checkpoint header: " + path);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 +
                                                               static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              std::string("unparseable checkpoint header: ") + e.what());
    }

    if (!header.contains("schema_version") || !header["schema_version"].is_number_integer()) {
        throw CheckpointError(CheckpointError::Kind::Corrupt, "header lacks schema_version");
    }
    const int version = header["schema_version"].get<int>();
    if (version != kCheckpointSchemaVersion) {
        std::ostringstream os;
        os << "checkpoint schema_version " << version << " unsupported (expected "
           << kCheckpointSchemaVersion << ")";
        throw CheckpointError(CheckpointError::Kind::SchemaMismatch, os.str());
    }

    ModelConfig config;
    try {
        config = ModelConfig::from_json(header.at("model_config"));
        config.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              std::string("invalid embedded model_config: ") + e.what());
    }

    const char* data = bytes.data() + 16 + hlen;
    const size_t data_size = bytes.size() - 16 - hlen;
    std::map<std::string, torch::Tensor> stored;
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<int64_t>>();
        const torch::ScalarType dtype = dtype_from_name(e.at("dtype").get<std::string>());
        const auto offset = e.at("offset").get<size_t>();
        const auto nbytes = e.at("nbytes").get<size_t>();
        if (offset + nbytes > data_size) {
            throw CheckpointError(CheckpointError::Kind::Corrupt,
                                  "tensor '" + name + "' extends past end of file");
        }
        torch::Tensor t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        if (static_cast<size_t>(t.numel() * t.element_size()) != nbytes) {
            throw CheckpointError(CheckpointError::Kind::Corrupt,
                                  "tensor '" + name + "' nbytes disagrees with shape");
        }
        std::memcpy(t.data_ptr(), data + offset, nbytes);
        stored.emplace(name, std::move(t));
    }

    LoadedCheckpoint result;
    result.model = build_model(config);
    if (header.contains("training_state")) result.extras.meta = header["training_state"];

    std::set<std::string> expected;
    auto restore = [&](const std::string& prefix, const std::string& path_in_model,
                       torch::Tensor dest) {
        const std::string key = prefix + path_in_model;
        expected.insert(key);
        auto it = stored.find(key);
        if (it == stored.end()) {
            throw CheckpointError(CheckpointError::Kind::MissingKeys,
                                  "checkpoint lacks tensor '" + key + "'");
        }
        if (!it->second.sizes().equals(dest.sizes())) {
            std::ostringstream os;
            os << "tensor '" << key << "' shape " << it->second.sizes()
               << " does not match model shape " << dest.sizes();
            throw CheckpointError(CheckpointError::Kind::Corrupt, os.str());
        }
        torch::NoGradGuard guard;
        dest.copy_(it->second.to(dest.scalar_type()));
    };
    for (const auto& p : result.model->named_parameters()) restore("param/", p.key(), p.value());
    for (const auto& b : result.model->named_buffers()) restore("buffer/", b.key(), b.value());

    for (const auto& [name, t] : stored) {
        if (name.rfind("param/", 0) == 0 || name.rfind("buffer/", 0) == 0) {
            if (!expected.count(name)) {
                throw CheckpointError(CheckpointError::Kind::ExtraKeys,
                                      "checkpoint has tensor '" + name +
                                          "' with no counterpart in the model");
            }
        } else {
            result.extras.tensors.emplace(name, t);
        }
    }
    return result;
}

}  // namespace segunet

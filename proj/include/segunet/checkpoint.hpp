#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "segunet/model.hpp"

namespace segunet {

// Optional training state stored alongside the weights: scalar metadata
// (epoch, step) plus raw tensors such as AdamW moments keyed "opt/<path>/...".
struct CheckpointExtras {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;
};

struct LoadedCheckpoint {
    SegUNet model{nullptr};
    CheckpointExtras extras;
};

// .sunet container: 8-byte magic "SUNETCP1", uint64 little-endian header
// length, JSON header {schema_version, model_config, training_state?,
// tensors:[{name,shape,dtype,offset,nbytes}]}, then raw little-endian blobs.
// Offsets are relative to the end of the header. Parameters are stored as
// "param/<path>", persistent buffers as "buffer/<path>".
inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const SegUNet& model, const std::string& path,
                     const CheckpointExtras* extras = nullptr);

// Rebuilds the model from the embedded (revalidated) config and restores every
// parameter and buffer bitwise. Throws CheckpointError with a distinct kind per
// failure mode: Io, Corrupt, SchemaMismatch, MissingKeys, ExtraKeys.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace segunet

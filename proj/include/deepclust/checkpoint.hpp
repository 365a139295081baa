#pragma once

#include "deepclust/layers.hpp"
#include "deepclust/tensor.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace deepclust {

/// Extra named tensors stored alongside the layer stack (e.g. cluster
/// centroids).
struct CheckpointExtra {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    std::vector<Layer> layers;
    std::vector<CheckpointExtra> extras;
    nlohmann::json meta;  // free-form, round-tripped verbatim
};

/// Writes `<stem>.json` (manifest: layer kinds, hypers, tensor shapes, meta)
/// and `<stem>.bin` (flat little-endian parameter blob in manifest order:
/// per layer weight then bias, then extras).
void save_checkpoint(const std::string& stem, const std::vector<Layer>& layers,
                     const std::vector<CheckpointExtra>& extras = {},
                     const nlohmann::json& meta = nlohmann::json::object());

/// Reads a checkpoint written by save_checkpoint. Throws std::runtime_error
/// on missing files, manifest/blob disagreement, or precision mismatch.
Checkpoint load_checkpoint(const std::string& stem);

}  // namespace deepclust

#pragma once

#include "deepclust/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepclust {

/// Images plus optional ground truth. Labels are carried for evaluation
/// only; no training operation accepts them.
struct Dataset {
    Tensor images;  // n x c x H x W
    std::vector<std::size_t> labels;
    bool has_labels = false;
    std::string name;
    // Affine record of the applied normalization: stored = scale*raw + offset.
    real_t norm_scale = 1;
    real_t norm_offset = 0;
};

/// Big-endian IDX (the published MNIST container). Pixels are divided by
/// 255 into [0,1]. `labels_path` may be empty for images-only loading.
/// Throws std::runtime_error naming the byte offset on a bad magic and on
/// truncation or image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// The documented USPS container (see docs/usps_format.md): magic "USPS",
/// version, dtype (u8|f32|f64), flags, then n/H/W and row-major pixels.
/// Values are affinely mapped onto [-1,1] unless the file is flagged as
/// already normalized.
Dataset load_usps(const std::string& path);

/// Writes `data` in the USPS container (f64 pixels, normalized flag set when
/// `normalized` is true so reloading is bit-identical).
void save_usps(const std::string& path, const Dataset& data, bool normalized = true);

/// Per-class fixed random smooth template (a Gaussian intensity bump on a
/// shuffled grid cell) plus i.i.d. Gaussian pixel noise.
Dataset make_synthetic_blobs(std::size_t classes, std::size_t per_class, std::size_t image_size,
                             real_t sigma, std::uint64_t seed);

}  // namespace deepclust

#pragma once

#include "deepclust/tensor.hpp"

#include <cstdint>
#include <vector>

namespace deepclust {

struct KmeansResult {
    std::vector<std::size_t> labels;
    Tensor centroids;  // s x d
    real_t inertia = 0;
};

/// Seeded k-means++ with `restarts` independent runs; the lowest-inertia run
/// wins (ties keep the earlier restart). Used only for the k-means-init
/// baseline configuration.
KmeansResult kmeans(const Tensor& points, std::size_t s, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iter = 300);

}  // namespace deepclust

#pragma once

#include "deepclust/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepclust {

/// One agglomerative merge. Ids follow the scipy convention: leaves are
/// 0..n-1, the k-th merge (in sorted-cost order) creates id n+k.
struct Merge {
    std::size_t a;
    std::size_t b;
    real_t cost;
    std::size_t new_id;
    std::size_t size;
};

struct Dendrogram {
    std::vector<Merge> merges;  // n-1 entries, ascending cost
    std::size_t leaf_count = 0;
};

struct FlatClustering {
    std::vector<std::size_t> labels;  // dense ids in [0, s)
    Tensor centroids;                 // s x d
    std::vector<std::size_t> sizes;
};

/// Ward merge cost (n_a n_b / (n_a + n_b)) * ||mu_a - mu_b||^2.
real_t ward_delta(std::size_t size_a, const std::vector<real_t>& centroid_a, std::size_t size_b,
                  const std::vector<real_t>& centroid_b);

struct AgglomerateOptions {
    /// When > 0 and n exceeds it, cluster a uniform subsample of this size
    /// and assign the remaining points to the nearest resulting centroid.
    std::size_t subsample_limit = 0;
    std::uint64_t seed = 0;
};

/// Nearest-neighbor-chain ward agglomeration cut at s clusters.
/// O(n^2) time, O(n) memory beyond the points. Ties prefer the pair with
/// the lexicographically smallest (min-id, max-id).
struct AgglomerateResult {
    FlatClustering flat;
    Dendrogram dendrogram;
};

AgglomerateResult agglomerate(const Tensor& points, std::size_t s, const AgglomerateOptions& opts = {});

/// Flat labels after the first n-s merges; dense ids ordered by first
/// instance occurrence.
std::vector<std::size_t> cut(const Dendrogram& dendrogram, std::size_t s);

/// Per-cluster arithmetic means and sizes. Labels must be dense in [0, s).
FlatClustering centroids(const Tensor& points, const std::vector<std::size_t>& labels);

/// Writes the merge list as CSV (a, b, cost, size).
void export_dendrogram_csv(const Dendrogram& dendrogram, const std::string& path);

}  // namespace deepclust

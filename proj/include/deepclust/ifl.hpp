#pragma once

#include "deepclust/cae.hpp"
#include "deepclust/embedded.hpp"
#include "deepclust/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepclust {

/// Balanced random partition of n instances into r non-overlapping folds.
struct InnerFolding {
    std::size_t r = 0;
    std::vector<std::size_t> assignment;  // per-instance fold id in [0, r)
    std::uint64_t seed = 0;
};

/// Throws std::invalid_argument when r < 2 or n < r. Fold sizes differ by
/// at most one; the assignment is deterministic per seed.
InnerFolding inner_folds(std::size_t n, std::size_t r, std::uint64_t seed);

/// One error-representation row: the distance profile of an embedding
/// against the clusters learned without it.
struct IflFeatureEntry {
    real_t confidence = 0;          // size fraction of the closest cluster
    std::vector<real_t> weights;    // ||z - mu_j||_2 for every j
    real_t weight_closest = 0;      // min of `weights`
    std::size_t closest = 0;        // argmin index, ties to the lowest
};

/// `z` is a d-vector (shape (d,) or (1, d)); `centroids` is s x d;
/// `sizes[j]` counts the training instances in cluster j.
IflFeatureEntry extract_error_features(const Tensor& z, const Tensor& centroids,
                                       const std::vector<std::size_t>& sizes);

/// Per-column affine min-max map onto [-2.5, 2.5]; constant columns map
/// to all zeros.
Tensor normalize_features(const Tensor& blocks);

struct IflRoundConfig {
    CaeConfig cae;  // cae.epochs is this round's pretraining budget
    MleConfig mle;
};

struct InnerRoundResult {
    CaeModel model;                           // trained on inner-train only
    std::vector<std::size_t> train_labels;    // inner-train cluster ids
    Tensor centroids;                         // s x d
    std::vector<std::size_t> cluster_sizes;   // per cluster, over inner-train
    Tensor z_test;                            // |inner-test| x d
};

/// Trains CAE-MLE on inner-train alone and encodes inner-test with the
/// resulting encoder; nothing about inner-test reaches any parameter.
InnerRoundResult run_inner_round(const Tensor& inner_train, const Tensor& inner_test,
                                 const IflRoundConfig& cfg);

struct IflConfig {
    std::size_t folds = 10;  // r
    CaeConfig cae;           // architecture + full-run pretraining budget
    MleConfig mle;           // clusters (s), gamma, schedule
    /// Per-round pretraining budget; 0 means half of cae.epochs.
    std::size_t round_epochs = 0;
    std::uint64_t seed = 0;
};

struct IflResult {
    std::vector<std::size_t> labels;     // final hard labels
    std::vector<std::size_t> fold_ids;   // per-instance fold provenance
    Tensor raw_features;                 // n x (s+2): confidence, w_1..w_s, w_closest
    Tensor features;                     // raw_features normalized onto [-2.5, 2.5]
    MleResult final_stage;
    CaeModel final_model;                // the jointly trained final-stage CAE
};

/// Algorithm: partition into r folds; per round, learn clusters on the
/// other r-1 folds and featurize the held-out fold; normalize the n x (s+2)
/// block; re-run CAE-MLE on the images with the block concatenated onto the
/// embedding for every clustering computation.
IflResult deep_ifl(const Tensor& images, const IflConfig& cfg);

/// CSV: instance_id, fold_id, confidence, w_1..w_s, w_closest.
void export_feature_csv(const IflResult& result, const std::string& path);

}  // namespace deepclust

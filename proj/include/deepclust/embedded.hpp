#pragma once

#include "deepclust/cae.hpp"
#include "deepclust/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepclust {

/// Student-t (one degree of freedom) soft assignment:
/// q_ij = (1+||z_i-mu_j||^2)^-1 / sum_j' (1+||z_i-mu_j'||^2)^-1.
Tensor soft_assign(const Tensor& z, const Tensor& mu);

/// Sharpened, frequency-normalized target:
/// p_ij = (q_ij^2/f_j) / sum_j' (q_ij'^2/f_j'), f_j = column mass of Q.
Tensor target_distribution(const Tensor& q);

/// Argmax per row, ties to the lowest index.
std::vector<std::size_t> hard_labels(const Tensor& q);

struct KlResult {
    real_t value = 0;  // sum_i sum_j p_ij log(p_ij / q_ij), 0 log 0 := 0
    Tensor grad_z;     // n x d
    Tensor grad_mu;    // s x d
};

/// KL(P||Q) with P constant and Q = soft_assign(z, mu); gradients flow
/// through the Student-t kernel into z and mu.
KlResult kl_loss(const Tensor& p, const Tensor& q, const Tensor& z, const Tensor& mu);

/// Throws std::runtime_error unless every row of `dist` sums to 1 within
/// 1e-9 and all entries lie in [0, 1].
void check_row_stochastic(const Tensor& dist, const char* what);

struct MleConfig {
    std::size_t clusters = 10;  // s
    real_t gamma = real_t{0.1};
    std::size_t update_interval = 140;  // T, mini-batch iterations per target refresh
    real_t tol = real_t{0.001};         // stop when label-change fraction < tol
    std::size_t max_iterations = 14000;
    std::size_t batch_size = 256;
    std::string optimizer = "adam";
    real_t learning_rate = real_t{1e-3};
    /// Baseline (DCEC configuration): initialize centroids by k-means
    /// instead of agglomerative clustering.
    bool kmeans_init = false;
    /// Periodically re-anchor mu to fresh agglomerative centroids (every
    /// `ac_refresh_period` target refreshes).
    bool ac_refresh = false;
    std::size_t ac_refresh_period = 5;
    /// Forwarded to agglomerate(): subsample-then-assign above this size.
    std::size_t agg_subsample = 0;
    std::uint64_t seed = 0;
};

struct MleHistoryRow {
    std::size_t iteration;
    real_t l_r;
    real_t l_c;  // batch-mean KL
    real_t l;    // l_r + gamma * l_c
    real_t label_change;
};

struct MleResult {
    std::vector<std::size_t> labels;
    Tensor centroids;  // s x (d + side_dim)
    std::vector<MleHistoryRow> history;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<std::string> warnings;
};

/// Joint CAE-MLE training: L = L_r + gamma * L_c with centroids initialized
/// (and optionally re-anchored) by ward agglomeration on the embedding.
/// `side_features` (n x e), when given, are concatenated onto the embedding
/// for every clustering computation (the deep-IFL final stage); they carry
/// no gradient. Throws std::runtime_error on divergence.
MleResult train_cae_mle(CaeModel& model, const Tensor& images, const MleConfig& cfg,
                        const Tensor* side_features = nullptr);

void export_history_csv(const std::vector<MleHistoryRow>& history, const std::string& path);

}  // namespace deepclust

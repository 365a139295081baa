#include "deepclust/ifl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deepclust {

namespace {

// Stream tags for the per-round derived seeds; rounds stay decorrelated
// from each other and from the final stage, so executing them in any order
// (or on parallel workers) reproduces the same feature matrix.
constexpr std::uint64_t kFoldStream = 0xf01d;
constexpr std::uint64_t kRoundCaeStream = 0x1f10;
constexpr std::uint64_t kRoundMleStream = 0x2f10;
constexpr std::uint64_t kFinalCaeStream = 0xf1a1;
constexpr std::uint64_t kFinalMleStream = 0xf1a2;

Tensor gather_instances(const Tensor& images, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> shape = images.shape();
    shape[0] = idx.size();
    Tensor out(std::move(shape));
    const std::size_t stride = images.extent(0) ? images.size() / images.extent(0) : 0;
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(images.data() + idx[i] * stride, images.data() + (idx[i] + 1) * stride,
                  out.data() + i * stride);
    return out;
}

}  // namespace

InnerFolding inner_folds(std::size_t n, std::size_t r, std::uint64_t seed) {
    if (r < 2) throw std::invalid_argument("inner_folds: need at least two folds");
    if (n < r) throw std::invalid_argument("inner_folds: fewer instances (" + std::to_string(n) +
                                           ") than folds (" + std::to_string(r) + ")");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(static_cast<Rng::result_type>(derive_seed(seed, kFoldStream)));
    std::shuffle(order.begin(), order.end(), rng);

    InnerFolding folding;
    folding.r = r;
    folding.seed = seed;
    folding.assignment.resize(n);
    // Round-robin over the shuffled order keeps fold sizes within one of
    // each other for any n.
    for (std::size_t i = 0; i < n; ++i) folding.assignment[order[i]] = i % r;
    return folding;
}

IflFeatureEntry extract_error_features(const Tensor& z, const Tensor& centroids,
                                       const std::vector<std::size_t>& sizes) {
    if (centroids.ndim() != 2)
        throw std::invalid_argument("extract_error_features: centroids must be (s, d)");
    const std::size_t s = centroids.extent(0);
    const std::size_t d = centroids.extent(1);
    const bool row_vec = z.ndim() == 2 && z.extent(0) == 1 && z.extent(1) == d;
    if (!(row_vec || (z.ndim() == 1 && z.extent(0) == d)))
        throw std::invalid_argument("extract_error_features: embedding " + shape_str(z.shape()) +
                                    " does not match centroid width " + std::to_string(d));
    if (sizes.size() != s)
        throw std::invalid_argument("extract_error_features: got " + std::to_string(sizes.size()) +
                                    " cluster sizes for " + std::to_string(s) + " centroids");

    IflFeatureEntry entry;
    entry.weights.resize(s);
    for (std::size_t j = 0; j < s; ++j) {
        real_t ss = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const real_t diff = z[k] - centroids[j * d + k];
            ss += diff * diff;
        }
        entry.weights[j] = std::sqrt(ss);
        if (entry.weights[j] < entry.weights[entry.closest]) entry.closest = j;
    }
    entry.weight_closest = entry.weights[entry.closest];

    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total == 0) throw std::invalid_argument("extract_error_features: empty clustering");
    entry.confidence = real_t(sizes[entry.closest]) / real_t(total);
    return entry;
}

Tensor normalize_features(const Tensor& blocks) {
    if (blocks.ndim() != 2)
        throw std::invalid_argument("normalize_features: expected an (n, m) block");
    const std::size_t n = blocks.extent(0), m = blocks.extent(1);
    Tensor out({n, m});
    for (std::size_t j = 0; j < m; ++j) {
        real_t lo = blocks[j], hi = blocks[j];
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, blocks[i * m + j]);
            hi = std::max(hi, blocks[i * m + j]);
        }
        if (hi == lo) {
            for (std::size_t i = 0; i < n; ++i) out[i * m + j] = 0;
        } else {
            const real_t scale = real_t{5} / (hi - lo);
            for (std::size_t i = 0; i < n; ++i)
                out[i * m + j] = (blocks[i * m + j] - lo) * scale - real_t{2.5};
        }
    }
    return out;
}

InnerRoundResult run_inner_round(const Tensor& inner_train, const Tensor& inner_test,
                                 const IflRoundConfig& cfg) {
    InnerRoundResult round;
    round.model = build_cae(cfg.cae);
    pretrain(round.model, inner_train);
    MleResult mle = train_cae_mle(round.model, inner_train, cfg.mle);
    round.train_labels = std::move(mle.labels);
    round.centroids = std::move(mle.centroids);

    round.cluster_sizes.assign(round.centroids.extent(0), 0);
    for (std::size_t label : round.train_labels) ++round.cluster_sizes[label];

    if (inner_test.extent(0) == 0) {
        round.z_test = Tensor({0, round.model.embedding_dim()});
    } else {
        round.z_test = encode_all(round.model, inner_test, cfg.cae.batch_size);
    }
    return round;
}

IflResult deep_ifl(const Tensor& images, const IflConfig& cfg) {
    if (images.ndim() != 4) throw std::invalid_argument("deep_ifl: images must be (n, c, h, w)");
    const std::size_t n = images.extent(0);
    const std::size_t s = cfg.mle.clusters;

    IflResult result;
    const InnerFolding folding = inner_folds(n, cfg.folds, cfg.seed);
    result.fold_ids = folding.assignment;
    result.raw_features = Tensor({n, s + 2});

    const std::size_t round_budget =
        cfg.round_epochs ? cfg.round_epochs : std::max<std::size_t>(1, cfg.cae.epochs / 2);

    for (std::size_t k = 0; k < cfg.folds; ++k) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < n; ++i)
            (folding.assignment[i] == k ? test_idx : train_idx).push_back(i);

        IflRoundConfig round_cfg;
        round_cfg.cae = cfg.cae;
        round_cfg.cae.epochs = round_budget;
        round_cfg.cae.seed = derive_seed(cfg.seed, kRoundCaeStream + k);
        round_cfg.mle = cfg.mle;
        round_cfg.mle.seed = derive_seed(cfg.seed, kRoundMleStream + k);

        InnerRoundResult round;
        try {
            round = run_inner_round(gather_instances(images, train_idx),
                                    gather_instances(images, test_idx), round_cfg);
        } catch (const std::exception& e) {
            throw std::runtime_error("deep_ifl: round " + std::to_string(k) +
                                     " failed: " + e.what());
        }

        const std::size_t d = round.z_test.extent(1);
        for (std::size_t t = 0; t < test_idx.size(); ++t) {
            const Tensor z({d}, std::vector<real_t>(round.z_test.data() + t * d,
                                                    round.z_test.data() + (t + 1) * d));
            const IflFeatureEntry entry =
                extract_error_features(z, round.centroids, round.cluster_sizes);
            real_t* row = result.raw_features.data() + test_idx[t] * (s + 2);
            row[0] = entry.confidence;
            for (std::size_t j = 0; j < s; ++j) row[1 + j] = entry.weights[j];
            row[s + 1] = entry.weight_closest;
        }
    }

    result.features = normalize_features(result.raw_features);

    // Final stage: CAE-MLE over the full data with the error features
    // concatenated onto the embedding (full pretraining budget).
    CaeConfig final_cae = cfg.cae;
    final_cae.seed = derive_seed(cfg.seed, kFinalCaeStream);
    CaeModel model = build_cae(final_cae);
    pretrain(model, images);
    MleConfig final_mle = cfg.mle;
    final_mle.seed = derive_seed(cfg.seed, kFinalMleStream);
    result.final_stage = train_cae_mle(model, images, final_mle, &result.features);
    result.labels = result.final_stage.labels;
    result.final_model = std::move(model);
    return result;
}

void export_feature_csv(const IflResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write feature csv " + path);
    const std::size_t n = result.raw_features.extent(0);
    const std::size_t m = result.raw_features.extent(1);  // s + 2
    f << "instance_id,fold_id,confidence";
    for (std::size_t j = 1; j + 1 < m; ++j) f << ",w_" << j;
    f << ",w_closest\n";
    f << std::setprecision(17);
    for (std::size_t i = 0; i < n; ++i) {
        f << i << ',' << result.fold_ids[i];
        for (std::size_t j = 0; j < m; ++j) f << ',' << result.raw_features[i * m + j];
        f << '\n';
    }
}

}  // namespace deepclust

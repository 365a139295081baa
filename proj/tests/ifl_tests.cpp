#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepclust/data_io.hpp"
#include "deepclust/ifl.hpp"
#include "deepclust/metrics.hpp"
#include "support/oracles.hpp"

using namespace deepclust;
namespace fs = std::filesystem;

namespace {

Tensor vec(std::vector<real_t> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor rows(std::vector<std::vector<real_t>> data) {
    Tensor t({data.size(), data.front().size()});
    std::size_t i = 0;
    for (const auto& r : data)
        for (real_t v : r) t[i++] = v;
    return t;
}

// Shared tiny setup: 8x8 blobs, two-stage CAE, three clusters.
IflConfig tiny_ifl(std::uint64_t seed) {
    IflConfig cfg;
    cfg.folds = 3;
    cfg.cae.channels = 1;
    cfg.cae.height = cfg.cae.width = 8;
    cfg.cae.embedding_dim = 5;
    cfg.cae.stack = {{4, 3, 2}, {8, 3, 2}};
    cfg.cae.epochs = 60;  // rounds run at half budget and still need to separate
    cfg.cae.batch_size = 30;
    cfg.mle.clusters = 3;
    cfg.mle.update_interval = 15;
    cfg.mle.max_iterations = 300;
    cfg.mle.batch_size = 30;
    cfg.seed = seed;
    return cfg;
}

std::vector<std::size_t> fold_sizes(const InnerFolding& f) {
    std::vector<std::size_t> sizes(f.r, 0);
    for (std::size_t a : f.assignment) ++sizes[a];
    return sizes;
}

}  // namespace

// ---------------------------------------------------------------------------
// folding
// ---------------------------------------------------------------------------

TEST_CASE("inner_folds balances folds within one instance") {
    const InnerFolding even = inner_folds(100, 10, 1);
    const auto se = fold_sizes(even);
    for (std::size_t c : se) CHECK(c == 10);

    const InnerFolding odd = inner_folds(101, 10, 1);
    const auto so = fold_sizes(odd);
    CHECK(*std::max_element(so.begin(), so.end()) == 11);
    CHECK(*std::min_element(so.begin(), so.end()) == 10);
    CHECK(std::count(so.begin(), so.end(), 11) == 1);
}

TEST_CASE("inner_folds partitions every instance exactly once") {
    const InnerFolding f = inner_folds(57, 4, 9);
    REQUIRE(f.assignment.size() == 57);
    for (std::size_t a : f.assignment) CHECK(a < 4);
    const auto sizes = fold_sizes(f);
    std::size_t total = 0;
    for (std::size_t c : sizes) {
        CHECK(c >= 57 / 4);
        total += c;
    }
    CHECK(total == 57);
}

TEST_CASE("inner_folds is deterministic per seed and varies across seeds") {
    const InnerFolding a = inner_folds(40, 5, 7), b = inner_folds(40, 5, 7);
    CHECK(a.assignment == b.assignment);
    const InnerFolding c = inner_folds(40, 5, 8);
    CHECK(a.assignment != c.assignment);
}

TEST_CASE("inner_folds rejects degenerate fold counts") {
    CHECK_THROWS_AS(inner_folds(10, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(inner_folds(3, 4, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// error features
// ---------------------------------------------------------------------------

TEST_CASE("extract_error_features reproduces the size-fraction confidence") {
    // Ten training instances split 7 / 3; z sits nearest the small cluster.
    const Tensor mu = rows({{10, 0}, {0, 0}});
    const IflFeatureEntry e = extract_error_features(vec({0.5, 0}), mu, {7, 3});
    CHECK(e.closest == 1);
    CHECK(e.confidence == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("extract_error_features reproduces the 3-4-5 fixture") {
    const Tensor mu = rows({{3, 4}, {0, 1}});
    const IflFeatureEntry e = extract_error_features(vec({0, 0}), mu, {6, 4});
    REQUIRE(e.weights.size() == 2);
    CHECK(e.weights[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(e.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.closest == 1);
    CHECK(e.weight_closest == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.confidence == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("extract_error_features gives weight zero at a centroid") {
    const Tensor mu = rows({{1, 2, 3}, {-4, 0, 2}});
    const IflFeatureEntry e = extract_error_features(vec({-4, 0, 2}), mu, {5, 5});
    CHECK(e.weights[1] == real_t{0});
    CHECK(e.weight_closest == real_t{0});
    CHECK(e.closest == 1);
    CHECK(e.confidence == doctest::Approx(0.5));
}

TEST_CASE("extract_error_features breaks argmin ties toward the lowest index") {
    const Tensor mu = rows({{1, 0}, {-1, 0}});
    const IflFeatureEntry e = extract_error_features(vec({0, 0}), mu, {2, 8});
    CHECK(e.closest == 0);
    CHECK(e.confidence == doctest::Approx(0.2));
}

TEST_CASE("extract_error_features accepts a 1xd row and validates shapes") {
    const Tensor mu = rows({{1, 0}, {0, 1}});
    const IflFeatureEntry e = extract_error_features(rows({{0.9, 0.1}}), mu, {1, 1});
    CHECK(e.closest == 0);
    CHECK_THROWS_AS(extract_error_features(vec({1, 2, 3}), mu, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(extract_error_features(vec({1, 2}), mu, {1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(extract_error_features(vec({1, 2}), mu, {0, 0}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

TEST_CASE("normalize_features maps column extremes onto -2.5 and 2.5") {
    const Tensor t = normalize_features(rows({{0}, {1}}));
    CHECK(t[0] == real_t{-2.5});
    CHECK(t[1] == real_t{2.5});

    const Tensor m = normalize_features(rows({{0}, {0.5}, {1}}));
    CHECK(m[0] == real_t{-2.5});
    CHECK(m[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m[2] == real_t{2.5});
}

TEST_CASE("normalize_features maps constant columns to zero") {
    const Tensor t = normalize_features(rows({{3, 0}, {3, 10}, {3, 5}}));
    CHECK(t[0] == real_t{0});
    CHECK(t[2] == real_t{0});
    CHECK(t[4] == real_t{0});
    CHECK(t[1] == real_t{-2.5});
    CHECK(t[3] == real_t{2.5});
}

TEST_CASE("normalize_features treats columns independently") {
    Rng rng(31);
    const Tensor block = oracles::random_tensor({12, 5}, rng, -3, 7);
    const Tensor norm = normalize_features(block);
    for (std::size_t j = 0; j < 5; ++j) {
        real_t lo = norm[j], hi = norm[j];
        for (std::size_t i = 1; i < 12; ++i) {
            lo = std::min(lo, norm[i * 5 + j]);
            hi = std::max(hi, norm[i * 5 + j]);
        }
        CHECK(lo == doctest::Approx(-2.5).epsilon(1e-12));
        CHECK(hi == doctest::Approx(2.5).epsilon(1e-12));
    }
}

// ---------------------------------------------------------------------------
// inner rounds
// ---------------------------------------------------------------------------

namespace {

IflRoundConfig tiny_round(std::uint64_t seed) {
    const IflConfig base = tiny_ifl(seed);
    IflRoundConfig cfg;
    cfg.cae = base.cae;
    cfg.cae.seed = seed;
    cfg.mle = base.mle;
    cfg.mle.seed = seed;
    return cfg;
}

std::vector<real_t> flatten_params(const CaeModel& m) {
    std::vector<real_t> all;
    for (const auto* stack : {&m.encoder, &m.decoder})
        for (const auto& layer : *stack) {
            all.insert(all.end(), layer.weight.values().begin(), layer.weight.values().end());
            all.insert(all.end(), layer.bias.values().begin(), layer.bias.values().end());
        }
    return all;
}

}  // namespace

TEST_CASE("run_inner_round recovers blob structure on the training fold") {
    const Dataset blobs = make_synthetic_blobs(3, 30, 8, real_t{0.03}, 101);
    // Use the first 60 as inner-train (classes still balanced by slicing
    // per class), remaining 30 as inner-test.
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t cls = 0; cls < 3; ++cls)
        for (std::size_t k = 0; k < 30; ++k)
            (k < 20 ? train_idx : test_idx).push_back(cls * 30 + k);
    Tensor train({60, 1, 8, 8}), test({30, 1, 8, 8});
    for (std::size_t i = 0; i < 60; ++i)
        std::copy(blobs.images.data() + train_idx[i] * 64, blobs.images.data() + (train_idx[i] + 1) * 64,
                  train.data() + i * 64);
    for (std::size_t i = 0; i < 30; ++i)
        std::copy(blobs.images.data() + test_idx[i] * 64, blobs.images.data() + (test_idx[i] + 1) * 64,
                  test.data() + i * 64);

    const InnerRoundResult round = run_inner_round(train, test, tiny_round(101));
    std::vector<std::size_t> truth(60);
    for (std::size_t i = 0; i < 60; ++i) truth[i] = train_idx[i] / 30;
    CHECK(acc(truth, round.train_labels) == doctest::Approx(1.0));
    CHECK(round.z_test.shape() == std::vector<std::size_t>{30, 5});
    std::size_t total = 0;
    for (std::size_t c : round.cluster_sizes) total += c;
    CHECK(total == 60);
}

TEST_CASE("run_inner_round never lets the test fold touch the model") {
    const Dataset blobs = make_synthetic_blobs(2, 12, 8, real_t{0.05}, 103);
    Tensor train({20, 1, 8, 8}), test({4, 1, 8, 8});
    std::size_t ti = 0, si = 0;
    for (std::size_t i = 0; i < 24; ++i) {
        const bool is_test = (i % 12) >= 10;  // last two of each class
        real_t* dst = is_test ? test.data() + (si++) * 64 : train.data() + (ti++) * 64;
        std::copy(blobs.images.data() + i * 64, blobs.images.data() + (i + 1) * 64, dst);
    }

    IflRoundConfig cfg = tiny_round(103);
    cfg.mle.clusters = 2;
    const InnerRoundResult a = run_inner_round(train, test, cfg);

    Tensor perturbed = test;
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += real_t{0.37};
    const InnerRoundResult b = run_inner_round(train, perturbed, cfg);

    const auto pa = flatten_params(a.model), pb = flatten_params(b.model);
    REQUIRE(pa.size() == pb.size());
    CHECK(std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(real_t)) == 0);
    CHECK(std::memcmp(a.centroids.data(), b.centroids.data(),
                      a.centroids.size() * sizeof(real_t)) == 0);
    CHECK(a.train_labels == b.train_labels);
    // The embeddings of the perturbed fold do change.
    bool differs = false;
    for (std::size_t i = 0; i < a.z_test.size(); ++i) differs |= (a.z_test[i] != b.z_test[i]);
    CHECK(differs);
}

TEST_CASE("run_inner_round is deterministic for a fixed seed") {
    const Dataset blobs = make_synthetic_blobs(2, 10, 8, real_t{0.05}, 107);
    Tensor train({16, 1, 8, 8}), test({4, 1, 8, 8});
    std::copy(blobs.images.data(), blobs.images.data() + 16 * 64, train.data());
    std::copy(blobs.images.data() + 16 * 64, blobs.images.data() + 20 * 64, test.data());
    IflRoundConfig cfg = tiny_round(107);
    cfg.mle.clusters = 2;
    const InnerRoundResult a = run_inner_round(train, test, cfg);
    const InnerRoundResult b = run_inner_round(train, test, cfg);
    CHECK(std::memcmp(a.centroids.data(), b.centroids.data(),
                      a.centroids.size() * sizeof(real_t)) == 0);
    CHECK(std::memcmp(a.z_test.data(), b.z_test.data(), a.z_test.size() * sizeof(real_t)) == 0);
}

// ---------------------------------------------------------------------------
// end-to-end deep IFL
// ---------------------------------------------------------------------------

TEST_CASE("deep_ifl solves separable blobs and satisfies the block invariants") {
    const Dataset blobs = make_synthetic_blobs(3, 30, 8, real_t{0.03}, 113);
    const IflConfig cfg = tiny_ifl(113);
    const IflResult result = deep_ifl(blobs.images, cfg);

    const std::size_t n = 90, s = 3, m = s + 2;
    CHECK(acc(blobs.labels, result.labels) == doctest::Approx(1.0));
    CHECK(result.raw_features.shape() == std::vector<std::size_t>{n, m});
    CHECK(result.features.shape() == std::vector<std::size_t>{n, m});
    REQUIRE(result.fold_ids.size() == n);

    for (std::size_t i = 0; i < n; ++i) {
        const real_t* row = result.raw_features.data() + i * m;
        // confidence is a size fraction; weights are distances.
        CHECK(row[0] > 0);
        CHECK(row[0] <= 1);
        real_t min_w = row[1];
        for (std::size_t j = 1; j <= s; ++j) {
            CHECK(row[j] >= 0);
            min_w = std::min(min_w, row[j]);
        }
        // weight-of-closest is the minimum of the weight sub-vector.
        CHECK(row[s + 1] == min_w);
    }

    // Within a round, confidence grouped by closest cluster is constant.
    std::map<std::pair<std::size_t, std::size_t>, real_t> group_conf;
    for (std::size_t i = 0; i < n; ++i) {
        const real_t* row = result.raw_features.data() + i * m;
        std::size_t closest = 0;
        for (std::size_t j = 1; j < s; ++j)
            if (row[1 + j] < row[1 + closest]) closest = j;
        const auto key = std::make_pair(result.fold_ids[i], closest);
        const auto [it, fresh] = group_conf.emplace(key, row[0]);
        if (!fresh) CHECK(it->second == row[0]);
    }
}

TEST_CASE("deep_ifl featurizes every instance exactly once and deterministically") {
    const Dataset blobs = make_synthetic_blobs(2, 15, 8, real_t{0.05}, 127);
    IflConfig cfg = tiny_ifl(127);
    cfg.mle.clusters = 2;
    const IflResult a = deep_ifl(blobs.images, cfg);

    // Coverage: fold ids partition the instances; every raw row was
    // written (no row is all zeros, since weights include a positive
    // distance to the far centroid).
    std::set<std::size_t> folds_seen;
    for (std::size_t f : a.fold_ids) folds_seen.insert(f);
    CHECK(folds_seen.size() == cfg.folds);
    for (std::size_t i = 0; i < 30; ++i) {
        real_t row_sum = 0;
        for (std::size_t j = 0; j < 4; ++j) row_sum += std::abs(a.raw_features[i * 4 + j]);
        CHECK(row_sum > 0);
    }

    const IflResult b = deep_ifl(blobs.images, cfg);
    CHECK(a.labels == b.labels);
    CHECK(a.fold_ids == b.fold_ids);
    CHECK(std::memcmp(a.raw_features.data(), b.raw_features.data(),
                      a.raw_features.size() * sizeof(real_t)) == 0);
}

TEST_CASE("deep_ifl keeps the feature count at s plus two") {
    const Dataset blobs = make_synthetic_blobs(4, 10, 8, real_t{0.04}, 131);
    IflConfig cfg = tiny_ifl(131);
    cfg.folds = 4;
    cfg.mle.clusters = 4;
    cfg.mle.batch_size = 40;
    cfg.cae.batch_size = 40;
    const IflResult result = deep_ifl(blobs.images, cfg);
    CHECK(result.features.extent(1) == 6);
    // Final-stage centroids live in the augmented space d + s + 2.
    CHECK(result.final_stage.centroids.shape() == std::vector<std::size_t>{4, 5 + 6});
}

TEST_CASE("export_feature_csv writes ids, fold provenance, and the block") {
    const Dataset blobs = make_synthetic_blobs(2, 6, 8, real_t{0.05}, 137);
    IflConfig cfg = tiny_ifl(137);
    cfg.mle.clusters = 2;
    cfg.folds = 2;
    const IflResult result = deep_ifl(blobs.images, cfg);

    const fs::path path =
        fs::temp_directory_path() / ("deepclust_ifl_" + std::to_string(std::random_device{}()) + ".csv");
    export_feature_csv(result, path.string());

    std::ifstream in(path);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "instance_id,fold_id,confidence,w_1,w_2,w_closest");
    std::size_t rows_read = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 6);
        CHECK(std::stoul(cells[0]) == rows_read);
        CHECK(std::stoul(cells[1]) == result.fold_ids[rows_read]);
        CHECK(std::stod(cells[2]) == doctest::Approx(double(result.raw_features[rows_read * 4]))
                                          .epsilon(1e-15));
        ++rows_read;
    }
    CHECK(rows_read == 12);
    fs::remove(path);
}

TEST_CASE("deep_ifl names the failing fold when a round diverges") {
    const Dataset blobs = make_synthetic_blobs(2, 8, 8, real_t{0.05}, 139);
    IflConfig cfg = tiny_ifl(139);
    cfg.mle.clusters = 2;
    // More clusters than a fold's training split can ever fill is the
    // cheapest way to make a round fail deterministically.
    cfg.mle.clusters = 200;
    CHECK_THROWS_WITH_AS(deep_ifl(blobs.images, cfg), doctest::Contains("round 0"),
                         std::runtime_error);
}

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "deepclust/cae.hpp"
#include "deepclust/data_io.hpp"
#include "deepclust/embedded.hpp"
#include "deepclust/ifl.hpp"
#include "deepclust/kmeans.hpp"
#include "deepclust/metrics.hpp"
#include "deepclust/ward.hpp"

namespace py = pybind11;
using namespace deepclust;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
    std::vector<std::size_t> shape(std::size_t(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[std::size_t(i)] = std::size_t(arr.shape(i));
    Tensor t(std::move(shape));
    const double* src = arr.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = real_t(src[i]);
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.ndim());
    for (std::size_t i = 0; i < t.ndim(); ++i) shape[i] = py::ssize_t(t.extent(i));
    py::array_t<double> arr(shape);
    double* dst = arr.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] = double(t[i]);
    return arr;
}

py::array_t<std::int64_t> labels_array(const std::vector<std::size_t>& labels) {
    py::array_t<std::int64_t> arr(py::ssize_t(labels.size()));
    std::int64_t* dst = arr.mutable_data();
    for (std::size_t i = 0; i < labels.size(); ++i) dst[i] = std::int64_t(labels[i]);
    return arr;
}

std::vector<std::size_t> labels_from(const py::object& obj) {
    const auto arr = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>::ensure(obj);
    if (!arr || arr.ndim() != 1) throw std::invalid_argument("labels: expected a 1-d integer array");
    std::vector<std::size_t> out(std::size_t(arr.shape(0)));
    const std::int64_t* src = arr.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (src[i] < 0) throw std::invalid_argument("labels: negative label id");
        out[i] = std::size_t(src[i]);
    }
    return out;
}

/// Accepts (n, c, h, w) or (n, h, w); the latter gains a unit channel axis.
Tensor images_from(const DoubleArray& arr) {
    if (arr.ndim() == 4) return tensor_from(arr);
    if (arr.ndim() == 3) {
        Tensor t = tensor_from(arr);
        return Tensor({t.extent(0), 1, t.extent(1), t.extent(2)},
                      std::vector<real_t>(t.data(), t.data() + t.size()));
    }
    throw std::invalid_argument("images: expected an (n, c, h, w) or (n, h, w) array");
}

std::vector<ConvStage> stack_from(const py::object& obj) {
    std::vector<ConvStage> stack;
    for (const auto& item : py::iter(obj)) {
        const auto triple = item.cast<std::vector<std::size_t>>();
        if (triple.size() != 3)
            throw std::invalid_argument("stack: each stage must be (filters, kernel, stride)");
        stack.push_back({triple[0], triple[1], triple[2]});
    }
    if (stack.empty()) throw std::invalid_argument("stack: at least one stage required");
    return stack;
}

CaeConfig cae_config(const Tensor& images, std::size_t embedding_dim, const py::object& stack,
                     std::size_t epochs, std::size_t batch_size, double learning_rate,
                     std::uint64_t seed) {
    CaeConfig cfg;
    cfg.channels = images.extent(1);
    cfg.height = images.extent(2);
    cfg.width = images.extent(3);
    cfg.embedding_dim = embedding_dim;
    if (!stack.is_none()) cfg.stack = stack_from(stack);
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = real_t(learning_rate);
    cfg.seed = seed;
    return cfg;
}

MleConfig mle_config(std::size_t clusters, double gamma, std::size_t update_interval, double tol,
                     std::size_t max_iterations, std::size_t batch_size, double learning_rate,
                     bool kmeans_init, bool ac_refresh, std::size_t agg_subsample,
                     std::uint64_t seed) {
    MleConfig cfg;
    cfg.clusters = clusters;
    cfg.gamma = real_t(gamma);
    cfg.update_interval = update_interval;
    cfg.tol = real_t(tol);
    cfg.max_iterations = max_iterations;
    cfg.batch_size = batch_size;
    cfg.learning_rate = real_t(learning_rate);
    cfg.kmeans_init = kmeans_init;
    cfg.ac_refresh = ac_refresh;
    cfg.agg_subsample = agg_subsample;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "deep embedded clustering: convolutional autoencoder + agglomerative "
              "maximum-likelihood estimation and deep inverse feature learning";

    m.def(
        "acc",
        [](const py::object& y, const py::object& c) { return acc(labels_from(y), labels_from(c)); },
        py::arg("y"), py::arg("c"),
        "Clustering accuracy under the optimal cluster-to-class assignment.");

    m.def(
        "nmi",
        [](const py::object& y, const py::object& c) { return nmi(labels_from(y), labels_from(c)); },
        py::arg("y"), py::arg("c"), "Normalized mutual information (arithmetic-mean denominator).");

    m.def(
        "soft_assign",
        [](const DoubleArray& z, const DoubleArray& mu) {
            return array_from(soft_assign(tensor_from(z), tensor_from(mu)));
        },
        py::arg("z"), py::arg("mu"),
        "Student-t soft assignment of (n, d) embeddings to (s, d) centroids.");

    m.def(
        "target_distribution",
        [](const DoubleArray& q) { return array_from(target_distribution(tensor_from(q))); },
        py::arg("q"), "Sharpened self-training target p_ij = (q_ij^2 / f_j) / sum_j'.");

    m.def(
        "hard_labels",
        [](const DoubleArray& q) { return labels_array(hard_labels(tensor_from(q))); },
        py::arg("q"), "Row-wise argmax, ties to the lowest cluster id.");

    m.def(
        "agglomerate",
        [](const DoubleArray& points, std::size_t s, std::size_t subsample, std::uint64_t seed) {
            AgglomerateOptions opts;
            opts.subsample_limit = subsample;
            opts.seed = seed;
            const AgglomerateResult r = agglomerate(tensor_from(points), s, opts);
            return py::make_tuple(labels_array(r.flat.labels), array_from(r.flat.centroids),
                                  labels_array(r.flat.sizes));
        },
        py::arg("points"), py::arg("s"), py::arg("subsample") = 0, py::arg("seed") = 0,
        "Ward agglomeration of (n, d) points cut at s clusters; returns "
        "(labels, centroids, sizes).");

    m.def(
        "kmeans",
        [](const DoubleArray& points, std::size_t s, std::uint64_t seed, std::size_t restarts,
           std::size_t max_iter) {
            const KmeansResult r = kmeans(tensor_from(points), s, seed, restarts, max_iter);
            return py::make_tuple(labels_array(r.labels), array_from(r.centroids),
                                  double(r.inertia));
        },
        py::arg("points"), py::arg("s"), py::arg("seed") = 0, py::arg("restarts") = 10,
        py::arg("max_iter") = 300,
        "Seeded k-means++ (best of `restarts` runs); returns (labels, centroids, inertia).");

    m.def(
        "make_synthetic_blobs",
        [](std::size_t classes, std::size_t per_class, std::size_t image_size, double sigma,
           std::uint64_t seed) {
            const Dataset d = make_synthetic_blobs(classes, per_class, image_size, real_t(sigma), seed);
            return py::make_tuple(array_from(d.images), labels_array(d.labels));
        },
        py::arg("classes"), py::arg("per_class"), py::arg("image_size"), py::arg("sigma") = 0.05,
        py::arg("seed") = 1,
        "Separable synthetic image blobs; returns (images (n, 1, h, w), labels).");

    m.def(
        "cae_mle",
        [](const DoubleArray& images_arr, std::size_t clusters, std::size_t embedding_dim,
           const py::object& stack, std::size_t epochs, std::size_t batch_size,
           double learning_rate, double gamma, std::size_t update_interval, double tol,
           std::size_t max_iterations, bool kmeans_init, bool ac_refresh, std::size_t agg_subsample,
           std::uint64_t seed) {
            const Tensor images = images_from(images_arr);
            CaeModel model = build_cae(cae_config(images, embedding_dim, stack, epochs, batch_size,
                                                  learning_rate, seed));
            const PretrainReport report = pretrain(model, images);
            const MleResult r = train_cae_mle(
                model, images,
                mle_config(clusters, gamma, update_interval, tol, max_iterations, batch_size,
                           learning_rate, kmeans_init, ac_refresh, agg_subsample, seed));
            py::dict out;
            out["labels"] = labels_array(r.labels);
            out["centroids"] = array_from(r.centroids);
            out["embedding"] = array_from(encode_all(model, images, batch_size));
            out["converged"] = r.converged;
            out["iterations"] = r.iterations;
            out["pretrain_loss"] = py::cast(std::vector<double>(report.history.begin(),
                                                                report.history.end()));
            out["warnings"] = py::cast(r.warnings);
            return out;
        },
        py::arg("images"), py::arg("clusters"), py::kw_only(), py::arg("embedding_dim") = 10,
        py::arg("stack") = py::none(), py::arg("epochs") = 200, py::arg("batch_size") = 256,
        py::arg("learning_rate") = 1e-3, py::arg("gamma") = 0.1, py::arg("update_interval") = 140,
        py::arg("tol") = 1e-3, py::arg("max_iterations") = 14000, py::arg("kmeans_init") = false,
        py::arg("ac_refresh") = false, py::arg("agg_subsample") = 0, py::arg("seed") = 0,
        "Pretrains a convolutional autoencoder and jointly minimizes reconstruction "
        "plus gamma-weighted clustering KL; centroids are anchored by ward "
        "agglomeration on the embedding.");

    m.def(
        "deep_ifl",
        [](const DoubleArray& images_arr, std::size_t clusters, std::size_t folds,
           std::size_t embedding_dim, const py::object& stack, std::size_t epochs,
           std::size_t batch_size, double learning_rate, double gamma, std::size_t update_interval,
           double tol, std::size_t max_iterations, std::size_t round_epochs,
           std::size_t agg_subsample, std::uint64_t seed) {
            const Tensor images = images_from(images_arr);
            IflConfig cfg;
            cfg.folds = folds;
            cfg.cae = cae_config(images, embedding_dim, stack, epochs, batch_size, learning_rate,
                                 seed);
            cfg.mle = mle_config(clusters, gamma, update_interval, tol, max_iterations, batch_size,
                                 learning_rate, false, false, agg_subsample, seed);
            cfg.round_epochs = round_epochs;
            cfg.seed = seed;
            const IflResult r = deep_ifl(images, cfg);
            py::dict out;
            out["labels"] = labels_array(r.labels);
            out["fold_ids"] = labels_array(r.fold_ids);
            out["features"] = array_from(r.features);
            out["raw_features"] = array_from(r.raw_features);
            out["centroids"] = array_from(r.final_stage.centroids);
            out["converged"] = r.final_stage.converged;
            out["iterations"] = r.final_stage.iterations;
            return out;
        },
        py::arg("images"), py::arg("clusters"), py::kw_only(), py::arg("folds") = 10,
        py::arg("embedding_dim") = 10, py::arg("stack") = py::none(), py::arg("epochs") = 200,
        py::arg("batch_size") = 256, py::arg("learning_rate") = 1e-3, py::arg("gamma") = 0.1,
        py::arg("update_interval") = 140, py::arg("tol") = 1e-3,
        py::arg("max_iterations") = 14000, py::arg("round_epochs") = 0,
        py::arg("agg_subsample") = 0, py::arg("seed") = 0,
        "Deep inverse feature learning: per-fold inner clustering rounds produce an "
        "error-feature block that augments the embedding of a final joint run.");
}

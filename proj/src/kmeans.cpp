#include "deepclust/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace deepclust {

namespace {

real_t sq_dist(const real_t* a, const real_t* b, std::size_t d) {
    real_t acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
        const real_t diff = a[k] - b[k];
        acc += diff * diff;
    }
    return acc;
}

Tensor plus_plus_seed(const Tensor& points, std::size_t s, Rng& rng) {
    const std::size_t n = points.extent(0), d = points.extent(1);
    Tensor cents({s, d});
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t pick = first(rng);
    std::copy(points.data() + pick * d, points.data() + (pick + 1) * d, cents.data());

    std::vector<real_t> dist2(n);
    for (std::size_t i = 0; i < n; ++i) dist2[i] = sq_dist(points.data() + i * d, cents.data(), d);

    for (std::size_t j = 1; j < s; ++j) {
        const real_t total = std::accumulate(dist2.begin(), dist2.end(), real_t{0});
        if (total <= 0) {
            // All remaining mass is on already-chosen points (duplicates);
            // fall back to a uniform draw.
            pick = first(rng);
        } else {
            std::uniform_real_distribution<real_t> u(0, total);
            real_t target = u(rng), acc = 0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy(points.data() + pick * d, points.data() + (pick + 1) * d, cents.data() + j * d);
        for (std::size_t i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], sq_dist(points.data() + i * d, cents.data() + j * d, d));
        }
    }
    return cents;
}

KmeansResult lloyd(const Tensor& points, std::size_t s, Tensor cents, std::size_t max_iter) {
    const std::size_t n = points.extent(0), d = points.extent(1);
    KmeansResult res;
    res.labels.assign(n, 0);
    std::vector<std::size_t> counts(s);

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            real_t best_d = sq_dist(points.data() + i * d, cents.data(), d);
            for (std::size_t j = 1; j < s; ++j) {
                const real_t dj = sq_dist(points.data() + i * d, cents.data() + j * d, d);
                if (dj < best_d) {
                    best_d = dj;
                    best = j;
                }
            }
            if (res.labels[i] != best) {
                res.labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        std::fill(counts.begin(), counts.end(), 0);
        Tensor next({s, d});
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[res.labels[i]];
            for (std::size_t k = 0; k < d; ++k) next[res.labels[i] * d + k] += points[i * d + k];
        }
        for (std::size_t j = 0; j < s; ++j) {
            if (counts[j] == 0) {
                // Keep the old centroid for an emptied cluster.
                std::copy(cents.data() + j * d, cents.data() + (j + 1) * d, next.data() + j * d);
            } else {
                for (std::size_t k = 0; k < d; ++k) next[j * d + k] /= static_cast<real_t>(counts[j]);
            }
        }
        cents = std::move(next);
    }

    res.centroids = std::move(cents);
    res.inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
        res.inertia += sq_dist(points.data() + i * d, res.centroids.data() + res.labels[i] * d, d);
    }
    return res;
}

}  // namespace

KmeansResult kmeans(const Tensor& points, std::size_t s, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iter) {
    if (points.ndim() != 2) throw std::invalid_argument("kmeans: points must be (n, d)");
    const std::size_t n = points.extent(0);
    if (s < 1 || n < s) throw std::invalid_argument("kmeans: need n >= s >= 1");
    require_finite(points, "kmeans points");

    KmeansResult best;
    best.inertia = std::numeric_limits<real_t>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        Rng rng(static_cast<Rng::result_type>(derive_seed(seed, 0x6d00 + r)));
        KmeansResult cur = lloyd(points, s, plus_plus_seed(points, s, rng), max_iter);
        if (cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

}  // namespace deepclust

#include "deepclust/ward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
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

real_t ward_cost(std::size_t na, const real_t* ca, std::size_t nb, const real_t* cb, std::size_t d) {
    const real_t fa = static_cast<real_t>(na), fb = static_cast<real_t>(nb);
    return fa * fb / (fa + fb) * sq_dist(ca, cb, d);
}

// (min-id, max-id) ordering used for deterministic tie-breaking.
bool pair_less(std::size_t a1, std::size_t b1, std::size_t a2, std::size_t b2) {
    const std::size_t lo1 = std::min(a1, b1), hi1 = std::max(a1, b1);
    const std::size_t lo2 = std::min(a2, b2), hi2 = std::max(a2, b2);
    return lo1 != lo2 ? lo1 < lo2 : hi1 < hi2;
}

struct Dsu {
    std::vector<std::size_t> parent;
    explicit Dsu(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

// Raw NN-chain merge trace in discovery order. Clusters are identified by a
// representative leaf so the relabeling pass can run on any merge order.
struct RawMerge {
    std::size_t leaf_a, leaf_b;
    real_t cost;
};

std::vector<RawMerge> nn_chain(const Tensor& points) {
    const std::size_t n = points.extent(0);
    const std::size_t d = points.extent(1);

    // Cluster pool: slots 0..2n-2; centroid/size valid while alive.
    std::vector<real_t> cent((2 * n - 1) * d);
    std::vector<std::size_t> size(2 * n - 1, 0);
    std::copy(points.data(), points.data() + n * d, cent.begin());
    std::fill(size.begin(), size.begin() + static_cast<std::ptrdiff_t>(n), 1);

    std::vector<std::size_t> alive(n);
    std::iota(alive.begin(), alive.end(), 0);
    std::vector<std::size_t> rep(2 * n - 1);  // smallest leaf of each pool slot
    std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(n), 0);

    std::vector<std::size_t> chain;
    chain.reserve(n);
    std::vector<RawMerge> merges;
    merges.reserve(n - 1);
    std::size_t next_id = n;

    auto nearest = [&](std::size_t x) {
        std::size_t best = alive[0] == x ? alive[1] : alive[0];
        real_t best_cost = ward_cost(size[x], &cent[x * d], size[best], &cent[best * d], d);
        for (std::size_t idx = 0; idx < alive.size(); ++idx) {
            const std::size_t y = alive[idx];
            if (y == x || y == best) continue;
            const real_t c = ward_cost(size[x], &cent[x * d], size[y], &cent[y * d], d);
            if (c < best_cost || (c == best_cost && pair_less(x, y, x, best))) {
                best_cost = c;
                best = y;
            }
        }
        return std::pair<std::size_t, real_t>{best, best_cost};
    };

    while (merges.size() + 1 < n) {
        if (chain.empty()) {
            chain.push_back(*std::min_element(alive.begin(), alive.end()));
        }
        while (true) {
            const std::size_t top = chain.back();
            auto [nn, cost] = nearest(top);
            if (chain.size() >= 2 && nn == chain[chain.size() - 2]) {
                // Mutual nearest neighbors: merge top and nn.
                chain.pop_back();
                chain.pop_back();
                const std::size_t a = std::min(top, nn), b = std::max(top, nn);
                const std::size_t id = next_id++;
                const real_t wa = static_cast<real_t>(size[a]), wb = static_cast<real_t>(size[b]);
                for (std::size_t k = 0; k < d; ++k) {
                    cent[id * d + k] = (wa * cent[a * d + k] + wb * cent[b * d + k]) / (wa + wb);
                }
                size[id] = size[a] + size[b];
                rep[id] = std::min(rep[a], rep[b]);
                alive.erase(std::remove_if(alive.begin(), alive.end(),
                                           [&](std::size_t v) { return v == a || v == b; }),
                            alive.end());
                alive.push_back(id);
                merges.push_back({rep[a], rep[b], cost});
                break;
            }
            chain.push_back(nn);
        }
    }
    return merges;
}

// Stable-sorts the raw merges by cost (discovery order breaks ties, which
// keeps every parent after its children for this reducible linkage) and
// rewrites cluster ids so the k-th sorted merge creates id n+k.
Dendrogram relabel(std::vector<RawMerge> raw, std::size_t n) {
    std::stable_sort(raw.begin(), raw.end(),
                     [](const RawMerge& x, const RawMerge& y) { return x.cost < y.cost; });

    Dsu dsu(n);
    std::vector<std::size_t> cluster_of_root(n), size_of_root(n, 1);
    std::iota(cluster_of_root.begin(), cluster_of_root.end(), 0);

    Dendrogram out;
    out.leaf_count = n;
    out.merges.reserve(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
        const std::size_t ra = dsu.find(raw[k].leaf_a);
        const std::size_t rb = dsu.find(raw[k].leaf_b);
        const std::size_t a = cluster_of_root[ra], b = cluster_of_root[rb];
        const std::size_t sz = size_of_root[ra] + size_of_root[rb];
        dsu.unite(ra, rb);
        const std::size_t root = dsu.find(ra);
        cluster_of_root[root] = n + k;
        size_of_root[root] = sz;
        out.merges.push_back({std::min(a, b), std::max(a, b), raw[k].cost, n + k, sz});
    }
    return out;
}

std::vector<std::size_t> assign_nearest(const Tensor& points, const Tensor& cents) {
    const std::size_t n = points.extent(0), d = points.extent(1), s = cents.extent(0);
    std::vector<std::size_t> labels(n);
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
        labels[i] = best;
    }
    return labels;
}

}  // namespace

real_t ward_delta(std::size_t size_a, const std::vector<real_t>& centroid_a, std::size_t size_b,
                  const std::vector<real_t>& centroid_b) {
    if (size_a == 0 || size_b == 0) throw std::invalid_argument("ward_delta: cluster sizes must be >= 1");
    if (centroid_a.size() != centroid_b.size()) {
        throw std::invalid_argument("ward_delta: centroid dimensions differ (" +
                                    std::to_string(centroid_a.size()) + " vs " +
                                    std::to_string(centroid_b.size()) + ")");
    }
    return ward_cost(size_a, centroid_a.data(), size_b, centroid_b.data(), centroid_a.size());
}

std::vector<std::size_t> cut(const Dendrogram& dendrogram, std::size_t s) {
    const std::size_t n = dendrogram.leaf_count;
    if (s < 1 || s > n) {
        throw std::invalid_argument("cut: cluster count " + std::to_string(s) + " outside [1, " +
                                    std::to_string(n) + "]");
    }
    Dsu dsu(2 * n - 1);
    for (std::size_t k = 0; k + s < n; ++k) {
        const Merge& m = dendrogram.merges[k];
        dsu.unite(m.a, m.new_id);
        dsu.unite(m.b, m.new_id);
    }
    std::vector<std::size_t> labels(n);
    std::vector<std::ptrdiff_t> seen(2 * n - 1, -1);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = dsu.find(i);
        if (seen[root] == -1) seen[root] = static_cast<std::ptrdiff_t>(next++);
        labels[i] = static_cast<std::size_t>(seen[root]);
    }
    return labels;
}

FlatClustering centroids(const Tensor& points, const std::vector<std::size_t>& labels) {
    const std::size_t n = points.extent(0), d = points.extent(1);
    if (labels.size() != n) throw std::invalid_argument("centroids: label count does not match points");
    const std::size_t s = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

    FlatClustering flat;
    flat.labels = labels;
    flat.centroids = Tensor({s, d});
    flat.sizes.assign(s, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++flat.sizes[labels[i]];
        for (std::size_t k = 0; k < d; ++k) flat.centroids[labels[i] * d + k] += points[i * d + k];
    }
    for (std::size_t j = 0; j < s; ++j) {
        if (flat.sizes[j] == 0) {
            throw std::invalid_argument("centroids: cluster " + std::to_string(j) + " is empty");
        }
        for (std::size_t k = 0; k < d; ++k) flat.centroids[j * d + k] /= static_cast<real_t>(flat.sizes[j]);
    }
    return flat;
}

AgglomerateResult agglomerate(const Tensor& points, std::size_t s, const AgglomerateOptions& opts) {
    if (points.ndim() != 2) throw std::invalid_argument("agglomerate: points must be (n, d)");
    const std::size_t n = points.extent(0);
    if (s < 1 || n < s) {
        throw std::invalid_argument("agglomerate: need n >= s >= 1, got n=" + std::to_string(n) +
                                    ", s=" + std::to_string(s));
    }
    require_finite(points, "agglomerate points");

    if (opts.subsample_limit > 0 && n > opts.subsample_limit && opts.subsample_limit >= s) {
        // Cluster a uniform subsample, then assign everyone to the nearest
        // resulting centroid.
        const std::size_t m = opts.subsample_limit;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(static_cast<Rng::result_type>(derive_seed(opts.seed, 0x5ab5)));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(m);
        std::sort(idx.begin(), idx.end());

        const std::size_t d = points.extent(1);
        Tensor sub({m, d});
        for (std::size_t i = 0; i < m; ++i) {
            std::copy(points.data() + idx[i] * d, points.data() + (idx[i] + 1) * d, sub.data() + i * d);
        }
        AgglomerateResult inner = agglomerate(sub, s, {});
        AgglomerateResult out;
        out.dendrogram = std::move(inner.dendrogram);
        std::vector<std::size_t> labels = assign_nearest(points, inner.flat.centroids);
        out.flat = centroids(points, labels);
        return out;
    }

    AgglomerateResult out;
    if (n == 1) {
        out.dendrogram.leaf_count = 1;
        out.flat = centroids(points, {0});
        return out;
    }
    out.dendrogram = relabel(nn_chain(points), n);
    out.flat = centroids(points, cut(out.dendrogram, s));
    return out;
}

void export_dendrogram_csv(const Dendrogram& dendrogram, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write dendrogram csv " + path);
    f << "a,b,cost,size\n";
    for (const auto& m : dendrogram.merges) {
        f << m.a << ',' << m.b << ',' << m.cost << ',' << m.size << '\n';
    }
}

}  // namespace deepclust

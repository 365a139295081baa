#include "deepclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace deepclust {

namespace {

void check_inputs(const std::vector<std::size_t>& y, const std::vector<std::size_t>& c) {
    if (y.empty()) throw std::invalid_argument("metrics: empty label vectors");
    if (y.size() != c.size()) {
        throw std::invalid_argument("metrics: label vectors differ in length (" + std::to_string(y.size()) +
                                    " vs " + std::to_string(c.size()) + ")");
    }
}

std::vector<std::vector<long long>> contingency(const std::vector<std::size_t>& y,
                                                const std::vector<std::size_t>& c, std::size_t& k,
                                                std::size_t& s) {
    k = *std::max_element(y.begin(), y.end()) + 1;
    s = *std::max_element(c.begin(), c.end()) + 1;
    if (k > 10000 || s > 10000) throw std::invalid_argument("metrics: more than 10^4 distinct labels");
    std::vector<std::vector<long long>> w(s, std::vector<long long>(k, 0));
    for (std::size_t i = 0; i < y.size(); ++i) ++w[c[i]][y[i]];
    return w;
}

// O(m^3) Hungarian algorithm (potentials formulation) for the min-cost
// perfect assignment on an m x m matrix.
long long hungarian_min_cost(const std::vector<std::vector<long long>>& cost) {
    const std::size_t m = cost.size();
    const long long inf = std::numeric_limits<long long>::max() / 4;
    std::vector<long long> u(m + 1, 0), v(m + 1, 0), minv(m + 1);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);

    for (std::size_t i = 1; i <= m; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            long long delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const long long cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    long long total = 0;
    for (std::size_t j = 1; j <= m; ++j) total += cost[p[j] - 1][j - 1];
    return total;
}

}  // namespace

double acc(const std::vector<std::size_t>& y, const std::vector<std::size_t>& c) {
    check_inputs(y, c);
    std::size_t k = 0, s = 0;
    const auto w = contingency(y, c, k, s);

    // Pad square and flip counts into costs so the min-cost assignment
    // maximizes matched mass.
    const std::size_t m = std::max(k, s);
    long long wmax = 0;
    for (const auto& row : w)
        for (long long v : row) wmax = std::max(wmax, v);
    std::vector<std::vector<long long>> cost(m, std::vector<long long>(m, wmax));
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t a = 0; a < k; ++a) cost[j][a] = wmax - w[j][a];

    const long long matched = static_cast<long long>(m) * wmax - hungarian_min_cost(cost);
    return static_cast<double>(matched) / static_cast<double>(y.size());
}

double nmi(const std::vector<std::size_t>& y, const std::vector<std::size_t>& c) {
    check_inputs(y, c);
    std::size_t k = 0, s = 0;
    const auto w = contingency(y, c, k, s);
    const double n = static_cast<double>(y.size());

    std::vector<long long> ny(k, 0), nc(s, 0);
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t a = 0; a < k; ++a) {
            ny[a] += w[j][a];
            nc[j] += w[j][a];
        }

    double hy = 0, hc = 0, mi = 0;
    for (std::size_t a = 0; a < k; ++a) {
        if (ny[a] == 0) continue;
        const double p = ny[a] / n;
        hy -= p * std::log(p);
    }
    for (std::size_t j = 0; j < s; ++j) {
        if (nc[j] == 0) continue;
        const double p = nc[j] / n;
        hc -= p * std::log(p);
    }
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t a = 0; a < k; ++a) {
            if (w[j][a] == 0) continue;
            const double pj = w[j][a] / n;
            mi += pj * std::log(pj * n * n / (static_cast<double>(nc[j]) * static_cast<double>(ny[a])));
        }

    const double denom = (hy + hc) / 2;
    return denom == 0 ? 0.0 : mi / denom;
}

}  // namespace deepclust

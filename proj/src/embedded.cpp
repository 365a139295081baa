#include "deepclust/embedded.hpp"

#include "deepclust/kmeans.hpp"
#include "deepclust/ward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace deepclust {

namespace {

void check_zd_mu(const Tensor& z, const Tensor& mu, const char* what) {
    if (z.ndim() != 2 || mu.ndim() != 2 || z.extent(1) != mu.extent(1)) {
        throw std::invalid_argument(std::string(what) + ": embedding " + shape_str(z.shape()) +
                                    " and centroids " + shape_str(mu.shape()) + " do not align");
    }
}

}  // namespace

Tensor soft_assign(const Tensor& z, const Tensor& mu) {
    check_zd_mu(z, mu, "soft_assign");
    const std::size_t n = z.extent(0), d = z.extent(1), s = mu.extent(0);
    Tensor q({n, s});
    for (std::size_t i = 0; i < n; ++i) {
        real_t norm = 0;
        for (std::size_t j = 0; j < s; ++j) {
            real_t d2 = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const real_t diff = z[i * d + k] - mu[j * d + k];
                d2 += diff * diff;
            }
            const real_t u = real_t{1} / (real_t{1} + d2);
            q[i * s + j] = u;
            norm += u;
        }
        for (std::size_t j = 0; j < s; ++j) q[i * s + j] /= norm;
    }
    return q;
}

Tensor target_distribution(const Tensor& q) {
    if (q.ndim() != 2) throw std::invalid_argument("target_distribution: Q must be (n, s)");
    const std::size_t n = q.extent(0), s = q.extent(1);

    std::vector<real_t> f(s, 0);  // column masses
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) f[j] += q[i * s + j];
    for (std::size_t j = 0; j < s; ++j) {
        if (!(f[j] > 0)) {
            throw std::runtime_error("target_distribution: zero column mass in cluster " + std::to_string(j));
        }
    }

    Tensor p({n, s});
    for (std::size_t i = 0; i < n; ++i) {
        real_t norm = 0;
        for (std::size_t j = 0; j < s; ++j) {
            const real_t v = q[i * s + j] * q[i * s + j] / f[j];
            p[i * s + j] = v;
            norm += v;
        }
        for (std::size_t j = 0; j < s; ++j) p[i * s + j] /= norm;
    }
    return p;
}

std::vector<std::size_t> hard_labels(const Tensor& q) {
    if (q.ndim() != 2) throw std::invalid_argument("hard_labels: Q must be (n, s)");
    const std::size_t n = q.extent(0), s = q.extent(1);
    std::vector<std::size_t> labels(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        real_t best = q[i * s];
        for (std::size_t j = 1; j < s; ++j) {
            if (q[i * s + j] > best) {
                best = q[i * s + j];
                labels[i] = j;
            }
        }
    }
    return labels;
}

KlResult kl_loss(const Tensor& p, const Tensor& q, const Tensor& z, const Tensor& mu) {
    require_same_shape(p, q, "kl_loss P/Q");
    check_zd_mu(z, mu, "kl_loss");
    const std::size_t n = z.extent(0), d = z.extent(1), s = mu.extent(0);
    if (p.extent(0) != n || p.extent(1) != s) {
        throw std::invalid_argument("kl_loss: P " + shape_str(p.shape()) + " does not match Z " +
                                    shape_str(z.shape()) + " and centroids " + shape_str(mu.shape()));
    }

    KlResult res;
    res.grad_z = Tensor({n, d});
    res.grad_mu = Tensor({s, d});

    double value = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
            const real_t pij = p[i * s + j];
            const real_t qij = q[i * s + j];
            if (pij > 0) value += static_cast<double>(pij) * std::log(static_cast<double>(pij / qij));

            // u_ij = (1+||z_i-mu_j||^2)^-1 recomputed from z and mu; the
            // gradient is 2 u_ij (p_ij - q_ij) (z_i - mu_j) on z_i and its
            // negative on mu_j.
            real_t d2 = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const real_t diff = z[i * d + k] - mu[j * d + k];
                d2 += diff * diff;
            }
            const real_t u = real_t{1} / (real_t{1} + d2);
            const real_t coef = 2 * u * (pij - qij);
            for (std::size_t k = 0; k < d; ++k) {
                const real_t diff = z[i * d + k] - mu[j * d + k];
                res.grad_z[i * d + k] += coef * diff;
                res.grad_mu[j * d + k] -= coef * diff;
            }
        }
    }
    res.value = static_cast<real_t>(value);
    return res;
}

void check_row_stochastic(const Tensor& dist, const char* what) {
    const std::size_t n = dist.extent(0), s = dist.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
        real_t sum = 0;
        for (std::size_t j = 0; j < s; ++j) {
            const real_t v = dist[i * s + j];
            if (!(v >= 0 && v <= 1)) {
                throw std::runtime_error(std::string(what) + ": entry out of [0,1] at row " +
                                         std::to_string(i));
            }
            sum += v;
        }
        if (std::abs(sum - real_t{1}) > real_t{1e-9}) {
            throw std::runtime_error(std::string(what) + ": row " + std::to_string(i) +
                                     " sums to " + std::to_string(static_cast<double>(sum)));
        }
    }
}

namespace {

// Copies selected image rows into a contiguous batch.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> shape = t.shape();
    shape[0] = hi - lo;
    Tensor out(shape);
    const std::size_t row = t.size() / t.extent(0);
    for (std::size_t b = lo; b < hi; ++b) {
        std::copy(t.data() + idx[b] * row, t.data() + (idx[b] + 1) * row, out.data() + (b - lo) * row);
    }
    return out;
}

// [Z | side] concatenation; side may be null (plain CAE-MLE).
Tensor augment(const Tensor& z, const Tensor* side, const std::vector<std::size_t>* idx = nullptr,
               std::size_t lo = 0) {
    if (side == nullptr) return z;
    const std::size_t n = z.extent(0), d = z.extent(1), e = side->extent(1);
    Tensor out({n, d + e});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(z.data() + i * d, z.data() + (i + 1) * d, out.data() + i * (d + e));
        const std::size_t src = idx == nullptr ? i : (*idx)[lo + i];
        std::copy(side->data() + src * e, side->data() + (src + 1) * e, out.data() + i * (d + e) + d);
    }
    return out;
}

real_t label_change_fraction(const std::vector<std::size_t>& now, const std::vector<std::size_t>& before) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < now.size(); ++i) changed += now[i] != before[i] ? 1 : 0;
    return static_cast<real_t>(changed) / static_cast<real_t>(now.size());
}

}  // namespace

MleResult train_cae_mle(CaeModel& model, const Tensor& images, const MleConfig& cfg,
                        const Tensor* side_features) {
    if (cfg.clusters < 1) throw std::invalid_argument("train_cae_mle: clusters must be >= 1");
    const std::size_t n = images.extent(0);
    if (side_features != nullptr &&
        (side_features->ndim() != 2 || side_features->extent(0) != n)) {
        throw std::invalid_argument("train_cae_mle: side features must be (n, e)");
    }

    const std::size_t s = cfg.clusters;
    const std::size_t d = model.embedding_dim();
    const std::size_t bsz = std::min<std::size_t>(std::max<std::size_t>(cfg.batch_size, 1), n);

    AgglomerateOptions agg_opts;
    agg_opts.subsample_limit = cfg.agg_subsample;
    agg_opts.seed = cfg.seed;

    auto anchor_centroids = [&](const Tensor& a) {
        return cfg.kmeans_init ? kmeans(a, s, derive_seed(cfg.seed, 0x4b)).centroids
                               : agglomerate(a, s, agg_opts).flat.centroids;
    };

    // (1)-(2): encode everything, anchor mu on the (augmented) embedding.
    Tensor a_full = augment(encode_all(model, images, bsz), side_features);
    Tensor mu = anchor_centroids(a_full);

    Tensor q_full = soft_assign(a_full, mu);
    check_row_stochastic(q_full, "Q");
    Tensor p_full = target_distribution(q_full);
    check_row_stochastic(p_full, "P");
    std::vector<std::size_t> labels_prev = hard_labels(q_full);

    MleResult res;
    auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t pos = n;  // forces an initial shuffle
    std::size_t epoch = 0;
    std::vector<std::size_t> empty_streak(s, 0);
    std::size_t refresh_count = 0;
    real_t last_delta = 1;

    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        if (iter > 0 && iter % cfg.update_interval == 0) {
            // (3a) full-data target refresh.
            ++refresh_count;
            a_full = augment(encode_all(model, images, bsz), side_features);
            if (cfg.ac_refresh && refresh_count % cfg.ac_refresh_period == 0) {
                mu = anchor_centroids(a_full);
            }
            q_full = soft_assign(a_full, mu);
            std::vector<std::size_t> labels_now = hard_labels(q_full);

            std::vector<std::size_t> sizes(s, 0);
            for (std::size_t l : labels_now) ++sizes[l];
            bool reanchored = false;
            for (std::size_t j = 0; j < s; ++j) {
                empty_streak[j] = sizes[j] == 0 ? empty_streak[j] + 1 : 0;
                if (empty_streak[j] >= 2 && !reanchored) {
                    res.warnings.push_back("cluster " + std::to_string(j) +
                                           " empty for two consecutive refreshes at iteration " +
                                           std::to_string(iter) + "; re-anchoring centroids");
                    mu = anchor_centroids(a_full);
                    q_full = soft_assign(a_full, mu);
                    labels_now = hard_labels(q_full);
                    std::fill(empty_streak.begin(), empty_streak.end(), 0);
                    reanchored = true;
                }
            }

            check_row_stochastic(q_full, "Q");
            p_full = target_distribution(q_full);
            check_row_stochastic(p_full, "P");

            last_delta = label_change_fraction(labels_now, labels_prev);
            labels_prev = std::move(labels_now);
            if (last_delta < cfg.tol) {
                res.converged = true;
                res.iterations = iter;
                break;
            }
        }

        if (pos + bsz > n) {
            Rng shuffle_rng(static_cast<Rng::result_type>(derive_seed(cfg.seed, 0x3a7 + epoch)));
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            pos = 0;
            ++epoch;
        }
        const std::size_t lo = pos, hi = pos + bsz;
        pos = hi;

        // (3b) joint mini-batch step.
        Tensor batch = gather_rows(images, order, lo, hi);
        StackCtx ectx, dctx;
        Tensor zb = stack_forward(model.encoder, batch, ectx);
        Tensor rec = stack_forward(model.decoder, zb, dctx);
        MseResult mse = mse_loss(batch, rec);

        Tensor ab = augment(zb, side_features, &order, lo);
        Tensor qb = soft_assign(ab, mu);
        Tensor pb({hi - lo, s});
        for (std::size_t b = lo; b < hi; ++b) {
            std::copy(p_full.data() + order[b] * s, p_full.data() + (order[b] + 1) * s,
                      pb.data() + (b - lo) * s);
        }
        KlResult kl = kl_loss(pb, qb, ab, mu);

        const real_t batch_f = static_cast<real_t>(hi - lo);
        const real_t l_c = kl.value / batch_f;
        const real_t l = mse.value + cfg.gamma * l_c;
        if (!std::isfinite(static_cast<double>(l))) {
            throw std::runtime_error("train_cae_mle: non-finite loss at iteration " + std::to_string(iter));
        }
        res.history.push_back({iter, mse.value, l_c, l, last_delta});

        std::vector<ParamGrads> dgrads, egrads;
        Tensor gz = stack_backward(model.decoder, mse.grad, dctx, dgrads);
        const real_t scale = cfg.gamma / batch_f;
        for (std::size_t i = 0; i < hi - lo; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                // Only the true embedding part of the augmented vector
                // backpropagates; side features are constants.
                gz[i * d + k] += scale * kl.grad_z[i * ab.extent(1) + k];
            }
        }
        stack_backward(model.encoder, gz, ectx, egrads);

        apply_grads(*opt, model.decoder, dgrads, "dec.");
        apply_grads(*opt, model.encoder, egrads, "enc.");
        Tensor mu_grad(kl.grad_mu.shape());
        for (std::size_t i = 0; i < mu_grad.size(); ++i) mu_grad[i] = scale * kl.grad_mu[i];
        opt->step("centroids", mu, mu_grad);
        opt->end_batch();

        res.iterations = iter + 1;
    }

    // (4) final readout on the full data.
    a_full = augment(encode_all(model, images, bsz), side_features);
    q_full = soft_assign(a_full, mu);
    res.labels = hard_labels(q_full);
    res.centroids = std::move(mu);
    return res;
}

void export_history_csv(const std::vector<MleHistoryRow>& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write history csv " + path);
    f << "iteration,l_r,l_c,l,label_change\n";
    for (const auto& row : history) {
        f << row.iteration << ',' << row.l_r << ',' << row.l_c << ',' << row.l << ',' << row.label_change
          << '\n';
    }
}

}  // namespace deepclust

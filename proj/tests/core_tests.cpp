#include <doctest.h>

#include "deepclust/layers.hpp"
#include "deepclust/optimizer.hpp"
#include "deepclust/tensor.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <cstring>
#include <limits>

using namespace deepclust;
using oracles::avoid_relu_kink;
using oracles::max_grad_err;
using oracles::random_tensor;
using oracles::rel_err;

namespace {

// Scalar probe loss <out, g>: linear in the layer output, so grad_out == g
// and finite differences probe the layer Jacobian in isolation.
real_t dot(const Tensor& a, const Tensor& b) {
    real_t acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Runs the <forward(x), g> finite-difference check on input, weight and bias
// of one layer and returns the worst relative error seen.
real_t layer_fd_worst(Layer& layer, Tensor input, Rng& rng) {
    ForwardCtx ctx;
    Tensor out = forward(layer, input, ctx);
    Tensor g = random_tensor(out.shape(), rng);

    ParamGrads grads;
    Tensor grad_in = backward(layer, g, ctx, grads);

    auto loss = [&]() {
        ForwardCtx tmp;
        return dot(forward(layer, input, tmp), g);
    };
    real_t worst = max_grad_err(input, grad_in, loss);
    if (layer.has_params()) {
        worst = std::max(worst, max_grad_err(layer.weight, grads.weight, loss));
        worst = std::max(worst, max_grad_err(layer.bias, grads.bias, loss));
    }
    return worst;
}

}  // namespace

TEST_CASE("tensor construction and validation") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.ndim() == 2);
    CHECK(t.extent(1) == 3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0);

    CHECK_THROWS_AS(Tensor({2, 0, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);

    Tensor f = Tensor::full({2, 2}, real_t{1.5});
    CHECK(f[3] == real_t{1.5});

    Tensor r = f.reshaped({4});
    CHECK(r.ndim() == 1);
    CHECK(r[0] == real_t{1.5});
    CHECK_THROWS_AS(f.reshaped({5}), std::invalid_argument);

    CHECK(shape_str({2, 3, 4}) == "(2x3x4)");
}

TEST_CASE("tensor finiteness guards") {
    Tensor t({3});
    CHECK(all_finite(t));
    t[1] = std::numeric_limits<real_t>::quiet_NaN();
    CHECK_FALSE(all_finite(t));
    CHECK_THROWS_AS(require_finite(t, "probe"), std::runtime_error);
    t[1] = std::numeric_limits<real_t>::infinity();
    CHECK_FALSE(all_finite(t));

    Tensor a({2}), b({3});
    CHECK_THROWS_AS(require_same_shape(a, b, "probe"), std::invalid_argument);
}

TEST_CASE("derive_seed decorrelates streams deterministically") {
    CHECK(derive_seed(42, 0) == derive_seed(42, 0));
    CHECK(derive_seed(42, 0) != derive_seed(42, 1));
    CHECK(derive_seed(42, 0) != derive_seed(43, 0));
}

TEST_CASE("conv forward: identity-spatial kernel") {
    Rng rng(1);
    Layer conv = make_conv(1, 1, 1, 1, 0, rng);
    conv.weight.fill(2);
    conv.bias.fill(0);
    Tensor x = Tensor::full({1, 1, 3, 3}, 1);
    ForwardCtx ctx;
    Tensor y = forward(conv, x, ctx);
    CHECK(y.shape() == std::vector<std::size_t>{1, 1, 3, 3});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2.0));
}

TEST_CASE("conv forward: hand dot-product") {
    Rng rng(1);
    Layer conv = make_conv(1, 1, 2, 1, 0, rng);
    conv.weight = Tensor({1, 1, 2, 2}, {1, 0, 0, 1});
    conv.bias.fill(0);
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    ForwardCtx ctx;
    Tensor y = forward(conv, x, ctx);
    CHECK(y.shape() == std::vector<std::size_t>{1, 1, 1, 1});
    CHECK(y[0] == doctest::Approx(5.0));
}

TEST_CASE("conv forward matches the six-loop reference") {
    Rng rng(7);
    Layer conv = make_conv(2, 4, 3, 2, 1, rng);
    Tensor x = random_tensor({2, 8, 8}, rng);
    ForwardCtx ctx;
    Tensor y = forward(conv, x, ctx);
    CHECK(y.shape() == std::vector<std::size_t>{4, 4, 4});

    Tensor expect = oracles::naive_conv(x.reshaped({1, 2, 8, 8}), conv.weight, conv.bias, 2, 1);
    REQUIRE(expect.size() == y.size());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(rel_err(y[i], expect[i]) < 1e-12);

    // Batched case with asymmetric spatial extents and no padding.
    Layer conv2 = make_conv(3, 2, 2, 1, 0, rng);
    Tensor xb = random_tensor({5, 3, 6, 4}, rng);
    Tensor yb = forward(conv2, xb, ctx);
    Tensor eb = oracles::naive_conv(xb, conv2.weight, conv2.bias, 1, 0);
    CHECK(yb.shape() == eb.shape());
    for (std::size_t i = 0; i < yb.size(); ++i) CHECK(rel_err(yb[i], eb[i]) < 1e-12);
}

TEST_CASE("deconv forward matches the scatter-loop reference") {
    Rng rng(11);
    Layer dc = make_deconv(3, 2, 3, 2, 1, 1, rng);
    Tensor u = random_tensor({4, 3, 4, 4}, rng);
    ForwardCtx ctx;
    Tensor y = forward(dc, u, ctx);
    CHECK(y.shape() == std::vector<std::size_t>{4, 2, 8, 8});
    Tensor expect = oracles::naive_deconv(u, dc.weight, dc.bias, 2, 1, 1);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(rel_err(y[i], expect[i]) < 1e-12);

    Layer dc2 = make_deconv(2, 1, 2, 2, 0, 0, rng);
    Tensor u2 = random_tensor({1, 2, 3, 5}, rng);
    Tensor y2 = forward(dc2, u2, ctx);
    Tensor e2 = oracles::naive_deconv(u2, dc2.weight, dc2.bias, 2, 0, 0);
    CHECK(y2.shape() == e2.shape());
    for (std::size_t i = 0; i < y2.size(); ++i) CHECK(rel_err(y2[i], e2[i]) < 1e-12);
}

TEST_CASE("conv and deconv are adjoint maps") {
    Rng rng(13);
    Layer conv = make_conv(2, 3, 3, 2, 1, rng);
    conv.bias.fill(0);

    // Adjoint deconv: swap the channel axes of the conv kernel.
    Layer dc = make_deconv(3, 2, 3, 2, 1, 1, rng);
    dc.bias.fill(0);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 9; ++k)
                dc.weight[(i * 3 + o) * 9 + k] = conv.weight[(o * 2 + i) * 9 + k];

    Tensor x = random_tensor({1, 2, 8, 8}, rng);
    Tensor y = random_tensor({1, 3, 4, 4}, rng);
    ForwardCtx ctx;
    const real_t lhs = dot(forward(conv, x, ctx), y);
    const real_t rhs = dot(x, forward(dc, y, ctx));
    CHECK(std::abs(lhs - rhs) < 1e-9);
}

TEST_CASE("conv gradients match finite differences") {
    Rng rng(17);
    struct Cfg {
        std::size_t ic, oc, k, s, p, h, w;
    };
    const Cfg cfgs[] = {{1, 2, 3, 1, 1, 5, 5}, {2, 3, 3, 2, 1, 5, 5}, {1, 1, 2, 1, 0, 4, 4},
                        {3, 2, 5, 2, 2, 6, 6}};
    for (const auto& c : cfgs) {
        CAPTURE(c.ic);
        CAPTURE(c.oc);
        CAPTURE(c.k);
        Layer conv = make_conv(c.ic, c.oc, c.k, c.s, c.p, rng);
        Tensor x = random_tensor({3, c.ic, c.h, c.w}, rng);
        CHECK(layer_fd_worst(conv, x, rng) < 1e-4);
    }
}

TEST_CASE("deconv gradients match finite differences") {
    Rng rng(19);
    struct Cfg {
        std::size_t ic, oc, k, s, p, op, h, w;
    };
    const Cfg cfgs[] = {{2, 1, 3, 2, 1, 1, 3, 3}, {1, 2, 2, 2, 0, 0, 3, 3}, {3, 2, 3, 1, 1, 0, 4, 4}};
    for (const auto& c : cfgs) {
        CAPTURE(c.ic);
        CAPTURE(c.oc);
        Layer dc = make_deconv(c.ic, c.oc, c.k, c.s, c.p, c.op, rng);
        Tensor u = random_tensor({2, c.ic, c.h, c.w}, rng);
        CHECK(layer_fd_worst(dc, u, rng) < 1e-4);
    }
}

TEST_CASE("dense layer: identity Jacobian and finite differences") {
    Rng rng(23);
    Layer dense = make_dense(3, 3, rng);
    dense.weight.fill(0);
    for (std::size_t i = 0; i < 3; ++i) dense.weight[i * 3 + i] = 1;
    dense.bias.fill(0);

    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    ForwardCtx ctx;
    Tensor y = forward(dense, x, ctx);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(x[i]));

    Tensor g = random_tensor({2, 3}, rng);
    ParamGrads grads;
    Tensor gin = backward(dense, g, ctx, grads);
    for (std::size_t i = 0; i < 6; ++i) CHECK(gin[i] == doctest::Approx(g[i]));

    Layer d2 = make_dense(5, 4, rng);
    Tensor xb = random_tensor({6, 5}, rng);
    CHECK(layer_fd_worst(d2, xb, rng) < 1e-4);

    // Single-instance 1-D path.
    Layer d3 = make_dense(4, 2, rng);
    Tensor x1 = random_tensor({4}, rng);
    CHECK(layer_fd_worst(d3, x1, rng) < 1e-4);
}

TEST_CASE("relu forward/backward") {
    Layer relu = make_relu();
    Tensor x({4}, {-1, 0, 2, -3});
    ForwardCtx ctx;
    Tensor y = forward(relu, x, ctx);
    CHECK(y[0] == 0);
    CHECK(y[1] == 0);
    CHECK(y[2] == 2);
    CHECK(y[3] == 0);

    Tensor g({4}, {10, 10, 10, 10});
    ParamGrads grads;
    Tensor gin = backward(relu, g, ctx, grads);
    CHECK(gin[0] == 0);  // dead unit at -1
    CHECK(gin[2] == 10);

    Rng rng(29);
    Tensor xr = random_tensor({3, 7}, rng);
    avoid_relu_kink(xr);
    Layer r2 = make_relu();
    CHECK(layer_fd_worst(r2, xr, rng) < 1e-4);
}

TEST_CASE("flatten and reshape round-trip shapes and gradients") {
    Rng rng(31);
    Layer fl = make_flatten();
    Layer rs = make_reshape({2, 3, 4});

    Tensor x = random_tensor({5, 2, 3, 4}, rng);
    ForwardCtx cf, cr;
    Tensor flat = forward(fl, x, cf);
    CHECK(flat.shape() == std::vector<std::size_t>{5, 24});
    Tensor back = forward(rs, flat, cr);
    CHECK(back.shape() == x.shape());
    CHECK(std::memcmp(back.data(), x.data(), x.size() * sizeof(real_t)) == 0);

    ParamGrads pg;
    Tensor g = random_tensor({5, 2, 3, 4}, rng);
    Tensor g1 = backward(rs, g, cr, pg);
    CHECK(g1.shape() == std::vector<std::size_t>{5, 24});
    Tensor g0 = backward(fl, g1, cf, pg);
    CHECK(g0.shape() == x.shape());
    CHECK(std::memcmp(g0.data(), g.data(), g.size() * sizeof(real_t)) == 0);

    CHECK_THROWS_AS(forward(rs, random_tensor({5, 23}, rng), cr), std::invalid_argument);
}

TEST_CASE("layer shape validation errors") {
    Rng rng(37);
    Layer conv = make_conv(2, 4, 3, 2, 1, rng);
    ForwardCtx ctx;
    // Wrong channel count.
    CHECK_THROWS_WITH_AS(forward(conv, Tensor({1, 3, 8, 8}), ctx), doctest::Contains("channels"),
                         std::invalid_argument);
    // Padded extent smaller than the kernel.
    Layer big = make_conv(1, 1, 5, 1, 0, rng);
    CHECK_THROWS_WITH_AS(forward(big, Tensor({1, 1, 3, 3}), ctx), doctest::Contains("underflow"),
                         std::invalid_argument);
    // Dense fan-in mismatch.
    Layer dense = make_dense(4, 2, rng);
    CHECK_THROWS_AS(forward(dense, Tensor({3, 5}), ctx), std::invalid_argument);
}

TEST_CASE("backward rejects stale contexts and bad grad shapes") {
    Rng rng(41);
    Layer a = make_conv(1, 2, 3, 1, 1, rng);
    Layer b = make_conv(1, 2, 3, 1, 1, rng);
    Tensor x = random_tensor({1, 1, 5, 5}, rng);
    ForwardCtx ctx;
    Tensor y = forward(a, x, ctx);
    ParamGrads grads;
    CHECK_THROWS_WITH_AS(backward(b, y, ctx, grads), doctest::Contains("stale"), std::invalid_argument);
    CHECK_THROWS_AS(backward(a, Tensor({1, 2, 4, 4}), ctx, grads), std::invalid_argument);
}

TEST_CASE("mse_loss value, gradient and conventions") {
    // x == x_rec -> 0
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    MseResult same = mse_loss(x, x);
    CHECK(same.value == 0);

    // 1-D tensors are a single instance: 3^2 + 4^2 = 25.
    Tensor a({2}, {0, 0});
    Tensor b({2}, {3, 4});
    MseResult r = mse_loss(a, b);
    CHECK(r.value == doctest::Approx(25.0));
    CHECK(r.grad[0] == doctest::Approx(6.0));   // 2*(3-0)/1
    CHECK(r.grad[1] == doctest::Approx(8.0));

    // Batched: sum over features, mean over batch — scalar-loop oracle.
    Rng rng(43);
    Tensor xr = random_tensor({4, 5}, rng);
    Tensor yr = random_tensor({4, 5}, rng);
    MseResult rr = mse_loss(xr, yr);
    real_t expect = 0;
    for (std::size_t i = 0; i < xr.size(); ++i) {
        const real_t d = yr[i] - xr[i];
        expect += d * d;
    }
    expect /= 4;
    CHECK(rr.value == doctest::Approx(expect));
    for (std::size_t i = 0; i < xr.size(); ++i)
        CHECK(rr.grad[i] == doctest::Approx(2 * (yr[i] - xr[i]) / 4));

    CHECK_THROWS_AS(mse_loss(Tensor({2}), Tensor({3})), std::invalid_argument);
}

TEST_CASE("composite chain conv-relu-flatten-dense under mse matches finite differences") {
    Rng rng(47);
    Layer conv = make_conv(1, 2, 3, 2, 1, rng);
    Layer relu = make_relu();
    Layer fl = make_flatten();
    Layer dense = make_dense(2 * 3 * 3, 4, rng);

    Tensor x = random_tensor({2, 1, 5, 5}, rng);
    Tensor target = random_tensor({2, 4}, rng);

    auto loss = [&]() {
        ForwardCtx c1, c2, c3, c4;
        Tensor h = forward(conv, x, c1);
        h = forward(relu, h, c2);
        h = forward(fl, h, c3);
        h = forward(dense, h, c4);
        return mse_loss(target, h).value;
    };

    ForwardCtx c1, c2, c3, c4;
    Tensor h = forward(conv, x, c1);
    Tensor h2 = forward(relu, h, c2);
    Tensor h3 = forward(fl, h2, c3);
    Tensor h4 = forward(dense, h3, c4);
    MseResult m = mse_loss(target, h4);

    ParamGrads gd, gf, gr, gc;
    Tensor g = backward(dense, m.grad, c4, gd);
    g = backward(fl, g, c3, gf);
    g = backward(relu, g, c2, gr);
    g = backward(conv, g, c1, gc);

    CHECK(max_grad_err(x, g, loss) < 1e-4);
    CHECK(max_grad_err(conv.weight, gc.weight, loss) < 1e-4);
    CHECK(max_grad_err(conv.bias, gc.bias, loss) < 1e-4);
    CHECK(max_grad_err(dense.weight, gd.weight, loss) < 1e-4);
    CHECK(max_grad_err(dense.bias, gd.bias, loss) < 1e-4);
}

TEST_CASE("glorot init is bounded, zero-biased and seed-deterministic") {
    Rng r1(123), r2(123), r3(124);
    Layer a = make_conv(2, 4, 3, 1, 1, r1);
    Layer b = make_conv(2, 4, 3, 1, 1, r2);
    Layer c = make_conv(2, 4, 3, 1, 1, r3);

    const real_t limit = std::sqrt(real_t{6} / (2 * 9 + 4 * 9));
    for (std::size_t i = 0; i < a.weight.size(); ++i) {
        CHECK(std::abs(a.weight[i]) <= limit);
        CHECK(a.weight[i] == b.weight[i]);
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a.weight.size(); ++i) any_diff |= (a.weight[i] != c.weight[i]);
    CHECK(any_diff);
    for (std::size_t i = 0; i < a.bias.size(); ++i) CHECK(a.bias[i] == 0);
}

TEST_CASE("forward is bit-deterministic across repeated calls") {
    Rng rng(53);
    Layer conv = make_conv(2, 8, 3, 2, 1, rng);
    Tensor x = random_tensor({17, 2, 8, 8}, rng);
    ForwardCtx c1, c2;
    Tensor y1 = forward(conv, x, c1);
    Tensor y2 = forward(conv, x, c2);
    CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(real_t)) == 0);

    ParamGrads g1, g2;
    Tensor gout = random_tensor(y1.shape(), rng);
    Tensor gi1 = backward(conv, gout, c1, g1);
    Tensor gi2 = backward(conv, gout, c2, g2);
    CHECK(std::memcmp(gi1.data(), gi2.data(), gi1.size() * sizeof(real_t)) == 0);
    CHECK(std::memcmp(g1.weight.data(), g2.weight.data(), g1.weight.size() * sizeof(real_t)) == 0);
}

TEST_CASE("sgd step: exact update and zero-gradient fixpoint") {
    Sgd sgd(real_t{0.1});
    Tensor p({1}, {1.0});
    Tensor g({1}, {2.0});
    sgd.step("w", p, g);
    CHECK(p[0] == doctest::Approx(0.8));

    Tensor z({1}, {0.0});
    sgd.step("w", p, z);
    CHECK(p[0] == doctest::Approx(0.8));
}

TEST_CASE("adam matches a hand-stepped reference recurrence") {
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Adam adam(static_cast<real_t>(lr));
    Tensor p({1}, {0.5});
    Tensor g({1}, {1.0});

    double m = 0, v = 0, ref = 0.5;
    for (int t = 1; t <= 3; ++t) {
        adam.step("w", p, g);
        adam.end_batch();
        m = b1 * m + (1 - b1) * 1.0;
        v = b2 * v + (1 - b2) * 1.0;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        ref -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(static_cast<double>(p[0]) == doctest::Approx(ref).epsilon(1e-12));
    }
    CHECK(adam.timestep() == 3);

    // Fresh state + zero gradient -> unchanged.
    Adam fresh(static_cast<real_t>(lr));
    Tensor q({2}, {1.0, -1.0});
    Tensor z({2}, {0.0, 0.0});
    fresh.step("w", q, z);
    CHECK(q[0] == 1.0);
    CHECK(q[1] == -1.0);
}

TEST_CASE("optimizers reject malformed gradients") {
    Adam adam(real_t{1e-3});
    Tensor p({2}, {1.0, 2.0});
    Tensor bad({2}, {1.0, std::numeric_limits<real_t>::quiet_NaN()});
    CHECK_THROWS_WITH_AS(adam.step("w", p, bad), doctest::Contains("non-finite"), std::invalid_argument);

    Tensor wrong({3});
    CHECK_THROWS_AS(adam.step("w", p, wrong), std::invalid_argument);

    Sgd sgd(real_t{0.1});
    CHECK_THROWS_AS(sgd.step("w", p, wrong), std::invalid_argument);
    CHECK_THROWS_AS(sgd.step("w", p, bad), std::invalid_argument);

    CHECK_THROWS_AS(make_optimizer("newton", real_t{0.1}), std::invalid_argument);
    CHECK(make_optimizer("adam", real_t{0.1})->learning_rate() == doctest::Approx(0.1));
}

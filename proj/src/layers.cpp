#include "deepclust/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace deepclust {

namespace {

using RowMat = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ColMap = Eigen::Map<ColMat>;
using ConstColMap = Eigen::Map<const ColMat>;

// Images per partial buffer in weight-gradient reductions. Fixed (not tied
// to the thread count) so results are bit-identical for any OMP setting.
constexpr std::size_t kGradChunk = 16;

real_t glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return static_cast<real_t>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    const real_t limit = glorot_limit(fan_in, fan_out);
    std::uniform_real_distribution<real_t> dist(-limit, limit);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

[[noreturn]] void shape_error(const Layer& layer, const std::vector<std::size_t>& in_shape, const std::string& why) {
    throw std::invalid_argument(std::string(layer_kind_name(layer.kind)) + " layer '" + layer.name +
                                "': " + why + " (input " + shape_str(in_shape) + ")");
}

// Conv-style spatial geometry. For deconv the same struct describes the
// equivalent forward convolution from the deconv *output* to its *input*.
struct ConvGeom {
    std::size_t channels;  // channels on the "image" side of the im2col
    std::size_t img_h, img_w;
    std::size_t out_h, out_w;
    std::size_t kh, kw, stride, pad;

    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return out_h * out_w; }
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t padded = in + 2 * pad;
    if (padded < k) return 0;
    return (padded - k) / stride + 1;
}

// Gathers kernel windows of `img` into `col`, column-major with one column
// per output pixel.
void im2col(const real_t* img, const ConvGeom& g, real_t* col) {
    const std::size_t rows = g.rows();
    std::size_t c = 0;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox, ++c) {
            real_t* dst = col + c * rows;
            std::size_t r = 0;
            for (std::size_t ch = 0; ch < g.channels; ++ch) {
                const real_t* plane = img + ch * g.img_h * g.img_w;
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool in_bounds = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.img_h) && ix >= 0 &&
                                               ix < static_cast<std::ptrdiff_t>(g.img_w);
                        dst[r] = in_bounds ? plane[static_cast<std::size_t>(iy) * g.img_w + ix] : real_t{0};
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds columns back onto the image grid.
void col2im(const real_t* col, const ConvGeom& g, real_t* img) {
    const std::size_t rows = g.rows();
    std::size_t c = 0;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox, ++c) {
            const real_t* src = col + c * rows;
            std::size_t r = 0;
            for (std::size_t ch = 0; ch < g.channels; ++ch) {
                real_t* plane = img + ch * g.img_h * g.img_w;
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.img_h) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(g.img_w)) {
                            plane[static_cast<std::size_t>(iy) * g.img_w + ix] += src[r];
                        }
                    }
                }
            }
        }
    }
}

struct BatchedView {
    std::size_t batch;
    std::size_t channels, height, width;
    bool had_batch_axis;
};

BatchedView conv_input_view(const Layer& layer, const std::vector<std::size_t>& in_shape) {
    if (in_shape.size() == 4) return {in_shape[0], in_shape[1], in_shape[2], in_shape[3], true};
    if (in_shape.size() == 3) return {1, in_shape[0], in_shape[1], in_shape[2], false};
    shape_error(layer, in_shape, "expected a 3-D (C,H,W) or 4-D (N,C,H,W) input");
}

ConvGeom conv_geometry(const Layer& layer, const BatchedView& v) {
    const auto& h = layer.hyper;
    if (v.channels != h.in_channels) {
        shape_error(layer, {v.batch, v.channels, v.height, v.width},
                    "expected " + std::to_string(h.in_channels) + " input channels");
    }
    const std::size_t oh = conv_out_extent(v.height, h.kernel_h, h.stride, h.pad);
    const std::size_t ow = conv_out_extent(v.width, h.kernel_w, h.stride, h.pad);
    if (oh == 0 || ow == 0) {
        shape_error(layer, {v.batch, v.channels, v.height, v.width}, "spatial extent underflows the kernel");
    }
    return {h.in_channels, v.height, v.width, oh, ow, h.kernel_h, h.kernel_w, h.stride, h.pad};
}

std::size_t deconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                              std::size_t out_pad) {
    const std::size_t grown = (in - 1) * stride + k + out_pad;
    if (grown < 2 * pad + 1) return 0;
    return grown - 2 * pad;
}

// Geometry of the conv whose adjoint this deconv computes: the deconv output
// is that conv's image, the deconv input its output.
ConvGeom deconv_geometry(const Layer& layer, const BatchedView& v) {
    const auto& h = layer.hyper;
    if (v.channels != h.in_channels) {
        shape_error(layer, {v.batch, v.channels, v.height, v.width},
                    "expected " + std::to_string(h.in_channels) + " input channels");
    }
    const std::size_t oh = deconv_out_extent(v.height, h.kernel_h, h.stride, h.pad, h.out_pad);
    const std::size_t ow = deconv_out_extent(v.width, h.kernel_w, h.stride, h.pad, h.out_pad);
    if (oh == 0 || ow == 0) {
        shape_error(layer, {v.batch, v.channels, v.height, v.width}, "output spatial extent underflows");
    }
    return {h.out_channels, oh, ow, v.height, v.width, h.kernel_h, h.kernel_w, h.stride, h.pad};
}

// Deconv weight (out_c, in_c, kh, kw) repacked as a (in_c x out_c*kh*kw)
// matrix so the adjoint convolution can run as a plain GEMM.
RowMat repack_deconv_weight(const Layer& layer) {
    const auto& h = layer.hyper;
    const std::size_t kk = h.kernel_h * h.kernel_w;
    RowMat packed(h.in_channels, h.out_channels * kk);
    for (std::size_t o = 0; o < h.out_channels; ++o) {
        for (std::size_t i = 0; i < h.in_channels; ++i) {
            const real_t* src = layer.weight.data() + (o * h.in_channels + i) * kk;
            for (std::size_t k = 0; k < kk; ++k) packed(i, o * kk + k) = src[k];
        }
    }
    return packed;
}

Tensor conv_forward(const Layer& layer, const Tensor& input, ForwardCtx& ctx) {
    const BatchedView v = conv_input_view(layer, input.shape());
    const ConvGeom g = conv_geometry(layer, v);
    const auto& h = layer.hyper;

    std::vector<std::size_t> out_shape = v.had_batch_axis
                                             ? std::vector<std::size_t>{v.batch, h.out_channels, g.out_h, g.out_w}
                                             : std::vector<std::size_t>{h.out_channels, g.out_h, g.out_w};
    Tensor out(out_shape);

    ConstRowMap wmat(layer.weight.data(), h.out_channels, g.rows());
    const std::size_t in_stride = v.channels * v.height * v.width;
    const std::size_t out_stride = h.out_channels * g.cols();

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(v.batch); ++n) {
        ColMat col(g.rows(), g.cols());
        im2col(input.data() + n * in_stride, g, col.data());
        RowMap o(out.data() + n * out_stride, h.out_channels, g.cols());
        o.noalias() = wmat * col;
        for (std::size_t oc = 0; oc < h.out_channels; ++oc) o.row(oc).array() += layer.bias[oc];
    }

    ctx = ForwardCtx{&layer, input, out_shape};
    return out;
}

Tensor conv_backward(const Layer& layer, const Tensor& grad_out, const ForwardCtx& ctx, ParamGrads& grads) {
    const BatchedView v = conv_input_view(layer, ctx.input.shape());
    const ConvGeom g = conv_geometry(layer, v);
    const auto& h = layer.hyper;

    Tensor grad_in(ctx.input.shape());
    grads.weight = Tensor(layer.weight.shape());
    grads.bias = Tensor(layer.bias.shape());

    ConstRowMap wmat(layer.weight.data(), h.out_channels, g.rows());
    const std::size_t in_stride = v.channels * v.height * v.width;
    const std::size_t out_stride = h.out_channels * g.cols();

    // Input gradients: disjoint per-image writes.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(v.batch); ++n) {
        ConstRowMap go(grad_out.data() + n * out_stride, h.out_channels, g.cols());
        ColMat dcol(g.rows(), g.cols());
        dcol.noalias() = wmat.transpose() * go;
        col2im(dcol.data(), g, grad_in.data() + n * in_stride);
    }

    // Weight/bias gradients: per-chunk partials summed in chunk order.
    const std::size_t chunks = (v.batch + kGradChunk - 1) / kGradChunk;
    std::vector<RowMat> wparts(chunks, RowMat::Zero(h.out_channels, g.rows()));
    std::vector<Eigen::Matrix<real_t, Eigen::Dynamic, 1>> bparts(
        chunks, Eigen::Matrix<real_t, Eigen::Dynamic, 1>::Zero(h.out_channels));

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(chunks); ++ci) {
        ColMat col(g.rows(), g.cols());
        const std::size_t lo = ci * kGradChunk;
        const std::size_t hi = std::min(lo + kGradChunk, v.batch);
        for (std::size_t n = lo; n < hi; ++n) {
            im2col(ctx.input.data() + n * in_stride, g, col.data());
            ConstRowMap go(grad_out.data() + n * out_stride, h.out_channels, g.cols());
            wparts[ci].noalias() += go * col.transpose();
            bparts[ci] += go.rowwise().sum();
        }
    }
    RowMap wgrad(grads.weight.data(), h.out_channels, g.rows());
    for (std::size_t ci = 0; ci < chunks; ++ci) {
        wgrad += wparts[ci];
        for (std::size_t oc = 0; oc < h.out_channels; ++oc) grads.bias[oc] += bparts[ci](oc);
    }
    return grad_in;
}

Tensor deconv_forward(const Layer& layer, const Tensor& input, ForwardCtx& ctx) {
    const BatchedView v = conv_input_view(layer, input.shape());
    const ConvGeom g = deconv_geometry(layer, v);
    const auto& h = layer.hyper;

    std::vector<std::size_t> out_shape = v.had_batch_axis
                                             ? std::vector<std::size_t>{v.batch, h.out_channels, g.img_h, g.img_w}
                                             : std::vector<std::size_t>{h.out_channels, g.img_h, g.img_w};
    Tensor out(out_shape);

    const RowMat packed = repack_deconv_weight(layer);  // in_c x out_c*k*k
    const std::size_t in_stride = v.channels * v.height * v.width;
    const std::size_t out_stride = h.out_channels * g.img_h * g.img_w;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(v.batch); ++n) {
        ConstRowMap u(input.data() + n * in_stride, h.in_channels, g.cols());
        ColMat cols(g.rows(), g.cols());
        cols.noalias() = packed.transpose() * u;
        real_t* img = out.data() + n * out_stride;
        col2im(cols.data(), g, img);
        for (std::size_t oc = 0; oc < h.out_channels; ++oc) {
            real_t* plane = img + oc * g.img_h * g.img_w;
            for (std::size_t p = 0; p < g.img_h * g.img_w; ++p) plane[p] += layer.bias[oc];
        }
    }

    ctx = ForwardCtx{&layer, input, out_shape};
    return out;
}

Tensor deconv_backward(const Layer& layer, const Tensor& grad_out, const ForwardCtx& ctx, ParamGrads& grads) {
    const BatchedView v = conv_input_view(layer, ctx.input.shape());
    const ConvGeom g = deconv_geometry(layer, v);
    const auto& h = layer.hyper;

    Tensor grad_in(ctx.input.shape());
    grads.weight = Tensor(layer.weight.shape());
    grads.bias = Tensor(layer.bias.shape());

    const RowMat packed = repack_deconv_weight(layer);
    const std::size_t in_stride = v.channels * v.height * v.width;
    const std::size_t out_stride = h.out_channels * g.img_h * g.img_w;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(v.batch); ++n) {
        ColMat col(g.rows(), g.cols());
        im2col(grad_out.data() + n * out_stride, g, col.data());
        RowMap gi(grad_in.data() + n * in_stride, h.in_channels, g.cols());
        gi.noalias() = packed * col;
    }

    const std::size_t chunks = (v.batch + kGradChunk - 1) / kGradChunk;
    std::vector<RowMat> wparts(chunks, RowMat::Zero(h.in_channels, g.rows()));
    std::vector<Eigen::Matrix<real_t, Eigen::Dynamic, 1>> bparts(
        chunks, Eigen::Matrix<real_t, Eigen::Dynamic, 1>::Zero(h.out_channels));

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(chunks); ++ci) {
        ColMat col(g.rows(), g.cols());
        const std::size_t lo = ci * kGradChunk;
        const std::size_t hi = std::min(lo + kGradChunk, v.batch);
        for (std::size_t n = lo; n < hi; ++n) {
            const real_t* gimg = grad_out.data() + n * out_stride;
            im2col(gimg, g, col.data());
            ConstRowMap u(ctx.input.data() + n * in_stride, h.in_channels, g.cols());
            wparts[ci].noalias() += u * col.transpose();
            for (std::size_t oc = 0; oc < h.out_channels; ++oc) {
                real_t s = 0;
                const real_t* plane = gimg + oc * g.img_h * g.img_w;
                for (std::size_t p = 0; p < g.img_h * g.img_w; ++p) s += plane[p];
                bparts[ci](oc) += s;
            }
        }
    }

    const std::size_t kk = h.kernel_h * h.kernel_w;
    for (std::size_t ci = 0; ci < chunks; ++ci) {
        for (std::size_t o = 0; o < h.out_channels; ++o) {
            for (std::size_t i = 0; i < h.in_channels; ++i) {
                real_t* dst = grads.weight.data() + (o * h.in_channels + i) * kk;
                for (std::size_t k = 0; k < kk; ++k) dst[k] += wparts[ci](i, o * kk + k);
            }
            grads.bias[o] += bparts[ci](o);
        }
    }
    return grad_in;
}

std::pair<std::size_t, std::size_t> dense_view(const Layer& layer, const std::vector<std::size_t>& in_shape) {
    if (in_shape.size() == 1) return {1, in_shape[0]};
    if (in_shape.size() == 2) return {in_shape[0], in_shape[1]};
    shape_error(layer, in_shape, "expected a 1-D or 2-D (N,features) input");
}

Tensor dense_forward(const Layer& layer, const Tensor& input, ForwardCtx& ctx) {
    const auto [batch, features] = dense_view(layer, input.shape());
    const auto& h = layer.hyper;
    if (features != h.fan_in) {
        shape_error(layer, input.shape(), "expected " + std::to_string(h.fan_in) + " input features");
    }
    std::vector<std::size_t> out_shape = input.ndim() == 1 ? std::vector<std::size_t>{h.fan_out}
                                                           : std::vector<std::size_t>{batch, h.fan_out};
    Tensor out(out_shape);
    ConstRowMap x(input.data(), batch, h.fan_in);
    ConstRowMap w(layer.weight.data(), h.fan_in, h.fan_out);
    RowMap y(out.data(), batch, h.fan_out);
    y.noalias() = x * w;
    for (std::size_t j = 0; j < h.fan_out; ++j) y.col(j).array() += layer.bias[j];
    ctx = ForwardCtx{&layer, input, out_shape};
    return out;
}

Tensor dense_backward(const Layer& layer, const Tensor& grad_out, const ForwardCtx& ctx, ParamGrads& grads) {
    const auto [batch, features] = dense_view(layer, ctx.input.shape());
    const auto& h = layer.hyper;
    Tensor grad_in(ctx.input.shape());
    grads.weight = Tensor(layer.weight.shape());
    grads.bias = Tensor(layer.bias.shape());

    ConstRowMap x(ctx.input.data(), batch, h.fan_in);
    ConstRowMap w(layer.weight.data(), h.fan_in, h.fan_out);
    ConstRowMap gy(grad_out.data(), batch, h.fan_out);
    RowMap gx(grad_in.data(), batch, h.fan_in);
    RowMap gw(grads.weight.data(), h.fan_in, h.fan_out);
    gx.noalias() = gy * w.transpose();
    gw.noalias() = x.transpose() * gy;
    for (std::size_t j = 0; j < h.fan_out; ++j) grads.bias[j] = gy.col(j).sum();
    return grad_in;
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Deconv: return "deconv";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Reshape: return "reshape";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "conv") return LayerKind::Conv;
    if (name == "deconv") return LayerKind::Deconv;
    if (name == "dense") return LayerKind::Dense;
    if (name == "relu") return LayerKind::Relu;
    if (name == "flatten") return LayerKind::Flatten;
    if (name == "reshape") return LayerKind::Reshape;
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

Layer make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                std::size_t pad, Rng& rng, std::string name) {
    Layer l;
    l.kind = LayerKind::Conv;
    l.hyper = {in_channels, out_channels, kernel, kernel, stride, pad, 0, 0, 0, {}};
    l.weight = glorot_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel,
                              out_channels * kernel * kernel, rng);
    l.bias = Tensor({out_channels});
    l.name = std::move(name);
    return l;
}

Layer make_deconv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t pad, std::size_t out_pad, Rng& rng, std::string name) {
    if (out_pad >= stride) throw std::invalid_argument("deconv: out_pad must be < stride");
    Layer l;
    l.kind = LayerKind::Deconv;
    l.hyper = {in_channels, out_channels, kernel, kernel, stride, pad, out_pad, 0, 0, {}};
    l.weight = glorot_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel,
                              out_channels * kernel * kernel, rng);
    l.bias = Tensor({out_channels});
    l.name = std::move(name);
    return l;
}

Layer make_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng, std::string name) {
    Layer l;
    l.kind = LayerKind::Dense;
    l.hyper.fan_in = fan_in;
    l.hyper.fan_out = fan_out;
    l.weight = glorot_uniform({fan_in, fan_out}, fan_in, fan_out, rng);
    l.bias = Tensor({fan_out});
    l.name = std::move(name);
    return l;
}

Layer make_relu(std::string name) {
    Layer l;
    l.kind = LayerKind::Relu;
    l.name = std::move(name);
    return l;
}

Layer make_flatten(std::string name) {
    Layer l;
    l.kind = LayerKind::Flatten;
    l.name = std::move(name);
    return l;
}

Layer make_reshape(std::vector<std::size_t> target_shape, std::string name) {
    Layer l;
    l.kind = LayerKind::Reshape;
    l.hyper.target_shape = std::move(target_shape);
    l.name = std::move(name);
    return l;
}

std::vector<std::size_t> layer_output_shape(const Layer& layer, const std::vector<std::size_t>& in_shape) {
    switch (layer.kind) {
        case LayerKind::Conv: {
            const BatchedView v = conv_input_view(layer, in_shape);
            const ConvGeom g = conv_geometry(layer, v);
            return v.had_batch_axis ? std::vector<std::size_t>{v.batch, layer.hyper.out_channels, g.out_h, g.out_w}
                                    : std::vector<std::size_t>{layer.hyper.out_channels, g.out_h, g.out_w};
        }
        case LayerKind::Deconv: {
            const BatchedView v = conv_input_view(layer, in_shape);
            const ConvGeom g = deconv_geometry(layer, v);
            return v.had_batch_axis ? std::vector<std::size_t>{v.batch, layer.hyper.out_channels, g.img_h, g.img_w}
                                    : std::vector<std::size_t>{layer.hyper.out_channels, g.img_h, g.img_w};
        }
        case LayerKind::Dense: {
            const auto [batch, features] = dense_view(layer, in_shape);
            if (features != layer.hyper.fan_in) {
                shape_error(layer, in_shape, "expected " + std::to_string(layer.hyper.fan_in) + " input features");
            }
            return in_shape.size() == 1 ? std::vector<std::size_t>{layer.hyper.fan_out}
                                        : std::vector<std::size_t>{batch, layer.hyper.fan_out};
        }
        case LayerKind::Relu:
            return in_shape;
        case LayerKind::Flatten: {
            if (in_shape.size() < 2) shape_error(layer, in_shape, "expected at least 2 axes");
            std::size_t rest = 1;
            for (std::size_t i = 1; i < in_shape.size(); ++i) rest *= in_shape[i];
            return {in_shape[0], rest};
        }
        case LayerKind::Reshape: {
            const std::size_t per_instance = shape_numel(layer.hyper.target_shape);
            if (in_shape.size() == 1) {
                if (in_shape[0] != per_instance) shape_error(layer, in_shape, "element count mismatch");
                return layer.hyper.target_shape;
            }
            if (in_shape.size() == 2) {
                if (in_shape[1] != per_instance) shape_error(layer, in_shape, "element count mismatch");
                std::vector<std::size_t> out{in_shape[0]};
                out.insert(out.end(), layer.hyper.target_shape.begin(), layer.hyper.target_shape.end());
                return out;
            }
            shape_error(layer, in_shape, "expected a 1-D or 2-D input");
        }
    }
    throw std::logic_error("unreachable layer kind");
}

Tensor forward(const Layer& layer, const Tensor& input, ForwardCtx& ctx) {
    switch (layer.kind) {
        case LayerKind::Conv: return conv_forward(layer, input, ctx);
        case LayerKind::Deconv: return deconv_forward(layer, input, ctx);
        case LayerKind::Dense: return dense_forward(layer, input, ctx);
        case LayerKind::Relu: {
            Tensor out(input.shape(), input.values());
            for (auto& v : out.values()) v = v > 0 ? v : real_t{0};
            ctx = ForwardCtx{&layer, input, out.shape()};
            return out;
        }
        case LayerKind::Flatten:
        case LayerKind::Reshape: {
            Tensor out = input.reshaped(layer_output_shape(layer, input.shape()));
            ctx = ForwardCtx{&layer, input, out.shape()};
            return out;
        }
    }
    throw std::logic_error("unreachable layer kind");
}

Tensor backward(const Layer& layer, const Tensor& grad_out, const ForwardCtx& ctx, ParamGrads& grads) {
    if (ctx.layer != &layer) {
        throw std::invalid_argument(std::string(layer_kind_name(layer.kind)) + " layer '" + layer.name +
                                    "': backward called with a stale or foreign forward context");
    }
    if (grad_out.shape() != ctx.output_shape) {
        throw std::invalid_argument(std::string(layer_kind_name(layer.kind)) + " layer '" + layer.name +
                                    "': grad " + shape_str(grad_out.shape()) + " does not match forward output " +
                                    shape_str(ctx.output_shape));
    }
    grads = ParamGrads{};
    switch (layer.kind) {
        case LayerKind::Conv: return conv_backward(layer, grad_out, ctx, grads);
        case LayerKind::Deconv: return deconv_backward(layer, grad_out, ctx, grads);
        case LayerKind::Dense: return dense_backward(layer, grad_out, ctx, grads);
        case LayerKind::Relu: {
            Tensor grad_in(ctx.input.shape());
            const auto& x = ctx.input.values();
            for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] = x[i] > 0 ? grad_out[i] : real_t{0};
            return grad_in;
        }
        case LayerKind::Flatten:
        case LayerKind::Reshape:
            return grad_out.reshaped(ctx.input.shape());
    }
    throw std::logic_error("unreachable layer kind");
}

MseResult mse_loss(const Tensor& x, const Tensor& x_rec) {
    require_same_shape(x, x_rec, "mse_loss");
    const std::size_t batch = x.ndim() >= 2 ? x.extent(0) : 1;
    MseResult r;
    r.grad = Tensor(x.shape());
    double acc = 0;
    const real_t scale = real_t{2} / static_cast<real_t>(batch);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const real_t d = x_rec[i] - x[i];
        acc += static_cast<double>(d) * d;
        r.grad[i] = scale * d;
    }
    r.value = static_cast<real_t>(acc / static_cast<double>(batch));
    return r;
}

}  // namespace deepclust

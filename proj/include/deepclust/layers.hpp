#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepclust/tensor.hpp"

namespace deepclust {

enum class LayerKind { Conv, Deconv, Dense, Relu, Flatten, Reshape };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerHyper {
    // conv / deconv
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t out_pad = 0;  // deconv only, < stride
    // dense
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    // reshape: per-instance target shape (batch axis excluded)
    std::vector<std::size_t> target_shape;
};

/// A single network stage. Conv/deconv kernels are stored
/// (out_channels, in_channels, kh, kw); dense weights (fan_in, fan_out).
/// Activation and shape layers carry empty parameter tensors.
struct Layer {
    LayerKind kind = LayerKind::Relu;
    LayerHyper hyper;
    Tensor weight;
    Tensor bias;
    std::string name;

    bool has_params() const {
        return kind == LayerKind::Conv || kind == LayerKind::Deconv || kind == LayerKind::Dense;
    }
};

Layer make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                std::size_t pad, Rng& rng, std::string name = "conv");
Layer make_deconv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t pad, std::size_t out_pad, Rng& rng, std::string name = "deconv");
Layer make_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng, std::string name = "dense");
Layer make_relu(std::string name = "relu");
Layer make_flatten(std::string name = "flatten");
Layer make_reshape(std::vector<std::size_t> target_shape, std::string name = "reshape");

/// Deterministic output shape for a given input shape; throws on mismatch,
/// naming the layer kind and both shapes.
std::vector<std::size_t> layer_output_shape(const Layer& layer, const std::vector<std::size_t>& in_shape);

/// Everything the matching backward pass needs. Opaque to callers.
struct ForwardCtx {
    const Layer* layer = nullptr;
    Tensor input;
    std::vector<std::size_t> output_shape;
};

struct ParamGrads {
    Tensor weight;
    Tensor bias;
};

Tensor forward(const Layer& layer, const Tensor& input, ForwardCtx& ctx);

/// Gradient of the loss wrt the layer input; parameter gradients are written
/// to `grads` (left empty for parameter-free layers). `ctx` must come from
/// the matching forward call.
Tensor backward(const Layer& layer, const Tensor& grad_out, const ForwardCtx& ctx, ParamGrads& grads);

struct MseResult {
    real_t value = 0;
    Tensor grad;  // wrt the reconstruction
};

/// Squared error summed over features and averaged over the batch (first
/// extent when ndim >= 2, otherwise a single instance).
MseResult mse_loss(const Tensor& x, const Tensor& x_rec);

}  // namespace deepclust

#pragma once

#include "deepclust/layers.hpp"
#include "deepclust/optimizer.hpp"
#include "deepclust/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepclust {

struct ConvStage {
    std::size_t filters;
    std::size_t kernel;
    std::size_t stride;
};

struct CaeConfig {
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t embedding_dim = 10;
    // Downsampling pyramid; "same"-style padding (kernel/2) per stage.
    std::vector<ConvStage> stack = {{32, 5, 2}, {64, 5, 2}, {128, 3, 2}};
    std::size_t epochs = 200;
    std::size_t batch_size = 256;
    std::string optimizer = "adam";
    real_t learning_rate = real_t{1e-3};
    std::uint64_t seed = 0;
};

/// Encoder (conv/relu stack, flatten, linear dense to d) and mirrored
/// decoder (dense/relu, reshape, deconv stack with a linear output layer).
struct CaeModel {
    CaeConfig config;
    std::vector<Layer> encoder;
    std::vector<Layer> decoder;
    std::vector<real_t> pretrain_history;  // per-epoch mean L_r

    std::size_t embedding_dim() const { return config.embedding_dim; }
    /// Number of parameterized stages (conv + dense + dense + deconv).
    /// The default stack yields 8; the full CAE-MLE network adds the
    /// clustering (centroid) layer on top of the embedding.
    std::size_t stage_count() const;
    std::vector<std::size_t> input_shape() const { return {config.channels, config.height, config.width}; }
};

/// Builds the seeded model. Throws std::invalid_argument when the stack
/// underflows the input's spatial extent (a stage input smaller than its
/// stride) or the config is otherwise degenerate.
CaeModel build_cae(const CaeConfig& cfg);

/// Encoder forward over a (n,c,h,w) batch -> (n,d) embeddings.
Tensor encode(const CaeModel& model, const Tensor& batch);

/// Decoder forward over (n,d) embeddings -> (n,c,h,w) reconstructions.
Tensor decode(const CaeModel& model, const Tensor& z);

/// encode() applied in batch_size slices (bounded memory for large n).
Tensor encode_all(const CaeModel& model, const Tensor& images, std::size_t batch_size);

struct PretrainReport {
    std::vector<real_t> history;  // per-epoch mean L_r
    bool reached_threshold = false;
};

/// Minimizes reconstruction loss alone for cfg.epochs (stops early when the
/// epoch loss falls below `loss_threshold`, if positive). Throws
/// std::runtime_error with epoch/batch diagnostics if the loss goes
/// non-finite.
PretrainReport pretrain(CaeModel& model, const Tensor& images, real_t loss_threshold = 0);

void save_cae(const std::string& stem, const CaeModel& model);
CaeModel load_cae(const std::string& stem);

// --- shared stack plumbing (used by the trainers) ---------------------------

/// Per-layer contexts of one forward pass through a layer stack.
using StackCtx = std::vector<ForwardCtx>;

Tensor stack_forward(const std::vector<Layer>& layers, const Tensor& input, StackCtx& ctx);

/// Backpropagates through the stack; per-layer parameter gradients are
/// appended to `grads` in layer order.
Tensor stack_backward(const std::vector<Layer>& layers, const Tensor& grad_out, const StackCtx& ctx,
                      std::vector<ParamGrads>& grads);

/// Applies one optimizer step per parameterized layer; slot names are
/// "<prefix><layer-name>.w|.b".
void apply_grads(Optimizer& opt, std::vector<Layer>& layers, const std::vector<ParamGrads>& grads,
                 const std::string& prefix);

}  // namespace deepclust

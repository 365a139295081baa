#include "deepclust/cae.hpp"

#include "deepclust/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace deepclust {

namespace {

struct StageShape {
    std::size_t channels, height, width;
};

std::size_t same_pad(std::size_t kernel) { return kernel / 2; }

std::size_t down_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
    return (in + 2 * same_pad(kernel) - kernel) / stride + 1;
}

// Spatial chain of the encoder conv pyramid, validated stage by stage.
std::vector<StageShape> stage_shapes(const CaeConfig& cfg) {
    std::vector<StageShape> shapes{{cfg.channels, cfg.height, cfg.width}};
    for (std::size_t i = 0; i < cfg.stack.size(); ++i) {
        const ConvStage& st = cfg.stack[i];
        const StageShape& in = shapes.back();
        if (in.height < st.stride || in.width < st.stride) {
            throw std::invalid_argument("cae: spatial underflow at conv stage " + std::to_string(i) +
                                        ": input " + std::to_string(in.height) + "x" +
                                        std::to_string(in.width) + " is smaller than stride " +
                                        std::to_string(st.stride));
        }
        if (st.filters == 0 || st.kernel == 0 || st.stride == 0) {
            throw std::invalid_argument("cae: conv stage " + std::to_string(i) +
                                        " has a zero filter/kernel/stride");
        }
        const std::size_t oh = down_extent(in.height, st.kernel, st.stride);
        const std::size_t ow = down_extent(in.width, st.kernel, st.stride);
        if (oh == 0 || ow == 0) {
            throw std::invalid_argument("cae: spatial underflow at conv stage " + std::to_string(i));
        }
        shapes.push_back({st.filters, oh, ow});
    }
    return shapes;
}

}  // namespace

std::size_t CaeModel::stage_count() const {
    std::size_t n = 0;
    for (const auto& l : encoder) n += l.has_params() ? 1 : 0;
    for (const auto& l : decoder) n += l.has_params() ? 1 : 0;
    return n;
}

CaeModel build_cae(const CaeConfig& cfg) {
    if (cfg.embedding_dim == 0) throw std::invalid_argument("cae: embedding_dim must be >= 1");
    if (cfg.stack.empty()) throw std::invalid_argument("cae: conv stack must not be empty");
    if (cfg.channels == 0 || cfg.height == 0 || cfg.width == 0) {
        throw std::invalid_argument("cae: degenerate input shape");
    }

    const std::vector<StageShape> shapes = stage_shapes(cfg);
    const StageShape& last = shapes.back();
    const std::size_t flat = last.channels * last.height * last.width;

    CaeModel model;
    model.config = cfg;
    Rng rng(static_cast<Rng::result_type>(derive_seed(cfg.seed, 0x1a43)));

    for (std::size_t i = 0; i < cfg.stack.size(); ++i) {
        const ConvStage& st = cfg.stack[i];
        model.encoder.push_back(make_conv(shapes[i].channels, st.filters, st.kernel, st.stride,
                                          same_pad(st.kernel), rng, "enc_conv" + std::to_string(i)));
        model.encoder.push_back(make_relu("enc_relu" + std::to_string(i)));
    }
    model.encoder.push_back(make_flatten("enc_flatten"));
    model.encoder.push_back(make_dense(flat, cfg.embedding_dim, rng, "embedding"));

    model.decoder.push_back(make_dense(cfg.embedding_dim, flat, rng, "dec_dense"));
    model.decoder.push_back(make_relu("dec_relu"));
    model.decoder.push_back(make_reshape({last.channels, last.height, last.width}, "dec_reshape"));
    for (std::size_t i = cfg.stack.size(); i-- > 0;) {
        const ConvStage& st = cfg.stack[i];
        const StageShape& target = shapes[i];   // what this deconv must restore
        const StageShape& source = shapes[i + 1];
        const std::size_t pad = same_pad(st.kernel);
        const std::size_t base_h = (source.height - 1) * st.stride + st.kernel - 2 * pad;
        const std::size_t base_w = (source.width - 1) * st.stride + st.kernel - 2 * pad;
        if (target.height < base_h || target.height - base_h >= st.stride || target.width < base_w ||
            target.width - base_w >= st.stride) {
            throw std::invalid_argument("cae: deconv stage " + std::to_string(i) +
                                        " cannot restore the encoder shape");
        }
        // out_pad is square because inputs are; the stricter of the two axes
        // was just validated to agree.
        const std::size_t out_pad = target.height - base_h;
        if (target.width - base_w != out_pad) {
            throw std::invalid_argument("cae: deconv stage " + std::to_string(i) +
                                        " needs anisotropic output padding (unsupported)");
        }
        model.decoder.push_back(make_deconv(st.filters, target.channels, st.kernel, st.stride, pad, out_pad,
                                            rng, "dec_deconv" + std::to_string(i)));
        if (i > 0) model.decoder.push_back(make_relu("dec_relu" + std::to_string(i)));
        // The reconstruction output (i == 0) stays linear.
    }
    return model;
}

Tensor stack_forward(const std::vector<Layer>& layers, const Tensor& input, StackCtx& ctx) {
    ctx.resize(layers.size());
    Tensor h = input;
    for (std::size_t i = 0; i < layers.size(); ++i) h = forward(layers[i], h, ctx[i]);
    return h;
}

Tensor stack_backward(const std::vector<Layer>& layers, const Tensor& grad_out, const StackCtx& ctx,
                      std::vector<ParamGrads>& grads) {
    if (ctx.size() != layers.size()) {
        throw std::invalid_argument("stack_backward: context does not match the layer stack");
    }
    grads.assign(layers.size(), ParamGrads{});
    Tensor g = grad_out;
    for (std::size_t i = layers.size(); i-- > 0;) g = backward(layers[i], g, ctx[i], grads[i]);
    return g;
}

void apply_grads(Optimizer& opt, std::vector<Layer>& layers, const std::vector<ParamGrads>& grads,
                 const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].has_params()) continue;
        opt.step(prefix + layers[i].name + ".w", layers[i].weight, grads[i].weight);
        opt.step(prefix + layers[i].name + ".b", layers[i].bias, grads[i].bias);
    }
}

namespace {

void check_batch_shape(const CaeModel& model, const Tensor& batch) {
    const auto& s = batch.shape();
    const CaeConfig& c = model.config;
    const bool ok = s.size() == 4 && s[1] == c.channels && s[2] == c.height && s[3] == c.width;
    if (!ok) {
        throw std::invalid_argument("cae: batch " + shape_str(s) + " does not match the configured input " +
                                    shape_str({c.channels, c.height, c.width}));
    }
}

Tensor slice_rows(const Tensor& t, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> shape = t.shape();
    const std::size_t row = t.size() / t.extent(0);
    shape[0] = hi - lo;
    Tensor out(shape);
    std::copy(t.data() + lo * row, t.data() + hi * row, out.data());
    return out;
}

}  // namespace

Tensor encode(const CaeModel& model, const Tensor& batch) {
    check_batch_shape(model, batch);
    StackCtx ctx;
    Tensor z = stack_forward(model.encoder, batch, ctx);
    require_finite(z, "cae embedding");
    return z;
}

Tensor decode(const CaeModel& model, const Tensor& z) {
    const auto& s = z.shape();
    if (s.size() != 2 || s[1] != model.config.embedding_dim) {
        throw std::invalid_argument("cae: embedding batch " + shape_str(s) + " does not match d=" +
                                    std::to_string(model.config.embedding_dim));
    }
    StackCtx ctx;
    Tensor x = stack_forward(model.decoder, z, ctx);
    require_finite(x, "cae reconstruction");
    return x;
}

Tensor encode_all(const CaeModel& model, const Tensor& images, std::size_t batch_size) {
    check_batch_shape(model, images);
    const std::size_t n = images.extent(0);
    const std::size_t step = batch_size == 0 ? n : batch_size;
    Tensor z({n, model.config.embedding_dim});
    for (std::size_t lo = 0; lo < n; lo += step) {
        const std::size_t hi = std::min(lo + step, n);
        Tensor zb = encode(model, slice_rows(images, lo, hi));
        std::copy(zb.data(), zb.data() + zb.size(), z.data() + lo * model.config.embedding_dim);
    }
    return z;
}

PretrainReport pretrain(CaeModel& model, const Tensor& images, real_t loss_threshold) {
    check_batch_shape(model, images);
    const CaeConfig& cfg = model.config;
    const std::size_t n = images.extent(0);
    const std::size_t bsz = std::min<std::size_t>(std::max<std::size_t>(cfg.batch_size, 1), n);

    auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    PretrainReport report;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(static_cast<Rng::result_type>(derive_seed(cfg.seed, 0x5u + epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0;
        for (std::size_t lo = 0; lo < n; lo += bsz) {
            const std::size_t hi = std::min(lo + bsz, n);
            std::vector<std::size_t> shape = images.shape();
            shape[0] = hi - lo;
            Tensor batch(shape);
            const std::size_t row = images.size() / n;
            for (std::size_t b = lo; b < hi; ++b) {
                std::copy(images.data() + order[b] * row, images.data() + (order[b] + 1) * row,
                          batch.data() + (b - lo) * row);
            }

            StackCtx ectx, dctx;
            Tensor z = stack_forward(model.encoder, batch, ectx);
            Tensor rec = stack_forward(model.decoder, z, dctx);
            MseResult mse = mse_loss(batch, rec);
            if (!std::isfinite(static_cast<double>(mse.value))) {
                throw std::runtime_error("cae pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch offset " + std::to_string(lo));
            }
            epoch_loss += static_cast<double>(mse.value) * static_cast<double>(hi - lo);

            std::vector<ParamGrads> dgrads, egrads;
            Tensor gz = stack_backward(model.decoder, mse.grad, dctx, dgrads);
            stack_backward(model.encoder, gz, ectx, egrads);
            apply_grads(*opt, model.decoder, dgrads, "dec.");
            apply_grads(*opt, model.encoder, egrads, "enc.");
            opt->end_batch();
        }
        const real_t mean_loss = static_cast<real_t>(epoch_loss / static_cast<double>(n));
        report.history.push_back(mean_loss);
        model.pretrain_history.push_back(mean_loss);
        if (loss_threshold > 0 && mean_loss < loss_threshold) {
            report.reached_threshold = true;
            break;
        }
    }
    return report;
}

void save_cae(const std::string& stem, const CaeModel& model) {
    nlohmann::json meta;
    meta["type"] = "cae";
    meta["encoder_layers"] = model.encoder.size();
    meta["config"] = {{"channels", model.config.channels},
                      {"height", model.config.height},
                      {"width", model.config.width},
                      {"embedding_dim", model.config.embedding_dim},
                      {"epochs", model.config.epochs},
                      {"batch_size", model.config.batch_size},
                      {"optimizer", model.config.optimizer},
                      {"learning_rate", model.config.learning_rate},
                      {"seed", model.config.seed}};
    nlohmann::json stack = nlohmann::json::array();
    for (const auto& st : model.config.stack) {
        stack.push_back({{"filters", st.filters}, {"kernel", st.kernel}, {"stride", st.stride}});
    }
    meta["config"]["stack"] = std::move(stack);
    meta["pretrain_history"] = model.pretrain_history;

    std::vector<Layer> all = model.encoder;
    all.insert(all.end(), model.decoder.begin(), model.decoder.end());
    save_checkpoint(stem, all, {}, meta);
}

CaeModel load_cae(const std::string& stem) {
    Checkpoint ck = load_checkpoint(stem);
    if (ck.meta.value("type", "") != "cae") {
        throw std::runtime_error("checkpoint " + stem + " is not a cae checkpoint");
    }
    CaeModel model;
    const auto& jc = ck.meta.at("config");
    model.config.channels = jc.at("channels").get<std::size_t>();
    model.config.height = jc.at("height").get<std::size_t>();
    model.config.width = jc.at("width").get<std::size_t>();
    model.config.embedding_dim = jc.at("embedding_dim").get<std::size_t>();
    model.config.epochs = jc.at("epochs").get<std::size_t>();
    model.config.batch_size = jc.at("batch_size").get<std::size_t>();
    model.config.optimizer = jc.at("optimizer").get<std::string>();
    model.config.learning_rate = jc.at("learning_rate").get<real_t>();
    model.config.seed = jc.at("seed").get<std::uint64_t>();
    model.config.stack.clear();
    for (const auto& js : jc.at("stack")) {
        model.config.stack.push_back({js.at("filters").get<std::size_t>(), js.at("kernel").get<std::size_t>(),
                                      js.at("stride").get<std::size_t>()});
    }
    model.pretrain_history = ck.meta.value("pretrain_history", std::vector<real_t>{});

    const std::size_t enc_len = ck.meta.at("encoder_layers").get<std::size_t>();
    if (enc_len > ck.layers.size()) throw std::runtime_error("checkpoint " + stem + " manifest is inconsistent");
    model.encoder.assign(ck.layers.begin(), ck.layers.begin() + static_cast<std::ptrdiff_t>(enc_len));
    model.decoder.assign(ck.layers.begin() + static_cast<std::ptrdiff_t>(enc_len), ck.layers.end());
    return model;
}

}  // namespace deepclust

#include "deepclust/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace deepclust {

namespace {

void check_step_args(const std::string& slot, const Tensor& param, const Tensor& grad) {
    if (param.shape() != grad.shape()) {
        throw std::invalid_argument("optimizer: slot '" + slot + "' gradient " + shape_str(grad.shape()) +
                                    " does not match parameter " + shape_str(param.shape()));
    }
    if (!all_finite(grad)) {
        throw std::invalid_argument("optimizer: slot '" + slot + "' received a non-finite gradient");
    }
}

}  // namespace

void Sgd::step(const std::string& slot, Tensor& param, const Tensor& grad) {
    check_step_args(slot, param, grad);
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr_ * grad[i];
}

Adam::Adam(real_t lr, real_t beta1, real_t beta2, real_t eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::string& slot, Tensor& param, const Tensor& grad) {
    check_step_args(slot, param, grad);
    auto it = slots_.find(slot);
    if (it == slots_.end()) {
        it = slots_.emplace(slot, Moments{Tensor(param.shape()), Tensor(param.shape())}).first;
    } else if (it->second.m.shape() != param.shape()) {
        throw std::invalid_argument("optimizer: slot '" + slot + "' changed shape between steps");
    }
    Moments& mom = it->second;

    const auto t = static_cast<real_t>(t_ + 1);
    const real_t bc1 = real_t{1} - static_cast<real_t>(std::pow(beta1_, t));
    const real_t bc2 = real_t{1} - static_cast<real_t>(std::pow(beta2_, t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const real_t g = grad[i];
        mom.m[i] = beta1_ * mom.m[i] + (real_t{1} - beta1_) * g;
        mom.v[i] = beta2_ * mom.v[i] + (real_t{1} - beta2_) * g * g;
        const real_t mhat = mom.m[i] / bc1;
        const real_t vhat = mom.v[i] / bc2;
        param[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, real_t lr) {
    if (kind == "sgd") return std::make_unique<Sgd>(lr);
    if (kind == "adam") return std::make_unique<Adam>(lr);
    throw std::invalid_argument("unknown optimizer '" + kind + "' (expected 'sgd' or 'adam')");
}

}  // namespace deepclust

#pragma once

#include "deepclust/tensor.hpp"

#include <memory>
#include <string>
#include <unordered_map>

namespace deepclust {

// First-order optimizers over named parameter slots. A "slot" is one tensor
// (e.g. a layer's weight); Adam keeps independent moment state per slot but a
// single global step counter shared by all slots.
class Optimizer {
  public:
    virtual ~Optimizer() = default;

    // Applies one update in place. Throws std::invalid_argument if the
    // gradient shape differs from the parameter shape or contains a
    // non-finite value.
    virtual void step(const std::string& slot, Tensor& param, const Tensor& grad) = 0;

    // Advances the shared step counter; call once per batch after all slots
    // have been stepped.
    virtual void end_batch() {}

    virtual real_t learning_rate() const = 0;
};

class Sgd final : public Optimizer {
  public:
    explicit Sgd(real_t lr) : lr_(lr) {}
    void step(const std::string& slot, Tensor& param, const Tensor& grad) override;
    real_t learning_rate() const override { return lr_; }

  private:
    real_t lr_;
};

class Adam final : public Optimizer {
  public:
    explicit Adam(real_t lr, real_t beta1 = real_t{0.9}, real_t beta2 = real_t{0.999},
                  real_t eps = real_t{1e-8});
    void step(const std::string& slot, Tensor& param, const Tensor& grad) override;
    void end_batch() override { ++t_; }
    real_t learning_rate() const override { return lr_; }
    std::size_t timestep() const { return t_; }

  private:
    struct Moments {
        Tensor m, v;
    };
    real_t lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;  // completed batches; updates use t_+1
    std::unordered_map<std::string, Moments> slots_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, real_t lr);

}  // namespace deepclust

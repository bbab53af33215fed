#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pcvs/params.hpp"

namespace pcvs {

/// Adam with bias correction. Gradients are consumed: each step() zeroes the
/// grads of the parameters it updated.
template <typename T>
class Adam {
public:
    explicit Adam(T lr = T(1e-5), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

    void step(ParameterStore<T>& params) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (auto& [name, p] : params.all()) {
            if (!p.has_grad())
                throw NumericError("adam: parameter '" + name + "' has no gradient");
            auto& slot = slots_[name];
            if (slot.m.empty()) {
                slot.m.assign(p.numel(), T(0));
                slot.v.assign(p.numel(), T(0));
            }
            auto& g = p.grad_ref();
            auto& val = p.value();
            for (std::size_t i = 0; i < val.size(); ++i) {
                slot.m[i] = beta1_ * slot.m[i] + (T(1) - beta1_) * g[i];
                slot.v[i] = beta2_ * slot.v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = slot.m[i] / bc1;
                const T vhat = slot.v[i] / bc2;
                val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            p.zero_grad();
        }
    }

    long step_count() const { return t_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    std::map<std::string, Slot> slots_;
    T lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace pcvs

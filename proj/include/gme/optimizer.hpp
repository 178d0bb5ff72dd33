#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gme/tensor.hpp"

namespace gme {

// Step-decay schedule: lr(epoch) = lr0 * decay^(epoch / decay_every).
struct LrSchedule {
    double lr0 = 0.1;
    double decay = 0.4;
    int decay_every = 20;

    double lr_at(int epoch) const {
        if (epoch < 0) throw std::invalid_argument("LrSchedule: negative epoch");
        return lr0 * std::pow(decay, epoch / decay_every);
    }
};

// SGD with classical momentum:
//   v <- mu * v + (g + wd * theta)
//   theta <- theta - lr * v
template <typename T>
class SgdMomentum {
public:
    T lr = T(0.1);
    T momentum = T(0.9);
    T weight_decay = T(0);

    explicit SgdMomentum(std::vector<Param<T>*> params) : params_(std::move(params)) {
        for (Param<T>* p : params_) velocity_.push_back(Tensor<T>::zeros_like(p->value));
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            Param<T>& p = *params_[i];
            Tensor<T>& v = velocity_[i];
            for (size_t j = 0; j < p.value.size(); ++j) {
                const T g = p.grad.v[j] + weight_decay * p.value.v[j];
                v.v[j] = momentum * v.v[j] + g;
                p.value.v[j] -= lr * v.v[j];
            }
        }
    }

    void zero_grad() {
        for (Param<T>* p : params_) p->zero_grad();
    }

private:
    std::vector<Param<T>*> params_;
    std::vector<Tensor<T>> velocity_;
};

}  // namespace gme

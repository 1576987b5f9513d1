#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pepler/errors.hpp"
#include "pepler/tensor.hpp"

namespace pepler::num {

template <typename T>
struct AdamWConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T weight_decay = T(0.01);
};

// AdamW with decoupled weight decay: the decay term lr*wd*theta is applied
// alongside the moment update, not folded into the gradient, so a parameter
// with zero gradient still shrinks by factor (1 - lr*wd) per step. Freezing a
// parameter therefore means not attaching it at all.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig<T> cfg) : cfg_(cfg) {}

  // Binds a parameter to the gradient buffer that backward passes fill.
  void attach(Tensor<T>* param, Tensor<T>* grad) {
    if (!param->same_shape(*grad)) {
      throw ShapeError("adamw: grad " + grad->shape_str() +
                       " does not match param " + param->shape_str());
    }
    slots_.push_back(Slot{param, grad, Tensor<T>(param->shape()),
                          Tensor<T>(param->shape())});
  }

  void zero_grads() {
    for (auto& s : slots_) {
      for (std::size_t i = 0; i < s.grad->size(); ++i) (*s.grad)[i] = T(0);
    }
  }

  void step() {
    ++t_;
    beta1_pow_ *= cfg_.beta1;
    beta2_pow_ *= cfg_.beta2;
    const T bc1 = T(1) - beta1_pow_;
    const T bc2 = T(1) - beta2_pow_;
    for (auto& s : slots_) {
      Tensor<T>& p = *s.param;
      const Tensor<T>& g = *s.grad;
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (T(1) - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        T mhat = s.m[i] / bc1;
        T vhat = s.v[i] / bc2;
        p[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * p[i]);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamWConfig<T>& config() const { return cfg_; }

 private:
  struct Slot {
    Tensor<T>* param;
    Tensor<T>* grad;
    Tensor<T> m;
    Tensor<T> v;
  };

  AdamWConfig<T> cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
  T beta1_pow_ = T(1);
  T beta2_pow_ = T(1);
};

}  // namespace pepler::num

#pragma once

#include <functional>
#include <map>
#include <string>

#include "mgimm/params.hpp"

namespace mgimm {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename T>
struct AdamMoments {
    Tensor<T> m;
    Tensor<T> v;
};

/// First and second moments per trainable parameter plus the shared step
/// count.
template <typename T>
struct AdamState {
    std::map<std::string, AdamMoments<T>> moments;
    std::size_t step = 0;

    /// Zero moments for every trainable parameter of the store.
    static AdamState for_params(const ParamStore<T>& store);
};

/// Per-parameter learning rate; lets parameter groups share one step.
template <typename T>
using LrFn = std::function<double(const std::string& name, const Parameter<T>& p)>;

/// One AdamW step with bias correction and decoupled weight decay:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)
/// Only trainable parameters that appear in `grads` move. A trainable
/// parameter without moments in `state` is an error.
template <typename T>
void adamw_update(ParamStore<T>& params, const GradientMap<T>& grads, AdamState<T>& state, const AdamHyper& hyper,
                  const LrFn<T>& lr_for = {});

/// Linear warmup from 0 to base_lr over warmup_steps, then half-cosine
/// decay to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps);

}  // namespace mgimm

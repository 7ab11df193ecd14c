#include "mgimm/optim.hpp"

#include <cmath>
#include <numbers>

namespace mgimm {

template <typename T>
AdamState<T> AdamState<T>::for_params(const ParamStore<T>& store) {
    AdamState<T> state;
    for (const auto& [name, p] : store) {
        if (!p.trainable || p.buffer) continue;
        state.moments.emplace(name,
                              AdamMoments<T>{Tensor<T>::zeros(p.value.shape()), Tensor<T>::zeros(p.value.shape())});
    }
    return state;
}

template <typename T>
void adamw_update(ParamStore<T>& params, const GradientMap<T>& grads, AdamState<T>& state, const AdamHyper& hyper,
                  const LrFn<T>& lr_for) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    for (auto& [name, p] : params) {
        if (!p.trainable || p.buffer) continue;
        auto g_it = grads.find(name);
        if (g_it == grads.end()) continue;
        auto s_it = state.moments.find(name);
        if (s_it == state.moments.end()) {
            throw ValidationError("adamw_update: no optimizer state for parameter '" + name + "'");
        }
        const auto& g = g_it->second;
        auto& [m, v] = s_it->second;
        if (g.shape() != p.value.shape() || m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
            throw ShapeError("adamw_update: shape mismatch for '" + name + "'");
        }
        const double lr = lr_for ? lr_for(name, p) : hyper.lr;
        auto w = p.value.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + hyper.eps) + hyper.weight_decay * w[i];
            w[i] = static_cast<T>(w[i] - lr * update);
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_update(ParamStore<float>&, const GradientMap<float>&, AdamState<float>&, const AdamHyper&,
                           const LrFn<float>&);
template void adamw_update(ParamStore<double>&, const GradientMap<double>&, AdamState<double>&, const AdamHyper&,
                           const LrFn<double>&);

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps) {
    if (total_steps == 0) {
        throw ValidationError("cosine_lr: total_steps must be positive");
    }
    if (step > total_steps) {
        throw ValidationError("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                              std::to_string(total_steps));
    }
    if (warmup_steps > 0 && step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (warmup_steps >= total_steps) {
        return base_lr;
    }
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mgimm

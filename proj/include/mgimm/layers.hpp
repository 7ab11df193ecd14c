#pragma once

#include <cmath>
#include <string>

#include "mgimm/params.hpp"

namespace mgimm {

// Plain dense and normalisation layers stored as `<prefix>.weight` [out,in],
// `<prefix>.bias` [out], and `<prefix>.gamma` / `<prefix>.beta`.

template <typename T>
void add_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                Section section, Rng& rng, bool bias = true) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    store.add(prefix + ".weight", Tensor<T>::randn({out, in}, rng, stddev), section);
    if (bias) {
        store.add(prefix + ".bias", Tensor<T>::zeros({out}), section);
    }
}

template <typename T>
Var<T> apply_linear(Binder<T>& bind, const std::string& prefix, Var<T> x) {
    auto weight = bind(prefix + ".weight");
    if (x.cols() != weight.cols()) {
        throw ShapeError(prefix + ": input width " + std::to_string(x.cols()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    if (bind.has(prefix + ".bias")) {
        return linear(x, weight, bind(prefix + ".bias"));
    }
    return linear(x, weight);
}

template <typename T>
void add_layer_norm(ParamStore<T>& store, const std::string& prefix, std::size_t width, Section section) {
    store.add(prefix + ".gamma", Tensor<T>::full({width}, T(1)), section);
    store.add(prefix + ".beta", Tensor<T>::zeros({width}), section);
}

template <typename T>
Var<T> apply_layer_norm(Binder<T>& bind, const std::string& prefix, Var<T> x) {
    return layer_norm(x, bind(prefix + ".gamma"), bind(prefix + ".beta"));
}

}  // namespace mgimm

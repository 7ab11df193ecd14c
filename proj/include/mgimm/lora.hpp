#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mgimm/params.hpp"

namespace mgimm {

/// Linear layer W0 with a low-rank update: W = W0 + (alpha / rank) * B * A.
/// W0 and bias are frozen; only A and B are trained.
template <typename T>
struct LoraLinear {
    Tensor<T> weight;               // W0 [d, k]
    std::optional<Tensor<T>> bias;  // [d]
    Tensor<T> a;                    // [rank, k]
    Tensor<T> b;                    // [d, rank]
    std::size_t rank = 0;
    double alpha = 0.0;

    std::size_t out_features() const { return weight.rows(); }
    std::size_t in_features() const { return weight.cols(); }
    double scaling() const { return alpha / static_cast<double>(rank); }
};

constexpr double kLoraInitStd = 0.02;

/// Adapter around an existing weight: A ~ N(0, 0.02^2), B = 0, so the
/// initial update is exactly zero. Requires 1 <= rank <= min(d, k), alpha > 0.
template <typename T>
LoraLinear<T> lora_attach(Tensor<T> weight, std::optional<Tensor<T>> bias, std::size_t rank, double alpha,
                          Rng& rng);

/// Fresh d x k layer (W0 ~ N(0, 1/k)) with an adapter.
template <typename T>
LoraLinear<T> lora_init(std::size_t d, std::size_t k, std::size_t rank, double alpha, Rng& rng);

/// x[n,k] -> x W0^T + bias, the un-adapted layer.
template <typename T>
Tensor<T> base_forward(const Tensor<T>& x, const LoraLinear<T>& layer);

/// x[n,k] -> x W0^T + bias + (alpha/rank) x A^T B^T.
template <typename T>
Tensor<T> lora_forward(const Tensor<T>& x, const LoraLinear<T>& layer);

/// Taped form. bias may be an invalid Var (no bias).
template <typename T>
Var<T> lora_forward(Var<T> x, Var<T> weight, Var<T> bias, Var<T> a, Var<T> b, T scaling);

/// W0 + (alpha/rank) B A as a plain dense weight.
template <typename T>
Tensor<T> lora_merge(const LoraLinear<T>& layer);

// ---- parameter-store integration -------------------------------------------
// An adapted layer `<layer>` keeps its base `<layer>.weight` / `.bias` and
// gains `<layer>.lora.A`, `<layer>.lora.B` (section lora) and the buffer
// `<layer>.lora.alpha`. The rank is the row count of A.

template <typename T>
void add_lora(ParamStore<T>& store, const std::string& layer, std::size_t rank, double alpha, Rng& rng);

template <typename T>
bool has_lora(const ParamStore<T>& store, const std::string& layer);

/// Names of every adapted layer, sorted.
template <typename T>
std::vector<std::string> lora_layers(const ParamStore<T>& store);

/// Linear layer that picks up the adapter when one is registered.
template <typename T>
Var<T> apply_lora_linear(Binder<T>& bind, const std::string& layer, Var<T> x);

/// Folds every adapter into its base weight and removes the lora entries.
template <typename T>
void merge_all_lora(ParamStore<T>& store);

}  // namespace mgimm

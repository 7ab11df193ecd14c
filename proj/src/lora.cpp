#include "mgimm/lora.hpp"

#include <algorithm>
#include <cmath>

namespace mgimm {
namespace {

void check_rank(std::size_t d, std::size_t k, std::size_t rank, double alpha) {
    if (rank == 0) {
        throw ValidationError("LoRA rank must be at least 1");
    }
    if (rank > std::min(d, k)) {
        throw ValidationError("LoRA rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                              std::to_string(std::min(d, k)));
    }
    if (!(alpha > 0.0)) {
        throw ValidationError("LoRA alpha must be positive");
    }
}

const std::string kLoraA = ".lora.A";
const std::string kLoraB = ".lora.B";
const std::string kLoraAlpha = ".lora.alpha";

}  // namespace

template <typename T>
LoraLinear<T> lora_attach(Tensor<T> weight, std::optional<Tensor<T>> bias, std::size_t rank, double alpha,
                          Rng& rng) {
    if (weight.rank() != 2) {
        throw ShapeError("lora: base weight must be a matrix, got " + shape_str(weight.shape()));
    }
    const auto d = weight.rows(), k = weight.cols();
    check_rank(d, k, rank, alpha);
    if (bias && bias->size() != d) {
        throw ShapeError("lora: bias length does not match output width");
    }
    LoraLinear<T> layer;
    layer.weight = std::move(weight);
    layer.bias = std::move(bias);
    layer.a = Tensor<T>::randn({rank, k}, rng, kLoraInitStd);
    layer.b = Tensor<T>::zeros({d, rank});
    layer.rank = rank;
    layer.alpha = alpha;
    return layer;
}

template <typename T>
LoraLinear<T> lora_init(std::size_t d, std::size_t k, std::size_t rank, double alpha, Rng& rng) {
    check_rank(d, k, rank, alpha);
    auto weight = Tensor<T>::randn({d, k}, rng, 1.0 / std::sqrt(static_cast<double>(k)));
    return lora_attach(std::move(weight), std::optional<Tensor<T>>(Tensor<T>::zeros({d})), rank, alpha, rng);
}

template <typename T>
Var<T> lora_forward(Var<T> x, Var<T> weight, Var<T> bias, Var<T> a, Var<T> b, T scaling) {
    if (x.cols() != weight.cols()) {
        throw ShapeError("lora_forward: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
    }
    if (a.cols() != weight.cols() || b.rows() != weight.rows() || b.cols() != a.rows()) {
        throw ShapeError("lora_forward: adapter shapes A " + shape_str(a.shape()) + ", B " + shape_str(b.shape()) +
                         " do not fit weight " + shape_str(weight.shape()));
    }
    auto base = bias.valid() ? linear(x, weight, bias) : linear(x, weight);
    auto delta = scale(matmul_nt(matmul_nt(x, a), b), scaling);
    return add(base, delta);
}

template <typename T>
Tensor<T> base_forward(const Tensor<T>& x, const LoraLinear<T>& layer) {
    Tape<T> tape;
    auto xv = tape.constant(x);
    auto w = tape.constant(layer.weight);
    if (x.cols() != layer.in_features()) {
        throw ShapeError("base_forward: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(layer.weight.shape()));
    }
    return (layer.bias ? linear(xv, w, tape.constant(*layer.bias)) : linear(xv, w)).value();
}

template <typename T>
Tensor<T> lora_forward(const Tensor<T>& x, const LoraLinear<T>& layer) {
    Tape<T> tape;
    Var<T> bias;
    if (layer.bias) {
        bias = tape.constant(*layer.bias);
    }
    return lora_forward(tape.constant(x), tape.constant(layer.weight), bias, tape.constant(layer.a),
                        tape.constant(layer.b), static_cast<T>(layer.scaling()))
        .value();
}

template <typename T>
Tensor<T> lora_merge(const LoraLinear<T>& layer) {
    Tensor<T> merged = layer.weight;
    auto delta = matmul(layer.b, layer.a);
    const T s = static_cast<T>(layer.scaling());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        merged[i] += s * delta[i];
    }
    return merged;
}

template <typename T>
void add_lora(ParamStore<T>& store, const std::string& layer, std::size_t rank, double alpha, Rng& rng) {
    const auto& weight = store.value(layer + ".weight");
    const auto d = weight.rows(), k = weight.cols();
    check_rank(d, k, rank, alpha);
    store.add(layer + kLoraA, Tensor<T>::randn({rank, k}, rng, kLoraInitStd), Section::lora);
    store.add(layer + kLoraB, Tensor<T>::zeros({d, rank}), Section::lora);
    store.add_buffer(layer + kLoraAlpha, Tensor<T>::scalar(static_cast<T>(alpha)), Section::lora);
}

template <typename T>
bool has_lora(const ParamStore<T>& store, const std::string& layer) {
    return store.contains(layer + kLoraA);
}

template <typename T>
std::vector<std::string> lora_layers(const ParamStore<T>& store) {
    std::vector<std::string> out;
    for (const auto& [name, p] : store) {
        if (name.size() > kLoraA.size() && name.ends_with(kLoraA)) {
            out.push_back(name.substr(0, name.size() - kLoraA.size()));
        }
    }
    return out;
}

template <typename T>
Var<T> apply_lora_linear(Binder<T>& bind, const std::string& layer, Var<T> x) {
    auto weight = bind(layer + ".weight");
    Var<T> bias;
    if (bind.has(layer + ".bias")) {
        bias = bind(layer + ".bias");
    }
    if (!bind.has(layer + kLoraA)) {
        if (x.cols() != weight.cols()) {
            throw ShapeError(layer + ": input " + shape_str(x.shape()) + " does not fit weight " +
                             shape_str(weight.shape()));
        }
        return bias.valid() ? linear(x, weight, bias) : linear(x, weight);
    }
    auto a = bind(layer + kLoraA);
    const T alpha = bind.store().value(layer + kLoraAlpha).item();
    const T scaling = alpha / static_cast<T>(a.rows());
    return lora_forward(x, weight, bias, a, bind(layer + kLoraB), scaling);
}

template <typename T>
void merge_all_lora(ParamStore<T>& store) {
    for (const auto& layer : lora_layers(store)) {
        LoraLinear<T> view;
        view.weight = store.value(layer + ".weight");
        view.a = store.value(layer + kLoraA);
        view.b = store.value(layer + kLoraB);
        view.rank = view.a.rows();
        view.alpha = static_cast<double>(store.value(layer + kLoraAlpha).item());
        store.value(layer + ".weight") = lora_merge(view);
    }
    store.remove_section(Section::lora);
}

#define MGIMM_INSTANTIATE_LORA(T)                                                                        \
    template struct LoraLinear<T>;                                                                       \
    template LoraLinear<T> lora_attach(Tensor<T>, std::optional<Tensor<T>>, std::size_t, double, Rng&);  \
    template LoraLinear<T> lora_init<T>(std::size_t, std::size_t, std::size_t, double, Rng&);            \
    template Tensor<T> base_forward(const Tensor<T>&, const LoraLinear<T>&);                             \
    template Tensor<T> lora_forward(const Tensor<T>&, const LoraLinear<T>&);                             \
    template Var<T> lora_forward(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, T);                             \
    template Tensor<T> lora_merge(const LoraLinear<T>&);                                                 \
    template void add_lora(ParamStore<T>&, const std::string&, std::size_t, double, Rng&);               \
    template bool has_lora(const ParamStore<T>&, const std::string&);                                    \
    template std::vector<std::string> lora_layers(const ParamStore<T>&);                                 \
    template Var<T> apply_lora_linear(Binder<T>&, const std::string&, Var<T>);                           \
    template void merge_all_lora(ParamStore<T>&);

MGIMM_INSTANTIATE_LORA(float)
MGIMM_INSTANTIATE_LORA(double)

}  // namespace mgimm

#include "mgimm/attention.hpp"

#include <cmath>

namespace mgimm {

template <typename T>
void AttentionParams<T>::validate() const {
    const auto dm = d_model(), da = d_attn();
    if (w_k.shape() != Shape{dm, da} || w_v.shape() != Shape{dm, da}) {
        throw ShapeError("attention: W_k/W_v must be " + shape_str({dm, da}));
    }
    if (w_o.shape() != Shape{da, dm}) {
        throw ShapeError("attention: W_o must be " + shape_str({da, dm}) + ", got " + shape_str(w_o.shape()));
    }
    if (num_heads == 0 || da % num_heads != 0) {
        throw ShapeError("attention: d_attn " + std::to_string(da) + " is not divisible by " +
                         std::to_string(num_heads) + " heads");
    }
}

template <typename T>
Var<T> scaled_dot_product_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads, bool causal) {
    const std::size_t d_attn = q.cols();
    if (k.cols() != d_attn || v.cols() != d_attn) {
        throw ShapeError("attention: Q/K/V widths differ: " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    if (k.rows() != v.rows()) {
        throw ShapeError("attention: keys and values have different lengths");
    }
    if (num_heads == 0 || d_attn % num_heads != 0) {
        throw ShapeError("attention: d_attn not divisible by head count");
    }
    const std::size_t d_head = d_attn / num_heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(d_head));
    if (num_heads == 1) {
        auto weights = softmax(scale(matmul_nt(q, k), inv_scale), causal);
        return matmul(weights, v);
    }
    std::vector<Var<T>> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        auto qh = slice_cols(q, h * d_head, d_head);
        auto kh = slice_cols(k, h * d_head, d_head);
        auto vh = slice_cols(v, h * d_head, d_head);
        auto weights = softmax(scale(matmul_nt(qh, kh), inv_scale), causal);
        heads.push_back(matmul(weights, vh));
    }
    return concat_cols(heads);
}

template <typename T>
Var<T> attention(Var<T> q_in, Var<T> k_in, Var<T> v_in, const AttentionParams<T>& params, bool causal) {
    params.validate();
    const auto dm = params.d_model();
    for (const auto* in : {&q_in, &k_in, &v_in}) {
        if (in->value().rank() != 2 || in->cols() != dm) {
            throw ShapeError("attention: input shape " + shape_str(in->shape()) +
                             " does not match d_model " + std::to_string(dm));
        }
    }
    auto q = matmul(q_in, params.w_q);
    auto k = matmul(k_in, params.w_k);
    auto v = matmul(v_in, params.w_v);
    return matmul(scaled_dot_product_attention(q, k, v, params.num_heads, causal), params.w_o);
}

template <typename T>
Var<T> multi_head_attention(Var<T> q_in, Var<T> kv_in, const AttentionParams<T>& params) {
    return attention(q_in, kv_in, kv_in, params, false);
}

template <typename T>
void add_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                          std::size_t d_attn, Section section, Rng& rng) {
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double out_std = 1.0 / std::sqrt(static_cast<double>(d_attn));
    store.add(prefix + ".wq", Tensor<T>::randn({d_model, d_attn}, rng, in_std), section);
    store.add(prefix + ".wk", Tensor<T>::randn({d_model, d_attn}, rng, in_std), section);
    store.add(prefix + ".wv", Tensor<T>::randn({d_model, d_attn}, rng, in_std), section);
    store.add(prefix + ".wo", Tensor<T>::randn({d_attn, d_model}, rng, out_std), section);
}

template <typename T>
AttentionParams<T> bind_attention(Binder<T>& bind, const std::string& prefix, std::size_t num_heads) {
    AttentionParams<T> p{bind(prefix + ".wq"), bind(prefix + ".wk"), bind(prefix + ".wv"),
                         bind(prefix + ".wo"), num_heads};
    p.validate();
    return p;
}

#define MGIMM_INSTANTIATE_ATTENTION(T)                                                              \
    template struct AttentionParams<T>;                                                             \
    template Var<T> scaled_dot_product_attention(Var<T>, Var<T>, Var<T>, std::size_t, bool);        \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionParams<T>&, bool);             \
    template Var<T> multi_head_attention(Var<T>, Var<T>, const AttentionParams<T>&);                \
    template void add_attention_params(ParamStore<T>&, const std::string&, std::size_t,             \
                                       std::size_t, Section, Rng&);                                 \
    template AttentionParams<T> bind_attention(Binder<T>&, const std::string&, std::size_t);

MGIMM_INSTANTIATE_ATTENTION(float)
MGIMM_INSTANTIATE_ATTENTION(double)

}  // namespace mgimm

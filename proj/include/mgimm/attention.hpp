#pragma once

#include <string>

#include "mgimm/params.hpp"

namespace mgimm {

/// Projection weights of one multi-head attention layer, used as x * W
/// (row vectors on the left). No biases.
///
/// Heads are contiguous slices of the d_attn axis: head h owns columns
/// [h * d_attn / num_heads, (h + 1) * d_attn / num_heads) of Q, K and V and
/// the matching rows of w_o.
template <typename T>
struct AttentionParams {
    Var<T> w_q;  // [d_model, d_attn]
    Var<T> w_k;  // [d_model, d_attn]
    Var<T> w_v;  // [d_model, d_attn]
    Var<T> w_o;  // [d_attn, d_model]
    std::size_t num_heads = 1;

    std::size_t d_model() const { return w_q.rows(); }
    std::size_t d_attn() const { return w_q.cols(); }

    /// Throws ShapeError unless the four matrices agree and d_attn is a
    /// multiple of num_heads.
    void validate() const;
};

/// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated.
/// q: [Nq, d_attn], k and v: [Nk, d_attn]. With causal=true, Nq must equal
/// Nk and query i only sees keys 0..i.
template <typename T>
Var<T> scaled_dot_product_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads,
                                    bool causal = false);

/// General form: queries from q_in, keys from k_in, values from v_in, all
/// [*, d_model]. Keys and values must have the same number of rows.
template <typename T>
Var<T> attention(Var<T> q_in, Var<T> k_in, Var<T> v_in, const AttentionParams<T>& params,
                 bool causal = false);

/// Keys and values both taken from kv_in. Self-attention is kv_in == q_in.
template <typename T>
Var<T> multi_head_attention(Var<T> q_in, Var<T> kv_in, const AttentionParams<T>& params);

/// Registers `<prefix>.wq/.wk/.wv/.wo`.
template <typename T>
void add_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                          std::size_t d_attn, Section section, Rng& rng);

template <typename T>
AttentionParams<T> bind_attention(Binder<T>& bind, const std::string& prefix, std::size_t num_heads);

}  // namespace mgimm

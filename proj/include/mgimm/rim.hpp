#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgimm/attention.hpp"

namespace mgimm {

/// Axis-aligned box in pixels, [x_min, y_min, width, height], inside an
/// image_w x image_h frame.
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double width = 0.0;
    double height = 0.0;
    double image_w = 0.0;
    double image_h = 0.0;

    double x_max() const { return x_min + width; }
    double y_max() const { return y_min + height; }

    /// Human-readable list of broken invariants; empty when the box is valid.
    std::vector<std::string> violations() const;

    /// Throws ValidationError listing every violation.
    void validate() const;
};

struct RimConfig {
    std::size_t d_model = 1024;
    std::size_t num_layers = 2;
    std::size_t d_attn = 128;
    std::size_t num_heads = 8;
    std::size_t mlp_dim = 2048;

    static RimConfig paper() { return {}; }
    static RimConfig toy() { return {32, 2, 32, 4, 64}; }

    void validate() const;
};

/// Frozen random-Fourier frequency matrix [d_model / 2, 2] drawn from N(0, 1)
/// with the given seed.
template <typename T>
Tensor<T> make_pe_frequencies(std::size_t d_model, std::uint64_t seed);

/// Encoding of a normalised point (u, v) in [0,1]^2:
/// concat(sin(2*pi*F*c), cos(2*pi*F*c)) with c = 2*(u, v) - 1. Length d_model.
template <typename T>
Tensor<T> positional_encoding(const Tensor<T>& frequencies, double u, double v);

/// Encodings of the cell centres of a rows x cols patch grid, row-major,
/// shape [rows * cols, d_model].
template <typename T>
Tensor<T> grid_positional_encoding(const Tensor<T>& frequencies, std::size_t rows, std::size_t cols);

/// Positional encodings of the two box corners, [2, d_model]: row 0 is the
/// top-left corner, row 1 the bottom-right corner.
template <typename T>
Tensor<T> corner_encoding(const BBox& box, const Tensor<T>& frequencies);

/// Box tokens t_bbox [2, d_model]: corner encodings plus the learned
/// corner-type embeddings (row 0 top-left, row 1 bottom-right).
template <typename T>
Var<T> encode_bbox(const BBox& box, const Tensor<T>& frequencies, Var<T> corner_embeddings);

/// Intermediate values of a RIM pass, recorded when a trace is passed in.
template <typename T>
struct RimTrace {
    std::vector<Tensor<T>> box_to_image;  // cross-attention output per layer, [2, d_model]
};

template <typename T>
struct RimOutput {
    Var<T> regional;  // x_r, [2, d_model]
    Var<T> image;     // updated image tokens, [N, d_model]
};

/// Parameter names under `rim.`: corner_embed, pe_freq (buffer) and per
/// layer `rim.layers.<i>.{self_attn,cross_t2i,cross_i2t}.*`,
/// `.mlp.fc1/.fc2`, and six pre-norms.
template <typename T>
void add_rim_params(ParamStore<T>& store, const RimConfig& config, Rng& rng, std::uint64_t pe_seed);

/// Two-way region/image attention. Each layer runs, in order:
///   1. self-attention over the box tokens,
///   2. cross-attention, box tokens querying image tokens,
///   3. point-wise MLP on the box tokens only,
///   4. cross-attention, image tokens querying box tokens.
/// Every step is pre-norm with a residual connection. The original box tokens
/// are added to the box-side queries/keys and image_pe to the image-side
/// queries/keys whenever they enter attention; values carry no encoding.
template <typename T>
RimOutput<T> rim_forward(Binder<T>& bind, const RimConfig& config, Var<T> box_tokens, Var<T> image,
                         const Tensor<T>& image_pe, RimTrace<T>* trace = nullptr);

}  // namespace mgimm

#include "mgimm/rim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mgimm/layers.hpp"

namespace mgimm {

std::vector<std::string> BBox::violations() const {
    std::vector<std::string> out;
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(x_min) || !finite(y_min) || !finite(width) || !finite(height)) {
        out.emplace_back("bbox has non-finite coordinates");
        return out;
    }
    if (!(image_w > 0.0) || !(image_h > 0.0)) {
        out.emplace_back("image size must be positive");
    }
    if (!(width > 0.0)) {
        out.emplace_back("bbox width must be > 0, got " + std::to_string(width));
    }
    if (!(height > 0.0)) {
        out.emplace_back("bbox height must be > 0, got " + std::to_string(height));
    }
    if (x_min < 0.0 || y_min < 0.0) {
        out.emplace_back("bbox origin must be non-negative");
    }
    if (x_max() > image_w) {
        out.emplace_back("bbox x_min + width = " + std::to_string(x_max()) + " exceeds image width " +
                         std::to_string(image_w));
    }
    if (y_max() > image_h) {
        out.emplace_back("bbox y_min + height = " + std::to_string(y_max()) + " exceeds image height " +
                         std::to_string(image_h));
    }
    return out;
}

void BBox::validate() const {
    const auto problems = violations();
    if (!problems.empty()) {
        std::ostringstream msg;
        msg << "invalid bbox:";
        for (const auto& p : problems) msg << ' ' << p << ';';
        throw ValidationError(msg.str());
    }
}

void RimConfig::validate() const {
    if (d_model == 0 || num_layers == 0 || d_attn == 0 || num_heads == 0 || mlp_dim == 0) {
        throw ValidationError("RIM config values must be positive");
    }
    if (d_attn % num_heads != 0) {
        throw ValidationError("RIM d_attn must be divisible by num_heads");
    }
    if (d_model % 2 != 0) {
        throw ValidationError("RIM d_model must be even for sin/cos positional encoding");
    }
}

template <typename T>
Tensor<T> make_pe_frequencies(std::size_t d_model, std::uint64_t seed) {
    if (d_model == 0 || d_model % 2 != 0) {
        throw ValidationError("positional encoding width must be positive and even");
    }
    Rng rng(seed);
    return Tensor<T>::randn({d_model / 2, 2}, rng, 1.0);
}

template <typename T>
Tensor<T> positional_encoding(const Tensor<T>& frequencies, double u, double v) {
    if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) {
        throw ValidationError("positional_encoding: point (" + std::to_string(u) + ", " + std::to_string(v) +
                              ") outside [0,1]^2");
    }
    const std::size_t half = frequencies.rows();
    const double cu = 2.0 * u - 1.0;
    const double cv = 2.0 * v - 1.0;
    Tensor<T> out({2 * half});
    for (std::size_t i = 0; i < half; ++i) {
        const double proj = 2.0 * std::numbers::pi *
                            (static_cast<double>(frequencies(i, 0)) * cu + static_cast<double>(frequencies(i, 1)) * cv);
        out[i] = static_cast<T>(std::sin(proj));
        out[half + i] = static_cast<T>(std::cos(proj));
    }
    return out;
}

template <typename T>
Tensor<T> grid_positional_encoding(const Tensor<T>& frequencies, std::size_t rows, std::size_t cols) {
    const std::size_t d = 2 * frequencies.rows();
    Tensor<T> out({rows * cols, d});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const auto pe = positional_encoding(frequencies, (static_cast<double>(c) + 0.5) / static_cast<double>(cols),
                                                (static_cast<double>(r) + 0.5) / static_cast<double>(rows));
            std::copy(pe.data().begin(), pe.data().end(), out.row(r * cols + c).begin());
        }
    }
    return out;
}

template <typename T>
Tensor<T> corner_encoding(const BBox& box, const Tensor<T>& frequencies) {
    box.validate();
    const auto tl = positional_encoding(frequencies, box.x_min / box.image_w, box.y_min / box.image_h);
    const auto br = positional_encoding(frequencies, box.x_max() / box.image_w, box.y_max() / box.image_h);
    Tensor<T> out({2, tl.size()});
    std::copy(tl.data().begin(), tl.data().end(), out.row(0).begin());
    std::copy(br.data().begin(), br.data().end(), out.row(1).begin());
    return out;
}

template <typename T>
Var<T> encode_bbox(const BBox& box, const Tensor<T>& frequencies, Var<T> corner_embeddings) {
    auto pe = corner_encoding(box, frequencies);
    if (corner_embeddings.shape() != pe.shape()) {
        throw ShapeError("encode_bbox: corner embeddings must be " + shape_str(pe.shape()) + ", got " +
                         shape_str(corner_embeddings.shape()));
    }
    return add(corner_embeddings.tape().constant(std::move(pe)), corner_embeddings);
}

template <typename T>
void add_rim_params(ParamStore<T>& store, const RimConfig& config, Rng& rng, std::uint64_t pe_seed) {
    config.validate();
    const auto d = config.d_model;
    store.add("rim.corner_embed", Tensor<T>::randn({2, d}, rng, 1.0), Section::rim);
    store.add_buffer("rim.pe_freq", make_pe_frequencies<T>(d, pe_seed), Section::rim);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "rim.layers." + std::to_string(i);
        add_attention_params(store, p + ".self_attn", d, config.d_attn, Section::rim, rng);
        add_attention_params(store, p + ".cross_t2i", d, config.d_attn, Section::rim, rng);
        add_attention_params(store, p + ".cross_i2t", d, config.d_attn, Section::rim, rng);
        add_linear(store, p + ".mlp.fc1", d, config.mlp_dim, Section::rim, rng);
        add_linear(store, p + ".mlp.fc2", config.mlp_dim, d, Section::rim, rng);
        for (const char* norm : {"norm_sa", "norm_t2i_box", "norm_t2i_img", "norm_mlp", "norm_i2t_img", "norm_i2t_box"}) {
            add_layer_norm(store, p + "." + norm, d, Section::rim);
        }
    }
}

template <typename T>
RimOutput<T> rim_forward(Binder<T>& bind, const RimConfig& config, Var<T> box_tokens, Var<T> image,
                         const Tensor<T>& image_pe, RimTrace<T>* trace) {
    config.validate();
    const auto d = config.d_model;
    if (box_tokens.shape() != Shape{2, d}) {
        throw ShapeError("rim_forward: box tokens must be " + shape_str({2, d}) + ", got " +
                         shape_str(box_tokens.shape()));
    }
    if (image.value().rank() != 2 || image.cols() != d || image.rows() == 0) {
        throw ShapeError("rim_forward: image features must be [N, " + std::to_string(d) + "], got " +
                         shape_str(image.shape()));
    }
    if (image_pe.shape() != image.shape()) {
        throw ShapeError("rim_forward: image positional encoding " + shape_str(image_pe.shape()) +
                         " does not match features " + shape_str(image.shape()));
    }
    auto& tape = bind.tape();
    const Var<T> box_pe = box_tokens;
    const Var<T> img_pe = tape.constant(image_pe);
    Var<T> box = box_tokens;
    Var<T> img = image;

    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "rim.layers." + std::to_string(i);

        {
            auto x = apply_layer_norm(bind, p + ".norm_sa", box);
            auto qk = add(x, box_pe);
            box = add(box, attention(qk, qk, x, bind_attention(bind, p + ".self_attn", config.num_heads)));
        }
        {
            auto xb = apply_layer_norm(bind, p + ".norm_t2i_box", box);
            auto xi = apply_layer_norm(bind, p + ".norm_t2i_img", img);
            auto out = attention(add(xb, box_pe), add(xi, img_pe), xi,
                                 bind_attention(bind, p + ".cross_t2i", config.num_heads));
            if (trace != nullptr) {
                trace->box_to_image.push_back(out.value());
            }
            box = add(box, out);
        }
        {
            auto x = apply_layer_norm(bind, p + ".norm_mlp", box);
            auto h = gelu(apply_linear(bind, p + ".mlp.fc1", x));
            box = add(box, apply_linear(bind, p + ".mlp.fc2", h));
        }
        {
            auto xi = apply_layer_norm(bind, p + ".norm_i2t_img", img);
            auto xb = apply_layer_norm(bind, p + ".norm_i2t_box", box);
            img = add(img, attention(add(xi, img_pe), add(xb, box_pe), xb,
                                     bind_attention(bind, p + ".cross_i2t", config.num_heads)));
        }
    }
    return {box, img};
}

#define MGIMM_INSTANTIATE_RIM(T)                                                                     \
    template Tensor<T> make_pe_frequencies<T>(std::size_t, std::uint64_t);                           \
    template Tensor<T> positional_encoding(const Tensor<T>&, double, double);                        \
    template Tensor<T> grid_positional_encoding(const Tensor<T>&, std::size_t, std::size_t);         \
    template Tensor<T> corner_encoding(const BBox&, const Tensor<T>&);                               \
    template Var<T> encode_bbox(const BBox&, const Tensor<T>&, Var<T>);                              \
    template void add_rim_params(ParamStore<T>&, const RimConfig&, Rng&, std::uint64_t);             \
    template RimOutput<T> rim_forward(Binder<T>&, const RimConfig&, Var<T>, Var<T>, const Tensor<T>&, \
                                      RimTrace<T>*);

MGIMM_INSTANTIATE_RIM(float)
MGIMM_INSTANTIATE_RIM(double)

}  // namespace mgimm

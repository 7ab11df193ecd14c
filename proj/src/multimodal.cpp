#include "mgimm/multimodal.hpp"

#include <algorithm>
#include <cmath>

#include "mgimm/attention.hpp"
#include "mgimm/layers.hpp"

namespace mgimm {

void EncoderConfig::validate() const {
    if (image_size == 0 || patch == 0 || channels == 0 || d_v == 0) {
        throw ValidationError("encoder config values must be positive");
    }
    if (image_size % patch != 0) {
        throw ValidationError("encoder image size " + std::to_string(image_size) +
                              " is not divisible by patch size " + std::to_string(patch));
    }
}

void LmConfig::validate() const {
    if (d_lm == 0 || num_layers == 0 || num_heads == 0 || mlp_dim == 0 || max_seq_len == 0) {
        throw ValidationError("LM config values must be positive");
    }
    if (d_lm % num_heads != 0) {
        throw ValidationError("LM width must be divisible by its head count");
    }
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.encoder = EncoderConfig::toy();
    c.rim = RimConfig::toy();
    c.lm = LmConfig::toy();
    return c;
}

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.encoder = EncoderConfig::paper();
    c.rim = RimConfig::paper();
    c.lm = LmConfig::paper();
    return c;
}

void ModelConfig::validate() const {
    encoder.validate();
    rim.validate();
    lm.validate();
    if (rim.d_model != encoder.d_v) {
        throw ValidationError("RIM width " + std::to_string(rim.d_model) + " must equal encoder width " +
                              std::to_string(encoder.d_v));
    }
    if (vocab_size <= static_cast<std::size_t>(Vocab::kReservedCount)) {
        throw ValidationError("vocab_size must cover the reserved tokens and at least one word");
    }
}

void Image::validate() const {
    if (height == 0 || width == 0 || channels == 0) {
        throw ValidationError("image dimensions must be positive");
    }
    if (pixels.size() != height * width * channels) {
        throw ValidationError("image pixel count " + std::to_string(pixels.size()) + " does not match " +
                              std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels));
    }
}

InstructionPrompt InstructionPrompt::from_ids(std::vector<int> ids, PromptMode mode) {
    const int wanted = mode == PromptMode::region ? Vocab::kRegion : Vocab::kImage;
    const int other = mode == PromptMode::region ? Vocab::kImage : Vocab::kRegion;
    std::size_t found = 0, where = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == wanted) {
            ++found;
            where = i;
        } else if (ids[i] == other) {
            throw ValidationError("prompt contains a placeholder of the wrong kind");
        }
    }
    if (found != 1) {
        throw ValidationError("prompt must contain exactly one placeholder, found " + std::to_string(found));
    }
    return InstructionPrompt{std::move(ids), where, mode};
}

InstructionPrompt InstructionPrompt::from_text(const Vocab& vocab, std::string_view text, PromptMode mode) {
    std::vector<int> ids{Vocab::kBos};
    for (int id : vocab.encode(text)) ids.push_back(id);
    return from_ids(std::move(ids), mode);
}

std::vector<std::string> lm_adaptable_layers(const LmConfig& config) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "lm.layers." + std::to_string(i);
        for (const char* name : {".attn.q", ".attn.k", ".attn.v", ".attn.o", ".mlp.fc1", ".mlp.fc2"}) {
            out.push_back(p + name);
        }
    }
    return out;
}

template <typename T>
ParamStore<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParamStore<T> store;
    Rng rng(seed);
    const auto& enc = config.encoder;
    add_linear(store, "encoder.proj", enc.patch_dim(), enc.d_v, Section::encoder, rng);
    add_layer_norm(store, "encoder.norm", enc.d_v, Section::encoder);

    add_rim_params(store, config.rim, rng, config.pe_seed);

    const auto d_lm = config.lm.d_lm;
    add_linear(store, "v2l.fc1", enc.d_v, d_lm, Section::v2l, rng);
    add_linear(store, "v2l.fc2", d_lm, d_lm, Section::v2l, rng);

    const auto& lm = config.lm;
    store.add("lm.embed", Tensor<T>::randn({config.vocab_size, d_lm}, rng, 1.0), Section::lm);
    store.add("lm.pos", Tensor<T>::randn({lm.max_seq_len, d_lm}, rng, 0.1), Section::lm);
    for (std::size_t i = 0; i < lm.num_layers; ++i) {
        const std::string p = "lm.layers." + std::to_string(i);
        add_layer_norm(store, p + ".ln1", d_lm, Section::lm);
        for (const char* proj : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) {
            add_linear(store, p + proj, d_lm, d_lm, Section::lm, rng);
        }
        add_layer_norm(store, p + ".ln2", d_lm, Section::lm);
        add_linear(store, p + ".mlp.fc1", d_lm, lm.mlp_dim, Section::lm, rng);
        add_linear(store, p + ".mlp.fc2", lm.mlp_dim, d_lm, Section::lm, rng);
    }
    add_layer_norm(store, "lm.ln_f", d_lm, Section::lm);
    store.add("lm.head.weight",
              Tensor<T>::randn({config.vocab_size, d_lm}, rng, 1.0 / std::sqrt(static_cast<double>(d_lm))),
              Section::lm);
    return store;
}

Tensor<float> image_to_patches(const Image& image, const EncoderConfig& config) {
    image.validate();
    if (image.height != image.width || image.height != config.image_size || image.channels != config.channels) {
        throw ValidationError("encoder expects " + std::to_string(config.image_size) + "x" +
                              std::to_string(config.image_size) + "x" + std::to_string(config.channels) +
                              " images, got " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                              "x" + std::to_string(image.channels));
    }
    if (image.height % config.patch != 0 || image.width % config.patch != 0) {
        throw ValidationError("image size is not divisible by the patch size");
    }
    const auto p = config.patch, c = image.channels, grid = image.width / p;
    Tensor<float> out({grid * grid, config.patch_dim()});
    for (std::size_t gr = 0; gr < grid; ++gr) {
        for (std::size_t gc = 0; gc < grid; ++gc) {
            auto row = out.row(gr * grid + gc);
            std::size_t k = 0;
            for (std::size_t y = 0; y < p; ++y) {
                for (std::size_t x = 0; x < p; ++x) {
                    const std::size_t base = ((gr * p + y) * image.width + (gc * p + x)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) row[k++] = image.pixels[base + ch];
                }
            }
        }
    }
    return out;
}

template <typename T>
GlobalFeatures<T> encode_image(Binder<T>& bind, const EncoderConfig& config, const Image& image) {
    auto patches = bind.tape().constant(image_to_patches(image, config).template cast<T>());
    auto projected = apply_linear(bind, "encoder.proj", patches);
    return {apply_layer_norm(bind, "encoder.norm", projected), config.grid(), config.grid()};
}

template <typename T>
GlobalFeatures<T> encode_visual(Binder<T>& bind, const EncoderConfig& config, const VisualInput& input) {
    if (input.features) {
        const auto& f = *input.features;
        if (f.rank() != 2 || f.cols() != config.d_v || f.rows() != input.grid_rows * input.grid_cols) {
            throw ShapeError("precomputed features " + shape_str(f.shape()) + " do not match a " +
                             std::to_string(input.grid_rows) + "x" + std::to_string(input.grid_cols) + " grid of width " +
                             std::to_string(config.d_v));
        }
        return {bind.tape().constant(f.template cast<T>()), input.grid_rows, input.grid_cols};
    }
    if (input.image) {
        return encode_image(bind, config, *input.image);
    }
    throw ValidationError("sample has neither pixels nor precomputed features");
}

template <typename T>
Var<T> v2l_map(Binder<T>& bind, Var<T> features) {
    return apply_linear(bind, "v2l.fc2", gelu(apply_linear(bind, "v2l.fc1", features)));
}

template <typename T>
Var<T> build_prompt(const InstructionPrompt& prompt, const MappedFeatures<T>& visual, Var<T> embed_table) {
    if (prompt.mode != visual.origin) {
        throw ValidationError("prompt placeholder kind does not match the visual features");
    }
    const auto& ids = prompt.token_ids;
    if (prompt.placeholder_index >= ids.size()) {
        throw ValidationError("prompt placeholder index out of range");
    }
    // re-validate in case the struct was assembled by hand
    InstructionPrompt::from_ids(ids, prompt.mode);
    if (visual.tokens.cols() != embed_table.cols()) {
        throw ShapeError("visual tokens width " + std::to_string(visual.tokens.cols()) +
                         " does not match embedding width " + std::to_string(embed_table.cols()));
    }
    std::vector<Var<T>> parts;
    const std::vector<int> before(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(prompt.placeholder_index));
    const std::vector<int> after(ids.begin() + static_cast<std::ptrdiff_t>(prompt.placeholder_index) + 1, ids.end());
    if (!before.empty()) parts.push_back(embedding(embed_table, before));
    parts.push_back(visual.tokens);
    if (!after.empty()) parts.push_back(embedding(embed_table, after));
    return concat_rows(parts);
}

template <typename T>
Var<T> lm_forward(Binder<T>& bind, const LmConfig& config, Var<T> sequence) {
    const std::size_t len = sequence.rows();
    if (sequence.value().rank() != 2 || sequence.cols() != config.d_lm || len == 0) {
        throw ShapeError("lm_forward: sequence must be [T, " + std::to_string(config.d_lm) + "], got " +
                         shape_str(sequence.shape()));
    }
    if (len > config.max_seq_len) {
        throw ShapeError("lm_forward: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
    }
    Var<T> h = add(sequence, slice_rows(bind("lm.pos"), 0, len));
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "lm.layers." + std::to_string(i);
        {
            auto x = apply_layer_norm(bind, p + ".ln1", h);
            auto q = apply_lora_linear(bind, p + ".attn.q", x);
            auto k = apply_lora_linear(bind, p + ".attn.k", x);
            auto v = apply_lora_linear(bind, p + ".attn.v", x);
            auto a = scaled_dot_product_attention(q, k, v, config.num_heads, true);
            h = add(h, apply_lora_linear(bind, p + ".attn.o", a));
        }
        {
            auto x = apply_layer_norm(bind, p + ".ln2", h);
            auto m = gelu(apply_lora_linear(bind, p + ".mlp.fc1", x));
            h = add(h, apply_lora_linear(bind, p + ".mlp.fc2", m));
        }
    }
    return linear(apply_layer_norm(bind, "lm.ln_f", h), bind("lm.head.weight"));
}

template <typename T>
std::vector<int> generate(const ParamStore<T>& params, const LmConfig& config, const Tensor<T>& prefix,
                          std::size_t max_len) {
    std::vector<int> out;
    while (out.size() < max_len && prefix.rows() + out.size() <= config.max_seq_len) {
        Tape<T> tape;
        Binder<T> bind(tape, params, false);
        std::vector<Var<T>> parts{tape.constant(prefix)};
        if (!out.empty()) parts.push_back(embedding(bind("lm.embed"), out));
        auto logits = lm_forward(bind, config, concat_rows(parts)).value();
        const auto last = logits.row(logits.rows() - 1);
        const auto best = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
        if (best == Vocab::kEos) break;
        out.push_back(best);
    }
    return out;
}

#define MGIMM_INSTANTIATE_MULTIMODAL(T)                                                                  \
    template ParamStore<T> init_model<T>(const ModelConfig&, std::uint64_t);                             \
    template GlobalFeatures<T> encode_image(Binder<T>&, const EncoderConfig&, const Image&);              \
    template GlobalFeatures<T> encode_visual(Binder<T>&, const EncoderConfig&, const VisualInput&);       \
    template Var<T> v2l_map(Binder<T>&, Var<T>);                                                         \
    template Var<T> build_prompt(const InstructionPrompt&, const MappedFeatures<T>&, Var<T>);            \
    template Var<T> lm_forward(Binder<T>&, const LmConfig&, Var<T>);                                     \
    template std::vector<int> generate(const ParamStore<T>&, const LmConfig&, const Tensor<T>&, std::size_t);

MGIMM_INSTANTIATE_MULTIMODAL(float)
MGIMM_INSTANTIATE_MULTIMODAL(double)

}  // namespace mgimm

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgimm/lora.hpp"
#include "mgimm/rim.hpp"
#include "mgimm/vocab.hpp"

namespace mgimm {

// ---- configuration ----------------------------------------------------------

/// Patch encoder standing in for the CLIP vision tower: square images cut
/// into non-overlapping patches, one linear projection, layer norm.
struct EncoderConfig {
    std::size_t image_size = 336;
    std::size_t patch = 14;
    std::size_t channels = 3;
    std::size_t d_v = 1024;

    std::size_t grid() const { return image_size / patch; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch * patch * channels; }

    static EncoderConfig paper() { return {}; }
    static EncoderConfig toy() { return {32, 8, 3, 32}; }

    void validate() const;
};

/// Small pre-norm causal transformer standing in for the language model.
struct LmConfig {
    std::size_t d_lm = 32;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t mlp_dim = 128;
    std::size_t max_seq_len = 128;

    static LmConfig toy() { return {}; }
    static LmConfig paper() { return {1024, 2, 8, 4096, 1024}; }

    void validate() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    RimConfig rim;
    LmConfig lm;
    std::size_t vocab_size = 0;
    std::uint64_t pe_seed = 0;

    static ModelConfig toy();
    static ModelConfig paper();

    /// Also checks that the RIM width matches the encoder output width.
    void validate() const;
};

// ---- inputs -----------------------------------------------------------------

/// Raster image, height x width x channels, row-major HWC floats.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> pixels;

    void validate() const;
};

/// Visual input of one sample: either a raster to run through the encoder
/// or a precomputed grid of global features [rows * cols, d_v].
struct VisualInput {
    std::optional<Image> image;
    std::optional<Tensor<float>> features;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
};

enum class PromptMode { region, image };

/// Tokenised instruction: <bos> followed by the instruction tokens,
/// containing exactly one placeholder (<region> or <image>).
struct InstructionPrompt {
    std::vector<int> token_ids;
    std::size_t placeholder_index = 0;
    PromptMode mode = PromptMode::image;

    /// Locates the single placeholder; throws ValidationError on zero or
    /// several placeholders or a placeholder of the wrong kind.
    static InstructionPrompt from_ids(std::vector<int> ids, PromptMode mode);
    static InstructionPrompt from_text(const Vocab& vocab, std::string_view text, PromptMode mode);
};

// ---- modules ----------------------------------------------------------------

template <typename T>
struct GlobalFeatures {
    Var<T> grid;  // [rows * cols, d_v]
    std::size_t rows = 0;
    std::size_t cols = 0;
};

template <typename T>
struct MappedFeatures {
    Var<T> tokens;  // [n, d_lm]
    PromptMode origin = PromptMode::image;
};

/// Initialises encoder, RIM, mapper and LM parameters (no adapters).
template <typename T>
ParamStore<T> init_model(const ModelConfig& config, std::uint64_t seed);

/// Patch matrix [num_patches, patch_dim]; each row is one patch flattened
/// in (row, col, channel) order, patches in row-major grid order.
Tensor<float> image_to_patches(const Image& image, const EncoderConfig& config);

template <typename T>
GlobalFeatures<T> encode_image(Binder<T>& bind, const EncoderConfig& config, const Image& image);

/// Runs the encoder or wraps precomputed features.
template <typename T>
GlobalFeatures<T> encode_visual(Binder<T>& bind, const EncoderConfig& config, const VisualInput& input);

/// linear -> GELU -> linear, same weights for regional and global features.
template <typename T>
Var<T> v2l_map(Binder<T>& bind, Var<T> features);

/// Embeds the prompt and splices the visual tokens in place of the
/// placeholder: [T = len(prompt) - 1 + n_visual, d_lm].
template <typename T>
Var<T> build_prompt(const InstructionPrompt& prompt, const MappedFeatures<T>& visual, Var<T> embed_table);

/// Names of the LM linear layers that take adapters (attention q/k/v/o and
/// both MLP projections of every block).
std::vector<std::string> lm_adaptable_layers(const LmConfig& config);

/// Causal transformer over input embeddings [T, d_lm] -> logits [T, V].
/// Learned positional embeddings are added here.
template <typename T>
Var<T> lm_forward(Binder<T>& bind, const LmConfig& config, Var<T> sequence);

/// Greedy decoding from prefix embeddings. Stops at <eos> (not returned)
/// or after max_len tokens.
template <typename T>
std::vector<int> generate(const ParamStore<T>& params, const LmConfig& config, const Tensor<T>& prefix,
                          std::size_t max_len);

}  // namespace mgimm

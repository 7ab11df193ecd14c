#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgimm/multimodal.hpp"

namespace mgimm {

/// Hyperparameters of one tuning stage.
struct TrainingConfig {
    int stage = 1;
    std::size_t batch_size = 4;
    std::size_t epochs = 1;
    std::size_t max_steps = 0;  // 0: epochs * ceil(N / batch_size)
    double base_lr = 1e-4;
    double v2l_lr = 0.0;  // stage 2 only
    std::size_t lora_r = 0;  // stage 2 only
    double lora_alpha = 0.0;  // stage 2 only
    std::uint64_t seed = 0;
    std::optional<std::size_t> warmup_steps;  // default: 3% of total steps
    double weight_decay = 0.0;
    // Language-model pretraining run before the stage-1 freeze; stands in
    // for loading pretrained LM weights. Stage 1 only.
    std::size_t lm_pretrain_steps = 0;
    double lm_pretrain_lr = 1e-3;

    static TrainingConfig preset(const std::string& name, int stage);

    std::size_t total_steps(std::size_t dataset_size) const;
    std::size_t warmup(std::size_t total) const;

    /// Throws ValidationError listing every problem.
    void validate() const;
};

/// Parsed run configuration document.
struct RunConfig {
    std::string preset = "toy";
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    std::string regions_path;
    std::string captions_path;
    std::size_t threads = 1;
    std::size_t max_generate_len = 64;
    ModelConfig model;  // vocab_size is filled in by stage 1
    TrainingConfig stage1;
    TrainingConfig stage2;
    std::string source;  // canonical JSON echo written into checkpoints

    /// Unknown keys, wrong types and bad values are all reported together
    /// in one ValidationError. Relative data paths resolve against base_dir.
    static RunConfig parse(const std::string& text, const std::string& base_dir = ".");
    static RunConfig load(const std::string& path);

    /// Preset defaults with no data paths.
    static RunConfig defaults(const std::string& preset);
};

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace mgimm

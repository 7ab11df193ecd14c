#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mgimm/checkpoint.hpp"
#include "mgimm/config.hpp"
#include "mgimm/data.hpp"
#include "mgimm/optim.hpp"

namespace mgimm {

// ---- per-sample graphs ------------------------------------------------------

/// Tokenised instructions, placeholder first.
struct PromptTemplates {
    InstructionPrompt region;
    std::vector<InstructionPrompt> image;

    static PromptTemplates encode(const Vocab& vocab, const InstructionSet& set = InstructionSet::standard());
};

/// Next-token targets for prompt + answer: ignore_id on every prompt
/// position except the last, then the answer tokens and <eos>.
/// Length prompt_len + answer.size().
std::vector<int> answer_targets(std::size_t prompt_len, const std::vector<int>& answer, int ignore_id = -1);

/// encode -> box tokens -> RIM -> mapper; [2, d_lm].
template <typename T>
MappedFeatures<T> region_features(Binder<T>& bind, const ModelConfig& config, const RegionSample& sample);

/// encode -> mapper, no RIM; [N, d_lm].
template <typename T>
MappedFeatures<T> image_features(Binder<T>& bind, const ModelConfig& config, const VisualInput& visual);

/// Mean cross-entropy over the answer tokens and the closing <eos>; the
/// prompt is conditioning only.
template <typename T>
Var<T> answer_loss(Binder<T>& bind, const LmConfig& config, const InstructionPrompt& prompt,
                   const MappedFeatures<T>& visual, const std::vector<int>& answer);

template <typename T>
Var<T> region_loss(Binder<T>& bind, const ModelConfig& config, const InstructionPrompt& prompt,
                   const RegionSample& sample, const std::vector<int>& answer);

template <typename T>
Var<T> caption_loss(Binder<T>& bind, const ModelConfig& config, const InstructionPrompt& prompt,
                    const CaptionSample& sample, const std::vector<int>& answer);

/// Greedy decoding after the spliced prompt.
std::vector<int> generate_for_region(const ParamStore<float>& params, const ModelConfig& config,
                                     const InstructionPrompt& prompt, const RegionSample& sample, std::size_t max_len);
std::vector<int> generate_for_image(const ParamStore<float>& params, const ModelConfig& config,
                                    const InstructionPrompt& prompt, const VisualInput& visual, std::size_t max_len);

// ---- harness ----------------------------------------------------------------

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainOptions {
    std::size_t threads = 1;
    std::string config_echo;  // stored in the checkpoint header
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepRecord> log;
};

/// Independent generator stream for a given purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Builds the vocabulary from every text the run will see, initialises the
/// model and, when config.lm_pretrain_steps > 0, pretrains the language
/// model. The LM is trained to decode an answer from word embeddings of
/// its own tokens placed in the visual slot; this is the stand-in for
/// loading pretrained LM weights and is what lets a frozen LM be steered by
/// visual tokens. Captions contribute vocabulary and pretraining text only.
TrainResult prepare_stage1(const TrainingConfig& config, ModelConfig model, const std::vector<RegionSample>& regions,
                           const std::vector<CaptionSample>& captions, const TrainOptions& options = {});

/// Region-level tuning: RIM and mapper train; encoder and LM stay frozen.
/// Throws NumericsError naming the step on a non-finite loss.
TrainResult train_stage1(const TrainingConfig& config, const std::vector<RegionSample>& regions,
                         const Checkpoint& initial, const TrainOptions& options = {});

/// Checks that a checkpoint can seed stage 2 for the given model dims.
void check_stage2_compatible(const Checkpoint& stage1, const ModelConfig& expected);

/// Image-level tuning from a stage-1 checkpoint: adapters are attached to
/// every LM linear layer; mapper (at v2l_lr) and adapters (at base_lr)
/// train, everything else is frozen and the RIM is never evaluated.
TrainResult train_stage2(const TrainingConfig& config, const std::vector<CaptionSample>& captions,
                         const Checkpoint& stage1, const TrainOptions& options = {});

/// Mean answer loss over a dataset with the fixed region template or the
/// given image template.
double mean_region_loss(const Checkpoint& checkpoint, const std::vector<RegionSample>& regions);
double mean_caption_loss(const Checkpoint& checkpoint, const std::vector<CaptionSample>& captions,
                         std::size_t template_index);

std::string training_log_csv(const std::vector<StepRecord>& log);

}  // namespace mgimm

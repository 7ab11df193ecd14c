#include "mgimm/train.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <thread>

#include "mgimm/layers.hpp"
#include "mgimm/log.hpp"

namespace mgimm {

PromptTemplates PromptTemplates::encode(const Vocab& vocab, const InstructionSet& set) {
    set.validate();
    PromptTemplates out;
    out.region = InstructionPrompt::from_text(vocab, set.region_text(), PromptMode::region);
    for (std::size_t i = 0; i < set.image_templates.size(); ++i) {
        out.image.push_back(InstructionPrompt::from_text(vocab, set.image_text(i), PromptMode::image));
    }
    return out;
}

std::vector<int> answer_targets(std::size_t prompt_len, const std::vector<int>& answer, int ignore_id) {
    if (prompt_len == 0) throw ValidationError("answer_targets: empty prompt");
    std::vector<int> targets(prompt_len - 1, ignore_id);
    targets.insert(targets.end(), answer.begin(), answer.end());
    targets.push_back(Vocab::kEos);
    return targets;
}

template <typename T>
MappedFeatures<T> region_features(Binder<T>& bind, const ModelConfig& config, const RegionSample& sample) {
    sample.bbox.validate();
    auto global = encode_visual(bind, config.encoder, sample.visual);
    const auto& freq = bind.store().value("rim.pe_freq");
    const auto image_pe = grid_positional_encoding(freq, global.rows, global.cols);
    auto box_tokens = encode_bbox(sample.bbox, freq, bind("rim.corner_embed"));
    auto rim = rim_forward(bind, config.rim, box_tokens, global.grid, image_pe);
    return {v2l_map(bind, rim.regional), PromptMode::region};
}

template <typename T>
MappedFeatures<T> image_features(Binder<T>& bind, const ModelConfig& config, const VisualInput& visual) {
    auto global = encode_visual(bind, config.encoder, visual);
    return {v2l_map(bind, global.grid), PromptMode::image};
}

template <typename T>
Var<T> answer_loss(Binder<T>& bind, const LmConfig& config, const InstructionPrompt& prompt,
                   const MappedFeatures<T>& visual, const std::vector<int>& answer) {
    auto embed = bind("lm.embed");
    auto prefix = build_prompt(prompt, visual, embed);
    auto sequence = answer.empty() ? prefix : concat_rows(std::vector<Var<T>>{prefix, embedding(embed, answer)});
    auto logits = lm_forward(bind, config, sequence);
    return cross_entropy(logits, answer_targets(prefix.rows(), answer));
}

template <typename T>
Var<T> region_loss(Binder<T>& bind, const ModelConfig& config, const InstructionPrompt& prompt,
                   const RegionSample& sample, const std::vector<int>& answer) {
    return answer_loss(bind, config.lm, prompt, region_features(bind, config, sample), answer);
}

template <typename T>
Var<T> caption_loss(Binder<T>& bind, const ModelConfig& config, const InstructionPrompt& prompt,
                    const CaptionSample& sample, const std::vector<int>& answer) {
    return answer_loss(bind, config.lm, prompt, image_features(bind, config, sample.visual), answer);
}

std::vector<int> generate_for_region(const ParamStore<float>& params, const ModelConfig& config,
                                     const InstructionPrompt& prompt, const RegionSample& sample, std::size_t max_len) {
    Tape<float> tape;
    Binder<float> bind(tape, params, false);
    auto prefix = build_prompt(prompt, region_features(bind, config, sample), bind("lm.embed"));
    return generate(params, config.lm, prefix.value(), max_len);
}

std::vector<int> generate_for_image(const ParamStore<float>& params, const ModelConfig& config,
                                    const InstructionPrompt& prompt, const VisualInput& visual, std::size_t max_len) {
    Tape<float> tape;
    Binder<float> bind(tape, params, false);
    auto prefix = build_prompt(prompt, image_features(bind, config, visual), bind("lm.embed"));
    return generate(params, config.lm, prefix.value(), max_len);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over (seed, stream)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kInit = 1, kPretrainOrder, kPretrainHints, kStage1Order, kStage2Order,
                              kStage2Templates, kLoraInit };

using SampleLoss = std::function<Var<float>(Binder<float>&, std::size_t slot)>;

struct BatchResult {
    double loss = 0.0;
    GradientMap<float> grads;
};

/// Mean loss and gradient over a batch. Samples may run on several threads;
/// the reduction always follows batch order, so the result does not depend
/// on the thread count.
BatchResult batch_gradient(const ParamStore<float>& params, std::size_t batch, std::size_t threads,
                           const SampleLoss& loss_fn) {
    std::vector<double> losses(batch);
    std::vector<GradientMap<float>> grads(batch);
    auto run = [&](std::size_t i) {
        Tape<float> tape;
        Binder<float> bind(tape, params);
        auto loss = loss_fn(bind, i);
        losses[i] = loss.value().item();
        grads[i] = tape.backward(loss);
    };
    if (threads <= 1 || batch <= 1) {
        for (std::size_t i = 0; i < batch; ++i) run(i);
    } else {
        std::vector<std::exception_ptr> errors(batch);
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(threads, batch);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < batch; i += workers) {
                    try {
                        run(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    BatchResult out;
    const float inv = 1.0f / static_cast<float>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        out.loss += losses[i];
        for (auto& [name, g] : grads[i]) {
            auto it = out.grads.find(name);
            if (it == out.grads.end()) {
                out.grads.emplace(name, std::move(g));
            } else {
                auto dst = it->second.data();
                const auto src = g.data();
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }
    for (auto& [name, g] : out.grads) {
        for (auto& v : g.data()) v *= inv;
    }
    out.loss /= static_cast<double>(batch);
    return out;
}

/// Draws batches from a reshuffled permutation of [0, n), one epoch at a time.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(std::min(batch, n)), rng_(seed) {}

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        while (out.size() < batch_) {
            if (pos_ == order_.size()) {
                order_.resize(n_);
                for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::size_t n_, batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

struct LoopSpec {
    std::size_t total_steps = 0;
    std::size_t warmup = 0;
    AdamHyper hyper;
    LrFn<float> lr_for;  // receives the schedule factor through `factor`
    const char* label = "train";
};

/// Shared optimisation loop: schedule, AdamW, NaN guard, logging.
std::vector<StepRecord> optimise(ParamStore<float>& params, const LoopSpec& spec, std::size_t threads,
                                 const std::function<std::vector<std::size_t>()>& next_batch,
                                 const std::function<SampleLoss(const std::vector<std::size_t>&)>& make_loss,
                                 const std::function<void(const StepRecord&)>& on_step, double& factor,
                                 double base_lr) {
    auto state = AdamState<float>::for_params(params);
    std::vector<StepRecord> log;
    for (std::size_t step = 0; step < spec.total_steps; ++step) {
        factor = cosine_lr(step, spec.total_steps, 1.0, spec.warmup);
        const auto batch = next_batch();
        auto result = batch_gradient(params, batch.size(), threads, make_loss(batch));
        if (!std::isfinite(result.loss)) {
            throw NumericsError(std::string(spec.label) + ": non-finite loss at step " + std::to_string(step));
        }
        adamw_update(params, result.grads, state, spec.hyper, spec.lr_for);
        StepRecord rec{step, base_lr * factor, result.loss};
        log.push_back(rec);
        if (on_step) on_step(rec);
        if (step % 100 == 0 || step + 1 == spec.total_steps) {
            log::debug(std::string(spec.label) + " step " + std::to_string(step) + " loss " +
                       std::to_string(result.loss));
        }
    }
    return log;
}

std::size_t visual_slots(const ModelConfig& config, const VisualInput& visual) {
    if (visual.features) return visual.grid_rows * visual.grid_cols;
    return config.encoder.num_patches();
}

}  // namespace

TrainResult prepare_stage1(const TrainingConfig& config, ModelConfig model, const std::vector<RegionSample>& regions,
                           const std::vector<CaptionSample>& captions, const TrainOptions& options) {
    config.validate();
    if (config.stage != 1) throw ValidationError("prepare_stage1 needs a stage-1 config");
    if (regions.empty()) throw ValidationError("stage 1 needs at least one region sample");

    const auto& set = InstructionSet::standard();
    std::vector<std::string> corpus{set.region_template};
    corpus.insert(corpus.end(), set.image_templates.begin(), set.image_templates.end());
    for (const auto& r : regions) corpus.push_back(r.attribute);
    for (const auto& c : captions) corpus.push_back(c.caption);

    Checkpoint ck;
    ck.stage = 1;
    ck.seed = config.seed;
    ck.config = options.config_echo;
    ck.vocab = Vocab::build(corpus);
    model.vocab_size = ck.vocab.size();
    model.validate();
    ck.model = model;
    ck.params = init_model<float>(model, derive_seed(config.seed, kInit));

    TrainResult result;
    if (config.lm_pretrain_steps == 0) {
        result.checkpoint = std::move(ck);
        return result;
    }

    struct Text {
        const VisualInput* visual;
        PromptMode mode;
        std::vector<int> answer;
    };
    std::vector<Text> texts;
    for (const auto& r : regions) texts.push_back({&r.visual, PromptMode::region, ck.vocab.encode(r.attribute)});
    for (const auto& c : captions) texts.push_back({&c.visual, PromptMode::image, ck.vocab.encode(c.caption)});
    const auto prompts = PromptTemplates::encode(ck.vocab);

    ck.params.set_all_trainable(false);
    ck.params.set_trainable(Section::lm, true);

    BatchSampler sampler(texts.size(), config.batch_size, derive_seed(config.seed, kPretrainOrder));
    Rng hint_rng(derive_seed(config.seed, kPretrainHints));
    LoopSpec spec;
    spec.total_steps = config.lm_pretrain_steps;
    spec.warmup = config.warmup(spec.total_steps);
    spec.hyper.weight_decay = config.weight_decay;
    spec.label = "lm-pretrain";
    double factor = 0.0;
    spec.lr_for = [&](const std::string&, const Parameter<float>&) { return config.lm_pretrain_lr * factor; };

    auto make_loss = [&](const std::vector<std::size_t>& batch) -> SampleLoss {
        // hints and templates are drawn up front so threads never touch the rngs
        struct Plan {
            std::vector<int> hints;
            const InstructionPrompt* prompt;
        };
        auto plans = std::make_shared<std::vector<Plan>>();
        for (auto i : batch) {
            const auto& t = texts[i];
            const auto slots = t.mode == PromptMode::region ? std::size_t{2} : visual_slots(model, *t.visual);
            Plan plan;
            for (std::size_t k = 0; k < slots; ++k) {
                plan.hints.push_back(t.answer[static_cast<std::size_t>(hint_rng.below(t.answer.size()))]);
            }
            plan.prompt = t.mode == PromptMode::region
                              ? &prompts.region
                              : &prompts.image[static_cast<std::size_t>(hint_rng.below(prompts.image.size()))];
            plans->push_back(std::move(plan));
        }
        return [&, plans, batch](Binder<float>& bind, std::size_t slot) {
            const auto& plan = (*plans)[slot];
            const auto& t = texts[batch[slot]];
            MappedFeatures<float> hints{embedding(bind("lm.embed"), plan.hints), t.mode};
            return answer_loss(bind, model.lm, *plan.prompt, hints, t.answer);
        };
    };
    result.log = optimise(ck.params, spec, options.threads, [&] { return sampler.next(); }, make_loss,
                          options.on_step, factor, config.lm_pretrain_lr);
    ck.params.set_all_trainable(true);
    result.checkpoint = std::move(ck);
    return result;
}

TrainResult train_stage1(const TrainingConfig& config, const std::vector<RegionSample>& regions,
                         const Checkpoint& initial, const TrainOptions& options) {
    config.validate();
    if (config.stage != 1) throw ValidationError("train_stage1 needs a stage-1 config");
    if (regions.empty()) throw ValidationError("stage 1 needs at least one region sample");
    for (const auto& r : regions) {
        const auto problems = validate_sample(r);
        if (!problems.empty()) throw ValidationError("region sample '" + r.image_id + "': " + problems.front());
    }

    TrainResult result;
    Checkpoint ck = initial;
    ck.stage = 1;
    ck.seed = config.seed;
    if (!options.config_echo.empty()) ck.config = options.config_echo;
    auto& params = ck.params;
    params.set_all_trainable(false);
    params.set_trainable(Section::rim, true);
    params.set_trainable(Section::v2l, true);

    const auto prompts = PromptTemplates::encode(ck.vocab);
    std::vector<std::vector<int>> answers;
    for (const auto& r : regions) answers.push_back(ck.vocab.encode(r.attribute));

    BatchSampler sampler(regions.size(), config.batch_size, derive_seed(config.seed, kStage1Order));
    LoopSpec spec;
    spec.total_steps = config.total_steps(regions.size());
    spec.warmup = config.warmup(spec.total_steps);
    spec.hyper.weight_decay = config.weight_decay;
    spec.label = "stage1";
    double factor = 0.0;
    spec.lr_for = [&](const std::string&, const Parameter<float>&) { return config.base_lr * factor; };
    auto make_loss = [&](const std::vector<std::size_t>& batch) -> SampleLoss {
        return [&, batch](Binder<float>& bind, std::size_t slot) {
            const auto i = batch[slot];
            return region_loss(bind, ck.model, prompts.region, regions[i], answers[i]);
        };
    };
    result.log = optimise(params, spec, options.threads, [&] { return sampler.next(); }, make_loss, options.on_step,
                          factor, config.base_lr);
    params.set_all_trainable(true);
    result.checkpoint = std::move(ck);
    return result;
}

void check_stage2_compatible(const Checkpoint& stage1, const ModelConfig& expected) {
    if (stage1.stage != 1) {
        throw ValidationError("stage 2 needs a stage-1 checkpoint, got stage " + std::to_string(stage1.stage));
    }
    const Shape want{expected.lm.d_lm, expected.encoder.d_v};
    if (!stage1.params.contains("v2l.fc1.weight")) {
        throw ValidationError("stage-1 checkpoint has no mapper weights");
    }
    const auto& got = stage1.params.value("v2l.fc1.weight").shape();
    if (got != want) {
        throw ValidationError("stage-1 mapper dims " + shape_str(got) + " do not match the configured model " +
                              shape_str(want));
    }
    const auto& m = stage1.model;
    if (m.encoder.image_size != expected.encoder.image_size || m.encoder.patch != expected.encoder.patch ||
        m.lm.num_layers != expected.lm.num_layers || m.lm.num_heads != expected.lm.num_heads ||
        m.lm.mlp_dim != expected.lm.mlp_dim || m.lm.max_seq_len != expected.lm.max_seq_len) {
        throw ValidationError("stage-1 checkpoint model dims differ from the configured model");
    }
}

TrainResult train_stage2(const TrainingConfig& config, const std::vector<CaptionSample>& captions,
                         const Checkpoint& stage1, const TrainOptions& options) {
    config.validate();
    if (config.stage != 2) throw ValidationError("train_stage2 needs a stage-2 config");
    if (captions.empty()) throw ValidationError("stage 2 needs at least one caption sample");
    check_stage2_compatible(stage1, stage1.model);
    for (const auto& c : captions) {
        const auto problems = validate_sample(c);
        if (!problems.empty()) throw ValidationError("caption sample '" + c.image_id + "': " + problems.front());
    }

    TrainResult result;
    Checkpoint ck = stage1;
    ck.stage = 2;
    ck.seed = config.seed;
    if (!options.config_echo.empty()) ck.config = options.config_echo;
    auto& params = ck.params;
    if (params.count(Section::lora) != 0) throw ValidationError("stage-1 checkpoint already carries adapters");
    Rng lora_rng(derive_seed(config.seed, kLoraInit));
    for (const auto& layer : lm_adaptable_layers(ck.model.lm)) {
        add_lora(params, layer, config.lora_r, config.lora_alpha, lora_rng);
    }
    params.set_all_trainable(false);
    params.set_trainable(Section::v2l, true);
    params.set_trainable(Section::lora, true);

    const auto prompts = PromptTemplates::encode(ck.vocab);
    std::vector<std::vector<int>> answers;
    for (const auto& c : captions) answers.push_back(ck.vocab.encode(c.caption));

    BatchSampler sampler(captions.size(), config.batch_size, derive_seed(config.seed, kStage2Order));
    Rng template_rng(derive_seed(config.seed, kStage2Templates));
    const auto& set = InstructionSet::standard();
    LoopSpec spec;
    spec.total_steps = config.total_steps(captions.size());
    spec.warmup = config.warmup(spec.total_steps);
    spec.hyper.weight_decay = config.weight_decay;
    spec.label = "stage2";
    double factor = 0.0;
    spec.lr_for = [&](const std::string&, const Parameter<float>& p) {
        return (p.section == Section::v2l ? config.v2l_lr : config.base_lr) * factor;
    };
    auto make_loss = [&](const std::vector<std::size_t>& batch) -> SampleLoss {
        std::vector<std::size_t> picks;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            picks.push_back(sample_instruction(template_rng, set, PromptMode::image).index);
        }
        return [&, batch, picks](Binder<float>& bind, std::size_t slot) {
            const auto i = batch[slot];
            return caption_loss(bind, ck.model, prompts.image[picks[slot]], captions[i], answers[i]);
        };
    };
    result.log = optimise(params, spec, options.threads, [&] { return sampler.next(); }, make_loss, options.on_step,
                          factor, config.base_lr);
    params.set_all_trainable(true);
    result.checkpoint = std::move(ck);
    return result;
}

double mean_region_loss(const Checkpoint& checkpoint, const std::vector<RegionSample>& regions) {
    if (regions.empty()) throw ValidationError("mean_region_loss: no samples");
    const auto prompts = PromptTemplates::encode(checkpoint.vocab);
    double total = 0.0;
    for (const auto& r : regions) {
        Tape<float> tape;
        Binder<float> bind(tape, checkpoint.params, false);
        total += region_loss(bind, checkpoint.model, prompts.region, r, checkpoint.vocab.encode(r.attribute))
                     .value()
                     .item();
    }
    return total / static_cast<double>(regions.size());
}

double mean_caption_loss(const Checkpoint& checkpoint, const std::vector<CaptionSample>& captions,
                         std::size_t template_index) {
    if (captions.empty()) throw ValidationError("mean_caption_loss: no samples");
    const auto prompts = PromptTemplates::encode(checkpoint.vocab);
    const auto& prompt = prompts.image.at(template_index);
    double total = 0.0;
    for (const auto& c : captions) {
        Tape<float> tape;
        Binder<float> bind(tape, checkpoint.params, false);
        total += caption_loss(bind, checkpoint.model, prompt, c, checkpoint.vocab.encode(c.caption)).value().item();
    }
    return total / static_cast<double>(captions.size());
}

std::string training_log_csv(const std::vector<StepRecord>& log) {
    std::ostringstream out;
    out.precision(9);
    out << "step,lr,loss\n";
    for (const auto& r : log) out << r.step << ',' << r.lr << ',' << r.loss << '\n';
    return out.str();
}

#define MGIMM_INSTANTIATE_TRAIN(T)                                                                               \
    template MappedFeatures<T> region_features(Binder<T>&, const ModelConfig&, const RegionSample&);             \
    template MappedFeatures<T> image_features(Binder<T>&, const ModelConfig&, const VisualInput&);               \
    template Var<T> answer_loss(Binder<T>&, const LmConfig&, const InstructionPrompt&, const MappedFeatures<T>&, \
                                const std::vector<int>&);                                                        \
    template Var<T> region_loss(Binder<T>&, const ModelConfig&, const InstructionPrompt&, const RegionSample&,   \
                                const std::vector<int>&);                                                        \
    template Var<T> caption_loss(Binder<T>&, const ModelConfig&, const InstructionPrompt&, const CaptionSample&, \
                                 const std::vector<int>&);

MGIMM_INSTANTIATE_TRAIN(float)
MGIMM_INSTANTIATE_TRAIN(double)

}  // namespace mgimm

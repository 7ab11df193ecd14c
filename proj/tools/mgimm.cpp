#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mgimm/checkpoint.hpp"
#include "mgimm/config.hpp"
#include "mgimm/error.hpp"
#include "mgimm/gradcheck.hpp"
#include "mgimm/log.hpp"
#include "mgimm/metrics.hpp"
#include "mgimm/synthetic.hpp"
#include "mgimm/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mgimm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Bad flag combination detected after parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

TrainOptions train_options(const RunConfig& cfg, std::size_t threads, const char* label) {
    TrainOptions opts;
    opts.threads = threads;
    opts.config_echo = cfg.source;
    opts.on_step = [label](const StepRecord& r) {
        if (r.step % 100 == 0) log::info(label, " step ", r.step, " lr ", r.lr, " loss ", r.loss);
    };
    return opts;
}

void report_run(const char* label, const RunConfig& cfg, const TrainResult& result, const std::string& ckpt) {
    std::printf("%s: seed %llu, %zu steps, final loss %.6f\n", label, static_cast<unsigned long long>(cfg.seed),
                result.log.size(), result.log.empty() ? 0.0 : result.log.back().loss);
    std::printf("checkpoint: %s\n", ckpt.c_str());
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    int stage = 1;
    std::string config;
    std::string from_stage1;
    std::size_t threads = 0;  // 0: take the config value
};

int cmd_train(const TrainArgs& a) {
    auto cfg = RunConfig::load(a.config);
    const std::size_t threads = a.threads > 0 ? a.threads : cfg.threads;
    if (a.stage == 1) {
        if (!a.from_stage1.empty()) throw UsageError("--from-stage1 only applies to --stage 2");
        if (cfg.regions_path.empty()) throw ValidationError("stage 1 needs data.regions in the config");
        const auto regions = load_region_samples(cfg.regions_path);
        std::vector<CaptionSample> captions;
        if (!cfg.captions_path.empty()) captions = load_caption_samples(cfg.captions_path);

        auto prep = prepare_stage1(cfg.stage1, cfg.model, regions, captions, train_options(cfg, threads, "pretrain"));
        auto result = train_stage1(cfg.stage1, regions, prep.checkpoint, train_options(cfg, threads, "stage 1"));

        fs::create_directories(cfg.output_dir);
        if (!prep.log.empty()) {
            write_file_atomic(join_path(cfg.output_dir, "lm_pretrain_log.csv"), training_log_csv(prep.log));
        }
        const auto ckpt = join_path(cfg.output_dir, "stage1.ckpt");
        save_checkpoint(ckpt, result.checkpoint);
        write_file_atomic(join_path(cfg.output_dir, "stage1_log.csv"), training_log_csv(result.log));
        report_run("stage 1", cfg, result, ckpt);
        return kExitOk;
    }

    if (a.from_stage1.empty()) throw UsageError("--stage 2 requires --from-stage1 PATH");
    if (cfg.captions_path.empty()) throw ValidationError("stage 2 needs data.captions in the config");
    const auto stage1 = load_checkpoint(a.from_stage1);
    check_stage2_compatible(stage1, cfg.model);
    const auto captions = load_caption_samples(cfg.captions_path);
    auto result = train_stage2(cfg.stage2, captions, stage1, train_options(cfg, threads, "stage 2"));

    const auto ckpt = join_path(cfg.output_dir, "stage2.ckpt");
    save_checkpoint(ckpt, result.checkpoint);
    write_file_atomic(join_path(cfg.output_dir, "stage2_log.csv"), training_log_csv(result.log));
    report_run("stage 2", cfg, result, ckpt);
    return kExitOk;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::size_t instruction_index = 0;
    std::string kind = "captions";
    std::size_t max_len = 64;
};

int cmd_generate(const GenerateArgs& a) {
    const auto ck = load_checkpoint(a.checkpoint);
    const auto prompts = PromptTemplates::encode(ck.vocab);
    std::ostringstream out;
    auto emit = [&](const std::string& id, const std::vector<int>& ids) {
        out << json{{"image_id", id}, {"caption", ck.vocab.decode(ids)}}.dump() << '\n';
    };
    std::size_t count = 0;
    if (a.kind == "regions") {
        for (const auto& s : load_region_samples(a.data)) {
            emit(s.image_id, generate_for_region(ck.params, ck.model, prompts.region, s, a.max_len));
            ++count;
        }
    } else {
        const auto& prompt = prompts.image.at(a.instruction_index);
        for (const auto& s : load_caption_samples(a.data)) {
            emit(s.image_id, generate_for_image(ck.params, ck.model, prompt, s.visual, a.max_len));
            ++count;
        }
    }
    write_file_atomic(a.out, out.str());
    std::printf("generate: checkpoint seed %llu, stage %d, %zu predictions -> %s\n",
                static_cast<unsigned long long>(ck.seed), ck.stage, count, a.out.c_str());
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

int cmd_evaluate(const std::string& pred, const std::string& ref, const std::string& out) {
    const auto report = evaluate_corpus(pred, ref);
    write_file_atomic(out, report.to_json() + "\n");
    std::printf("BLEU-4 %.4f  METEOR %.4f  ROUGE-L %.4f  CIDEr %.4f  (%zu candidates)\n", report.bleu4,
                report.meteor, report.rouge_l, report.cider, report.candidate_count);
    return kExitOk;
}

// ---- validate-data ----------------------------------------------------------

template <typename Sample>
int print_scan(const std::string& path, const ScanResult<Sample>& scan) {
    if (scan.samples.empty() && scan.issues.empty()) {
        log::warn(path, ": no records");
        return kExitOk;
    }
    for (const auto& issue : scan.issues) std::printf("%s:%zu: %s\n", path.c_str(), issue.line, issue.message.c_str());
    std::printf("%zu valid records, %zu issues\n", scan.samples.size(), scan.issues.size());
    return scan.issues.empty() ? kExitOk : kExitUsage;
}

int cmd_validate_data(const std::string& path, const std::string& kind) {
    if (kind == "regions") return print_scan(path, scan_region_file(path));
    return print_scan(path, scan_caption_file(path));
}

// ---- gradcheck --------------------------------------------------------------

constexpr double kGradTolerance = 1e-3;

int cmd_gradcheck(std::uint64_t seed, std::size_t instances) {
    GradCheckOptions opts;
    opts.seed = seed;
    opts.instances = instances;
    std::printf("gradcheck: seed %llu, %zu instances, float64 central differences (h = %g)\n",
                static_cast<unsigned long long>(seed), instances, opts.step);
    double worst = 0.0;
    for (const auto& r : run_gradcheck_suite(opts)) {
        std::printf("  %-18s max rel error %.3e  (%zu entries)\n", r.name.c_str(), r.max_rel_error, r.entries);
        worst = std::max(worst, r.max_rel_error);
    }
    const bool ok = worst < kGradTolerance;
    std::printf("overall max rel error %.3e: %s\n", worst, ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitRuntime;
}

// ---- synth-data -------------------------------------------------------------

int cmd_synth_data(const std::string& dir, std::uint64_t seed) {
    const auto data = make_synthetic_data(seed);
    fs::create_directories(dir);
    std::string regions, captions;
    for (const auto& s : data.regions) regions += region_record_json(s) + "\n";
    for (const auto& s : data.captions) captions += caption_record_json(s) + "\n";
    write_file_atomic(join_path(dir, "regions.jsonl"), regions);
    write_file_atomic(join_path(dir, "captions.jsonl"), captions);
    const json config = {{"preset", "toy"},
                         {"seed", seed},
                         {"output_dir", "runs"},
                         {"data", {{"regions", "regions.jsonl"}, {"captions", "captions.jsonl"}}}};
    write_file_atomic(join_path(dir, "config.json"), config.dump(2) + "\n");
    std::printf("synth-data: seed %llu, %zu regions, %zu captions -> %s\n", static_cast<unsigned long long>(seed),
                data.regions.size(), data.captions.size(), dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-aware multimodal instruction tuning at toy scale"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Run stage-1 or stage-2 tuning from a config file");
    train_cmd->add_option("--stage", train.stage, "Tuning stage")->required()->check(CLI::IsMember({1, 2}));
    train_cmd->add_option("--config", train.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--from-stage1", train.from_stage1, "Stage-1 checkpoint (stage 2 only)");
    train_cmd->add_option("--threads", train.threads, "Worker threads (overrides the config)")
        ->check(CLI::PositiveNumber);

    GenerateArgs gen;
    auto* gen_cmd = app.add_subcommand("generate", "Greedy decoding over a dataset");
    gen_cmd->add_option("--checkpoint", gen.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    gen_cmd->add_option("--data", gen.data, "JSON Lines samples")->required()->check(CLI::ExistingFile);
    gen_cmd->add_option("--out", gen.out, "Predictions (JSON Lines)")->required();
    gen_cmd->add_option("--instruction-index", gen.instruction_index, "Image instruction template, 0..14")
        ->check(CLI::Range(0, 14));
    gen_cmd->add_option("--kind", gen.kind, "Sample kind")->check(CLI::IsMember({"captions", "regions"}));
    gen_cmd->add_option("--max-len", gen.max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);

    std::string pred, ref, eval_out;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against references");
    eval_cmd->add_option("--pred", pred, "Predictions (JSON Lines)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--ref", ref, "References (JSON Lines)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", eval_out, "Metric report (JSON)")->required();

    std::string data_path, data_kind;
    auto* val_cmd = app.add_subcommand("validate-data", "Check a dataset file and list violations");
    val_cmd->add_option("--data", data_path, "JSON Lines samples")->required()->check(CLI::ExistingFile);
    val_cmd->add_option("--kind", data_kind, "Sample kind")->required()->check(CLI::IsMember({"regions", "captions"}));

    std::string gc_preset;
    std::uint64_t gc_seed = 0;
    std::size_t gc_instances = 20;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    gc_cmd->add_option("--preset", gc_preset, "Model preset")->required()->check(CLI::IsMember({"toy"}));
    gc_cmd->add_option("--seed", gc_seed, "Instance seed");
    gc_cmd->add_option("--instances", gc_instances, "Random instances per check")->check(CLI::PositiveNumber);

    std::string synth_dir;
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = app.add_subcommand("synth-data", "Write the synthetic toy corpus and a toy config");
    synth_cmd->add_option("--out", synth_dir, "Output directory")->required();
    synth_cmd->add_option("--seed", synth_seed, "Corpus seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(train);
        if (*gen_cmd) return cmd_generate(gen);
        if (*eval_cmd) return cmd_evaluate(pred, ref, eval_out);
        if (*val_cmd) return cmd_validate_data(data_path, data_kind);
        if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_instances);
        if (*synth_cmd) return cmd_synth_data(synth_dir, synth_seed);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

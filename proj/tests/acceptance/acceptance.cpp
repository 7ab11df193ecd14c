// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Criteria 4, 5 and 8 share the two end-to-end CLI runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgimm/checkpoint.hpp"
#include "mgimm/data.hpp"
#include "mgimm/gradcheck.hpp"
#include "mgimm/lora.hpp"
#include "mgimm/metrics.hpp"
#include "mgimm/rim.hpp"
#include "mgimm/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mgimm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---- shared end-to-end runs -------------------------------------------------

struct CliRun {
    bool ok = false;
    std::string failure;
    double stage1_seconds = 0.0;
    double stage2_seconds = 0.0;
    fs::path dir;  // stage1.ckpt, stage2.ckpt, logs, pred.jsonl, report.json
};

/// synth-data, train both stages, generate with template 0 and evaluate
/// against the training captions. Outputs are moved to `keep`.
CliRun cli_pipeline(const fs::path& work, const fs::path& keep) {
    CliRun run;
    run.dir = keep;
    const fs::path log = work / "cli.log";
    auto cli = [&](const std::string& args) {
        const std::string cmd = std::string(MGIMM_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        if (status != 0) run.failure = "`mgimm " + args + "` exited with status " + std::to_string(status);
        return status == 0;
    };
    const auto cfg = (work / "config.json").string();
    const auto runs = work / "runs";
    if (!cli("synth-data --out " + work.string() + " --seed 0")) return run;

    auto t0 = Clock::now();
    if (!cli("train --stage 1 --config " + cfg)) return run;
    run.stage1_seconds = seconds_since(t0);
    t0 = Clock::now();
    if (!cli("train --stage 2 --config " + cfg + " --from-stage1 " + (runs / "stage1.ckpt").string())) return run;
    run.stage2_seconds = seconds_since(t0);

    const auto captions = (work / "captions.jsonl").string();
    if (!cli("generate --checkpoint " + (runs / "stage2.ckpt").string() + " --data " + captions +
             " --instruction-index 0 --out " + (runs / "pred.jsonl").string()))
        return run;
    if (!cli("evaluate --pred " + (runs / "pred.jsonl").string() + " --ref " + captions + " --out " +
             (runs / "report.json").string()))
        return run;

    fs::remove_all(keep);
    fs::rename(runs, keep);
    run.ok = true;
    return run;
}

struct Shared {
    fs::path work;
    CliRun first;
    CliRun second;
};

// ---- criterion 1 ------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    const GradCheckOptions opts;  // 20 instances, float64, h = 1e-4
    const auto results = run_gradcheck_suite(opts);
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name;
    bool enough = true;
    bool composed = false;
    for (const auto& r : results) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
        enough = enough && r.instances >= 20;
        composed = composed || r.name == "stage1_loss";
    }
    const bool pass = worst < 1e-3 && enough && composed && elapsed < 120.0;
    return {pass, std::to_string(results.size()) + " checks x " + std::to_string(opts.instances) +
                      " instances, max rel error " + fmt("%.2e", worst) + " (" + worst_name + "), stage-1 graph " +
                      (composed ? "included" : "MISSING") + ", " + fmt("%.1f s", elapsed)};
}

// ---- criterion 2 ------------------------------------------------------------

struct SectionDiff {
    std::size_t same = 0;
    std::size_t changed = 0;
};

std::map<Section, SectionDiff> diff_sections(const ParamStore<float>& before, const ParamStore<float>& after) {
    std::map<Section, SectionDiff> out;
    for (const auto& name : before.names()) {
        if (!after.contains(name)) continue;
        const auto& p = before.at(name);
        auto& d = out[p.section];
        (p.value == after.value(name) ? d.same : d.changed) += 1;
    }
    return out;
}

Outcome freeze_contracts(const Shared& shared) {
    if (!shared.first.ok) return {false, "end-to-end run failed: " + shared.first.failure};
    const auto stage1 = load_checkpoint((shared.first.dir / "stage1.ckpt").string());
    const auto stage2 = load_checkpoint((shared.first.dir / "stage2.ckpt").string());

    // Rebuild the pre-stage-1 model with the run's own config and data.
    const auto cfg = RunConfig::load((shared.work / "config.json").string());
    const auto regions = load_region_samples(cfg.regions_path);
    const auto captions = load_caption_samples(cfg.captions_path);
    const auto initial = prepare_stage1(cfg.stage1, cfg.model, regions, captions).checkpoint;

    const auto d1 = diff_sections(initial.params, stage1.params);
    const auto d2 = diff_sections(stage1.params, stage2.params);
    auto get = [](const std::map<Section, SectionDiff>& d, Section s) {
        const auto it = d.find(s);
        return it == d.end() ? SectionDiff{} : it->second;
    };
    const bool s1_frozen = get(d1, Section::encoder).changed == 0 && get(d1, Section::lm).changed == 0 &&
                           get(d1, Section::encoder).same > 0 && get(d1, Section::lm).same > 0;
    const bool s1_trained = get(d1, Section::rim).changed > 0 && get(d1, Section::v2l).changed > 0;
    const bool s2_frozen = get(d2, Section::encoder).changed == 0 && get(d2, Section::lm).changed == 0 &&
                           get(d2, Section::rim).changed == 0;
    const bool s2_trained = get(d2, Section::v2l).changed > 0 && stage2.params.count(Section::lora) > 0;

    // Every caption under every template: the stage-2 graph never binds a rim.* leaf.
    const auto prompts = PromptTemplates::encode(stage2.vocab);
    std::size_t graphs = 0, rim_leaves = 0;
    bool encoder_bound = true;
    for (const auto& sample : captions) {
        for (const auto& prompt : prompts.image) {
            Tape<float> tape;
            Binder<float> bind(tape, stage2.params);
            caption_loss(bind, stage2.model, prompt, sample, stage2.vocab.encode(sample.caption));
            const auto leaves = tape.leaf_names();
            encoder_bound = encoder_bound && std::find(leaves.begin(), leaves.end(), "encoder.proj.weight") != leaves.end();
            rim_leaves += static_cast<std::size_t>(
                std::count_if(leaves.begin(), leaves.end(), [](const std::string& n) { return n.starts_with("rim."); }));
            ++graphs;
        }
    }
    const bool pass = s1_frozen && s1_trained && s2_frozen && s2_trained && rim_leaves == 0 && encoder_bound;
    return {pass, "stage 1: encoder " + std::to_string(get(d1, Section::encoder).changed) + " / lm " +
                      std::to_string(get(d1, Section::lm).changed) + " tensors changed, rim " +
                      std::to_string(get(d1, Section::rim).changed) + " / v2l " +
                      std::to_string(get(d1, Section::v2l).changed) + " moved; stage 2: encoder " +
                      std::to_string(get(d2, Section::encoder).changed) + " / lm (W0) " +
                      std::to_string(get(d2, Section::lm).changed) + " / rim " +
                      std::to_string(get(d2, Section::rim).changed) + " changed; rim leaves in " +
                      std::to_string(graphs) + " stage-2 graphs: " + std::to_string(rim_leaves)};
}

// ---- criterion 3 ------------------------------------------------------------

Outcome lora_identities(const Shared& shared) {
    Rng rng(3);
    auto layer = lora_init<float>(32, 32, 8, 16.0, rng);
    layer.bias = Tensor<float>::randn({32}, rng, 1.0f);
    bool bitwise = true;
    for (int i = 0; i < 100; ++i) {
        const auto x = Tensor<float>::randn({4, 32}, rng, 1.0f);
        bitwise = bitwise && lora_forward(x, layer) == base_forward(x, layer);
    }

    layer.b = Tensor<float>::randn(layer.b.shape(), rng, 0.1f);
    auto merged = layer;
    merged.weight = lora_merge(layer);
    merged.b = Tensor<float>::zeros(layer.b.shape());
    double merge_gap = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto x = Tensor<float>::randn({4, 32}, rng, 1.0f);
        merge_gap = std::max(merge_gap, max_abs_diff(base_forward(x, merged), lora_forward(x, layer)));
    }

    if (!shared.first.ok) return {false, "end-to-end run failed: " + shared.first.failure};
    const auto stage1 = load_checkpoint((shared.first.dir / "stage1.ckpt").string());
    const auto captions = load_caption_samples((shared.work / "captions.jsonl").string());
    std::map<std::size_t, double> mean_loss, last_loss;
    for (std::size_t r : {2u, 8u}) {
        auto cfg = TrainingConfig::preset("toy", 2);
        cfg.lora_r = r;
        cfg.lora_alpha = 2.0 * static_cast<double>(r);
        const auto result = train_stage2(cfg, captions, stage1);
        double m = 0.0;
        for (std::size_t t = 0; t < kImageTemplateCount; ++t) m += mean_caption_loss(result.checkpoint, captions, t);
        mean_loss[r] = m / static_cast<double>(kImageTemplateCount);
        last_loss[r] = result.log.back().loss;
    }
    const bool pass = bitwise && merge_gap <= 1e-5 && mean_loss[8] <= mean_loss[2];
    return {pass, std::string("B=0 bitwise on 100 inputs: ") + (bitwise ? "yes" : "NO") + ", merged gap " +
                      fmt("%.2e", merge_gap) + "; toy stage 2 (" +
                      std::to_string(TrainingConfig::preset("toy", 2).max_steps) +
                      " steps, alpha=2r) mean loss over 15 templates r=8 " + fmt("%.5f", mean_loss[8]) + " vs r=2 " +
                      fmt("%.5f", mean_loss[2]) + " (last step " + fmt("%.5f", last_loss[8]) + " vs " +
                      fmt("%.5f", last_loss[2]) + ")"};
}

// ---- criterion 4 ------------------------------------------------------------

std::vector<StepRecord> parse_log(const fs::path& path) {
    std::vector<StepRecord> out;
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        StepRecord r;
        char c1 = 0, c2 = 0;
        std::istringstream row(line);
        row >> r.step >> c1 >> r.lr >> c2 >> r.loss;
        out.push_back(r);
    }
    return out;
}

Outcome stage1_overfit(const Shared& shared) {
    if (!shared.first.ok) return {false, "end-to-end run failed: " + shared.first.failure};
    const auto log = parse_log(shared.first.dir / "stage1_log.csv");
    if (log.empty()) return {false, "empty stage-1 log"};
    const auto hit = std::find_if(log.begin(), log.end(), [](const StepRecord& r) { return r.loss < 0.1; });
    const auto stage1 = load_checkpoint((shared.first.dir / "stage1.ckpt").string());
    const auto regions = load_region_samples((shared.work / "regions.jsonl").string());
    const double final_mean = mean_region_loss(stage1, regions);
    const bool reached = hit != log.end() && hit->step < 3000;
    const bool pass = reached && final_mean < 0.1 && shared.first.stage1_seconds < 300.0;
    return {pass, std::to_string(regions.size()) + " pairs, loss < 0.1 first at step " +
                      (hit == log.end() ? std::string("never") : std::to_string(hit->step)) + " of " +
                      std::to_string(log.size()) + ", final mean loss " + fmt("%.5f", final_mean) +
                      ", wall time incl. LM pretraining " + fmt("%.1f s", shared.first.stage1_seconds)};
}

// ---- criterion 5 ------------------------------------------------------------

Outcome stage2_overfit(const Shared& shared) {
    if (!shared.first.ok) return {false, "end-to-end run failed: " + shared.first.failure};
    const auto captions = load_caption_samples((shared.work / "captions.jsonl").string());
    std::map<std::string, std::string> truth;
    for (const auto& c : captions) truth[c.image_id] = c.caption;
    std::size_t exact = 0;
    const auto preds = load_candidates((shared.first.dir / "pred.jsonl").string());
    for (const auto& [id, text] : preds) exact += truth.at(id) == text;
    const auto report = json::parse(read_text(shared.first.dir / "report.json"));
    const double bleu = report["scores"]["bleu4"].get<double>();
    const bool pass = preds.size() == captions.size() && exact >= 6 && bleu >= 90.0;
    return {pass, std::to_string(exact) + "/" + std::to_string(captions.size()) +
                      " captions reproduced exactly (template 0), self-evaluated BLEU-4 " + fmt("%.2f", bleu) +
                      ", stage-2 wall time " + fmt("%.1f s", shared.first.stage2_seconds)};
}

// ---- criterion 6 ------------------------------------------------------------

std::string data_path(const std::string& name) { return std::string(MGIMM_TEST_DATA_DIR) + "/" + name; }

Outcome metric_oracles() {
    const auto oracle = json::parse(read_text(data_path("metric_oracle.json")));
    const auto refs = load_references(data_path("mini_refs.jsonl"));
    std::vector<ScoredPair> corpus;
    std::size_t sentences = 0;
    for (const auto& [id, text] : load_candidates(data_path("mini_pred.jsonl"))) {
        ScoredPair p{metric_tokens(text), {}};
        for (const auto& r : refs.at(id)) p.references.push_back(metric_tokens(r));
        sentences += 1 + p.references.size();
        corpus.push_back(std::move(p));
    }
    double worst = std::abs(bleu4(corpus) - oracle["bleu4"].get<double>());
    auto compare = [&](const std::vector<double>& got, const json& want) {
        if (got.size() != want.size()) {
            worst = INFINITY;
            return;
        }
        for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i].get<double>()));
    };
    std::vector<double> sb, rl, mt;
    for (const auto& p : corpus) {
        sb.push_back(sentence_bleu4_smoothed(p));
        rl.push_back(rouge_l(p));
        mt.push_back(meteor_lite(p));
    }
    compare(sb, oracle["sample_bleu4"]);
    compare(rl, oracle["sample_rouge_l"]);
    compare(mt, oracle["sample_meteor"]);
    compare(cider_d(corpus), oracle["sample_cider"]);

    const CandidateList same{{"p", "a red roof on a large house"}, {"q", "two ships wait at the long dock"}};
    ReferenceMap same_refs;
    for (const auto& [id, text] : same) same_refs[id] = {text};
    const auto identical = evaluate(same, same_refs);
    const bool identical_ok = std::abs(identical.bleu4 - 100.0) < 1e-9 && std::abs(identical.rouge_l - 100.0) < 1e-9;

    const auto tokens = metric_tokens("a river runs under a narrow bridge");
    const double single = cider_d({ScoredPair{tokens, {tokens}}})[0];

    const bool pass = worst <= 1e-6 && identical_ok && single == 0.0;
    return {pass, std::to_string(sentences) + "-sentence corpus, max deviation from oracles " + fmt("%.2e", worst) +
                      "; identical text BLEU-4 " + fmt("%.4f", identical.bleu4) + " ROUGE-L " +
                      fmt("%.4f", identical.rouge_l) + "; single-image CIDEr " + fmt("%g", single)};
}

// ---- criterion 7 ------------------------------------------------------------

Tensor<double> plain_layer_norm(const Tensor<double>& x) {
    Tensor<double> y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) mu += x(r, c);
        mu /= static_cast<double>(x.cols());
        for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
        var /= static_cast<double>(x.cols());
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5);
    }
    return y;
}

Tensor<double> loop_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> c({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
    return c;
}

Outcome rim_properties() {
    const auto cfg = RimConfig::toy();
    ParamStore<float> store;
    Rng init(77);
    add_rim_params(store, cfg, init, 5);
    auto run = [&](const ParamStore<float>& s, Tape<float>& tape, const BBox& box, const Tensor<float>& img,
                   const Tensor<float>& pe, RimTrace<float>* trace) {
        Binder<float> bind(tape, s, false);
        auto tokens = encode_bbox(box, s.value("rim.pe_freq"), bind("rim.corner_embed"));
        return rim_forward(bind, cfg, tokens, tape.constant(img), pe, trace);
    };
    Rng rng(7);
    const BBox box{208, 442, 393, 153, 800, 800};

    double drift = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto img = Tensor<float>::randn({16, 32}, rng, 1.0f);
        const auto pe = Tensor<float>::randn({16, 32}, rng, 1.0f);
        std::vector<std::size_t> perm(16);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tape<float> tape;
        const auto a = run(store, tape, box, img, pe, nullptr);
        const auto b = run(store, tape, box, permute_rows(img, perm), permute_rows(pe, perm), nullptr);
        drift = std::max(drift, max_abs_diff(a.regional.value(), b.regional.value()));
        drift = std::max(drift, max_abs_diff(permute_rows(a.image.value(), perm), b.image.value()));
    }

    // One key: softmax weight 1, so both box rows read LN(img) W_v W_o.
    const auto one = Tensor<float>::randn({1, 32}, rng, 1.0f);
    RimTrace<float> trace;
    {
        Tape<float> tape;
        run(store, tape, box, one, Tensor<float>::randn({1, 32}, rng, 1.0f), &trace);
    }
    const auto expected = loop_matmul(loop_matmul(plain_layer_norm(one.cast<double>()),
                                                  store.value("rim.layers.0.cross_t2i.wv").cast<double>()),
                                      store.value("rim.layers.0.cross_t2i.wo").cast<double>());
    double single_gap = 0.0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 32; ++c)
            single_gap = std::max(single_gap, std::abs(static_cast<double>(trace.box_to_image[0](r, c)) - expected(0, c)));

    auto zeroed = store;
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string p = "rim.layers." + std::to_string(i);
        for (const char* name : {".self_attn.wo", ".cross_t2i.wo", ".cross_i2t.wo", ".mlp.fc2.weight", ".mlp.fc2.bias"}) {
            auto& v = zeroed.at(p + name).value;
            v = Tensor<float>::zeros(v.shape());
        }
    }
    const auto img = Tensor<float>::randn({9, 32}, rng, 1.0f);
    const auto pe = grid_positional_encoding(store.value("rim.pe_freq"), 3, 3);
    bool identity = false;
    {
        Tape<float> tape;
        const auto out = run(zeroed, tape, box, img, pe, nullptr);
        Binder<float> bind(tape, zeroed, false);
        const auto tokens = encode_bbox(box, zeroed.value("rim.pe_freq"), bind("rim.corner_embed")).value();
        identity = out.regional.value() == tokens && out.image.value() == img;
    }

    double gap = 0.0;
    {
        Tape<float> tape;
        const auto a = run(store, tape, box, img, pe, nullptr);
        const auto b = run(store, tape, BBox{40, 60, 120, 90, 800, 800}, img, pe, nullptr);
        gap = max_abs_diff(a.regional.value(), b.regional.value());
    }

    const bool pass = drift <= 1e-5 && single_gap <= 1e-5 && identity && gap > 1e-6;
    return {pass, "permutation drift " + fmt("%.2e", drift) + " over 20 trials, single-key gap " +
                      fmt("%.2e", single_gap) + ", zero-weight identity " + (identity ? "exact" : "BROKEN") +
                      ", bbox sensitivity " + fmt("%.3e", gap)};
}

// ---- criterion 8 ------------------------------------------------------------

Outcome determinism(const Shared& shared) {
    if (!shared.first.ok || !shared.second.ok) {
        return {false, "end-to-end run failed: " + shared.first.failure + shared.second.failure};
    }
    std::string detail;
    bool pass = true;
    for (const char* file : {"stage1.ckpt", "stage2.ckpt", "report.json", "pred.jsonl"}) {
        const auto a = read_text(shared.first.dir / file);
        const auto b = read_text(shared.second.dir / file);
        const bool same = !a.empty() && a == b;
        pass = pass && same;
        detail += std::string(detail.empty() ? "" : ", ") + file + (same ? " identical" : " DIFFERS") + " (" +
                  std::to_string(a.size()) + " B)";
    }
    return {pass, "two CLI runs, seed 0: " + detail};
}

// ---- criterion 9 ------------------------------------------------------------

Outcome instruction_machinery() {
    const std::vector<std::string> table{
        "Describe the following remote sensing image in detail.",
        "Provide a detailed description of the given remote sensing image.",
        "Elaborate on the remote sensing image you see.",
        "Share a comprehensive overview of the presented remote sensing image.",
        "Conduct a thorough analysis of the remote sensing image.",
        "Explain the various aspects of the remote sensing image before you.",
        "Clarify the contents of the displayed remote sensing image with great detail.",
        "Characterize the remote sensing image using a detailed description.",
        "Break down the elements of the remote sensing image in detail.",
        "Walk through the important details of the remote sensing image.",
        "Portray the remote sensing image with a rich, descriptive narrative.",
        "Narrate the contents of the remote sensing image with precision.",
        "Analyze the remote sensing image in a comprehensive and detailed manner.",
        "Illustrate the remote sensing image through a descriptive explanation.",
        "Write an exhaustive depiction of the given remote sensing image.",
    };
    const auto& set = InstructionSet::standard();
    set.validate();
    const bool templates = set.image_templates == table;

    Rng rng(2024);
    std::vector<int> counts(kImageTemplateCount, 0);
    for (int i = 0; i < 15000; ++i) ++counts.at(sample_instruction(rng, set, PromptMode::image).index);
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());

    Rng region_rng(11), untouched(11);
    bool fixed = true;
    for (int i = 0; i < 1000; ++i) fixed = fixed && sample_instruction(region_rng, set, PromptMode::region).text == set.region_text();
    fixed = fixed && region_rng.next_u64() == untouched.next_u64();

    const bool pass = templates && *lo >= 800 && *hi <= 1200 && fixed;
    return {pass, std::to_string(set.image_templates.size()) + " templates " + (templates ? "match" : "DIFFER") +
                      ", 15000 draws give counts in [" + std::to_string(*lo) + ", " + std::to_string(*hi) +
                      "], region mode " + (fixed ? "fixed" : "VARIES")};
}

}  // namespace

int main() {
    Shared shared;
    shared.work = fs::temp_directory_path() / "mgimm_acceptance";
    fs::remove_all(shared.work);
    fs::create_directories(shared.work);
    std::printf("workdir %s\n", shared.work.string().c_str());
    std::fflush(stdout);

    const auto t0 = Clock::now();
    shared.first = cli_pipeline(shared.work, shared.work / "run1");
    shared.second = cli_pipeline(shared.work, shared.work / "run2");
    std::printf("two end-to-end CLI runs finished in %.1f s\n", seconds_since(t0));

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"freeze contracts", [&] { return freeze_contracts(shared); }},
        {"LoRA identities", [&] { return lora_identities(shared); }},
        {"stage-1 overfit", [&] { return stage1_overfit(shared); }},
        {"stage-2 overfit", [&] { return stage2_overfit(shared); }},
        {"metric oracle equivalence", metric_oracles},
        {"RIM structural properties", rim_properties},
        {"determinism", [&] { return determinism(shared); }},
        {"instruction machinery", instruction_machinery},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s  criterion %zu: %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed, total %.1f s\n", failed, criteria.size(), seconds_since(t0));
    return failed == 0 ? 0 : 1;
}

#include "mgimm/config.hpp"

#include <filesystem>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mgimm/error.hpp"

namespace mgimm {

using json = nlohmann::json;

namespace {

/// Collects every problem of a document instead of stopping at the first.
class Reader {
public:
    std::vector<std::string> errors;

    void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
        for (const auto& [key, value] : obj.items()) {
            if (allowed.count(key) == 0) errors.push_back("unknown key '" + join(where, key) + "'");
        }
    }

    const json* object(const json& parent, const std::string& where, const char* key) {
        auto it = parent.find(key);
        if (it == parent.end()) return nullptr;
        if (!it->is_object()) {
            errors.push_back("'" + join(where, key) + "' must be an object");
            return nullptr;
        }
        return &*it;
    }

    void count(const json& obj, const std::string& where, const char* key, std::size_t& out) {
        auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number_unsigned()) {
            errors.push_back("'" + join(where, key) + "' must be a non-negative integer");
            return;
        }
        out = it->get<std::size_t>();
    }

    void count(const json& obj, const std::string& where, const char* key, std::optional<std::size_t>& out) {
        std::size_t v = 0;
        const auto before = errors.size();
        if (obj.contains(key)) {
            count(obj, where, key, v);
            if (errors.size() == before) out = v;
        }
    }

    void u64(const json& obj, const std::string& where, const char* key, std::uint64_t& out) {
        auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number_unsigned()) {
            errors.push_back("'" + join(where, key) + "' must be a non-negative integer");
            return;
        }
        out = it->get<std::uint64_t>();
    }

    void number(const json& obj, const std::string& where, const char* key, double& out) {
        auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number()) {
            errors.push_back("'" + join(where, key) + "' must be a number");
            return;
        }
        out = it->get<double>();
    }

    void string(const json& obj, const std::string& where, const char* key, std::string& out) {
        auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_string()) {
            errors.push_back("'" + join(where, key) + "' must be a string");
            return;
        }
        out = it->get<std::string>();
    }

    void capture(const std::string& prefix, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const ValidationError& e) {
            errors.push_back(prefix + e.what());
        }
    }

private:
    static std::string join(const std::string& where, const std::string& key) {
        return where.empty() ? key : where + "." + key;
    }
};

const std::set<std::string> kTopKeys{"preset", "seed", "output_dir", "threads", "max_generate_len",
                                     "data",   "model", "stage1",    "stage2"};
const std::set<std::string> kDataKeys{"regions", "captions"};
const std::set<std::string> kModelKeys{"encoder", "rim", "lm", "pe_seed"};
const std::set<std::string> kEncoderKeys{"image_size", "patch", "channels", "d_v"};
const std::set<std::string> kRimKeys{"d_model", "num_layers", "d_attn", "num_heads", "mlp_dim"};
const std::set<std::string> kLmKeys{"d_lm", "num_layers", "num_heads", "mlp_dim", "max_seq_len"};
const std::set<std::string> kStage1Keys{"batch_size",   "epochs",       "max_steps",         "base_lr",
                                        "warmup_steps", "weight_decay", "lm_pretrain_steps", "lm_pretrain_lr"};
const std::set<std::string> kStage2Keys{"batch_size", "epochs",     "max_steps",    "base_lr",     "v2l_lr",
                                        "lora_r",     "lora_alpha", "warmup_steps", "weight_decay"};

void read_model(Reader& r, const json& obj, ModelConfig& m) {
    r.check_keys(obj, "model", kModelKeys);
    if (const auto* e = r.object(obj, "model", "encoder")) {
        r.check_keys(*e, "model.encoder", kEncoderKeys);
        r.count(*e, "model.encoder", "image_size", m.encoder.image_size);
        r.count(*e, "model.encoder", "patch", m.encoder.patch);
        r.count(*e, "model.encoder", "channels", m.encoder.channels);
        r.count(*e, "model.encoder", "d_v", m.encoder.d_v);
    }
    if (const auto* e = r.object(obj, "model", "rim")) {
        r.check_keys(*e, "model.rim", kRimKeys);
        r.count(*e, "model.rim", "d_model", m.rim.d_model);
        r.count(*e, "model.rim", "num_layers", m.rim.num_layers);
        r.count(*e, "model.rim", "d_attn", m.rim.d_attn);
        r.count(*e, "model.rim", "num_heads", m.rim.num_heads);
        r.count(*e, "model.rim", "mlp_dim", m.rim.mlp_dim);
    }
    if (const auto* e = r.object(obj, "model", "lm")) {
        r.check_keys(*e, "model.lm", kLmKeys);
        r.count(*e, "model.lm", "d_lm", m.lm.d_lm);
        r.count(*e, "model.lm", "num_layers", m.lm.num_layers);
        r.count(*e, "model.lm", "num_heads", m.lm.num_heads);
        r.count(*e, "model.lm", "mlp_dim", m.lm.mlp_dim);
        r.count(*e, "model.lm", "max_seq_len", m.lm.max_seq_len);
    }
    r.u64(obj, "model", "pe_seed", m.pe_seed);
}

void read_stage(Reader& r, const json& obj, const std::string& where, TrainingConfig& t) {
    r.check_keys(obj, where, t.stage == 1 ? kStage1Keys : kStage2Keys);
    r.count(obj, where, "batch_size", t.batch_size);
    r.count(obj, where, "epochs", t.epochs);
    r.count(obj, where, "max_steps", t.max_steps);
    r.number(obj, where, "base_lr", t.base_lr);
    r.count(obj, where, "warmup_steps", t.warmup_steps);
    r.number(obj, where, "weight_decay", t.weight_decay);
    if (t.stage == 1) {
        r.count(obj, where, "lm_pretrain_steps", t.lm_pretrain_steps);
        r.number(obj, where, "lm_pretrain_lr", t.lm_pretrain_lr);
    } else {
        r.number(obj, where, "v2l_lr", t.v2l_lr);
        r.count(obj, where, "lora_r", t.lora_r);
        r.number(obj, where, "lora_alpha", t.lora_alpha);
    }
}

json model_json(const ModelConfig& m) {
    return {{"encoder",
             {{"image_size", m.encoder.image_size},
              {"patch", m.encoder.patch},
              {"channels", m.encoder.channels},
              {"d_v", m.encoder.d_v}}},
            {"rim",
             {{"d_model", m.rim.d_model},
              {"num_layers", m.rim.num_layers},
              {"d_attn", m.rim.d_attn},
              {"num_heads", m.rim.num_heads},
              {"mlp_dim", m.rim.mlp_dim}}},
            {"lm",
             {{"d_lm", m.lm.d_lm},
              {"num_layers", m.lm.num_layers},
              {"num_heads", m.lm.num_heads},
              {"mlp_dim", m.lm.mlp_dim},
              {"max_seq_len", m.lm.max_seq_len}}},
            {"pe_seed", m.pe_seed}};
}

json stage_json(const TrainingConfig& t) {
    json out = {{"batch_size", t.batch_size}, {"epochs", t.epochs},         {"max_steps", t.max_steps},
                {"base_lr", t.base_lr},       {"weight_decay", t.weight_decay}};
    if (t.warmup_steps) out["warmup_steps"] = *t.warmup_steps;
    if (t.stage == 1) {
        out["lm_pretrain_steps"] = t.lm_pretrain_steps;
        out["lm_pretrain_lr"] = t.lm_pretrain_lr;
    } else {
        out["v2l_lr"] = t.v2l_lr;
        out["lora_r"] = t.lora_r;
        out["lora_alpha"] = t.lora_alpha;
    }
    return out;
}

std::string resolve(const std::string& path, const std::string& base_dir) {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    return p.lexically_normal().string();
}

}  // namespace

TrainingConfig TrainingConfig::preset(const std::string& name, int stage) {
    TrainingConfig t;
    t.stage = stage;
    if (name == "toy") {
        if (stage == 1) {
            t.batch_size = 16;
            t.epochs = 0;
            t.max_steps = 800;
            t.base_lr = 3e-3;
            t.lm_pretrain_steps = 800;
            t.lm_pretrain_lr = 3e-3;
        } else {
            t.batch_size = 8;
            t.epochs = 0;
            t.max_steps = 400;
            t.base_lr = 3e-3;
            t.v2l_lr = 3e-3;
            t.lora_r = 8;
            t.lora_alpha = 16.0;
        }
    } else if (name == "paper") {
        if (stage == 1) {
            t.batch_size = 256;  // 4 devices x 64
            t.epochs = 10;
            t.base_lr = 1e-4;
        } else {
            t.batch_size = 16;  // 4 devices x 4
            t.epochs = 5;
            t.base_lr = 2e-5;
            t.v2l_lr = 2e-6;
            t.lora_r = 128;
            t.lora_alpha = 256.0;
        }
    } else {
        throw ValidationError("unknown preset '" + name + "' (expected toy or paper)");
    }
    return t;
}

std::size_t TrainingConfig::total_steps(std::size_t dataset_size) const {
    if (max_steps > 0) return max_steps;
    const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
    return epochs * per_epoch;
}

std::size_t TrainingConfig::warmup(std::size_t total) const {
    if (warmup_steps) return *warmup_steps;
    return static_cast<std::size_t>(0.03 * static_cast<double>(total));
}

void TrainingConfig::validate() const {
    std::vector<std::string> errors;
    if (stage != 1 && stage != 2) errors.push_back("stage must be 1 or 2");
    if (batch_size == 0) errors.emplace_back("batch_size must be positive");
    if (epochs == 0 && max_steps == 0) errors.emplace_back("one of epochs or max_steps must be positive");
    if (!(base_lr > 0.0)) errors.emplace_back("base_lr must be positive");
    if (weight_decay < 0.0) errors.emplace_back("weight_decay must be non-negative");
    if (stage == 2) {
        if (!(v2l_lr > 0.0)) errors.emplace_back("v2l_lr must be positive");
        if (lora_r == 0) errors.emplace_back("lora_r must be positive");
        if (!(lora_alpha > 0.0)) errors.emplace_back("lora_alpha must be positive");
    }
    if (stage == 1 && lm_pretrain_steps > 0 && !(lm_pretrain_lr > 0.0)) {
        errors.emplace_back("lm_pretrain_lr must be positive");
    }
    if (!errors.empty()) {
        std::string msg = "stage " + std::to_string(stage) + " config:";
        for (const auto& e : errors) msg += " " + e + ";";
        throw ValidationError(msg);
    }
}

RunConfig RunConfig::defaults(const std::string& preset) {
    RunConfig c;
    c.preset = preset;
    if (preset == "toy") {
        c.model = ModelConfig::toy();
    } else if (preset == "paper") {
        c.model = ModelConfig::paper();
    } else {
        throw ValidationError("unknown preset '" + preset + "' (expected toy or paper)");
    }
    c.stage1 = TrainingConfig::preset(preset, 1);
    c.stage2 = TrainingConfig::preset(preset, 2);
    return c;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");

    Reader r;
    r.check_keys(doc, "", kTopKeys);
    std::string preset = "toy";
    r.string(doc, "", "preset", preset);
    RunConfig c;
    try {
        c = defaults(preset);
    } catch (const ValidationError& e) {
        r.errors.emplace_back(e.what());
        c = defaults("toy");
    }
    r.u64(doc, "", "seed", c.seed);
    r.string(doc, "", "output_dir", c.output_dir);
    r.count(doc, "", "threads", c.threads);
    r.count(doc, "", "max_generate_len", c.max_generate_len);
    if (const auto* d = r.object(doc, "", "data")) {
        r.check_keys(*d, "data", kDataKeys);
        r.string(*d, "data", "regions", c.regions_path);
        r.string(*d, "data", "captions", c.captions_path);
    }
    if (const auto* m = r.object(doc, "", "model")) read_model(r, *m, c.model);
    if (const auto* s = r.object(doc, "", "stage1")) read_stage(r, *s, "stage1", c.stage1);
    if (const auto* s = r.object(doc, "", "stage2")) read_stage(r, *s, "stage2", c.stage2);

    c.stage1.seed = c.seed;
    c.stage2.seed = c.seed;
    if (c.threads == 0) r.errors.emplace_back("threads must be at least 1");
    r.capture("stage1: ", [&] { c.stage1.validate(); });
    r.capture("stage2: ", [&] { c.stage2.validate(); });
    r.capture("model: ", [&] {
        c.model.encoder.validate();
        c.model.rim.validate();
        c.model.lm.validate();
        if (c.model.rim.d_model != c.model.encoder.d_v) {
            throw ValidationError("rim.d_model must equal encoder.d_v");
        }
    });
    if (!r.errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : r.errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }

    c.regions_path = resolve(c.regions_path, base_dir);
    c.captions_path = resolve(c.captions_path, base_dir);
    c.output_dir = resolve(c.output_dir, base_dir);

    // output_dir is left out so that runs differing only in destination
    // produce identical checkpoints
    json echo = {{"preset", c.preset},
                 {"seed", c.seed},
                 {"threads", c.threads},
                 {"max_generate_len", c.max_generate_len},
                 {"data", {{"regions", c.regions_path}, {"captions", c.captions_path}}},
                 {"model", model_json(c.model)},
                 {"stage1", stage_json(c.stage1)},
                 {"stage2", stage_json(c.stage2)}};
    c.source = echo.dump();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    auto base = std::filesystem::path(path).parent_path().string();
    return parse(buf.str(), base.empty() ? "." : base);
}

std::string model_config_json(const ModelConfig& config) {
    json out = model_json(config);
    out["vocab_size"] = config.vocab_size;
    return out.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("model config is not valid JSON: ") + e.what());
    }
    Reader r;
    ModelConfig m;
    json rest = doc;
    rest.erase("vocab_size");
    read_model(r, rest, m);
    r.count(doc, "", "vocab_size", m.vocab_size);
    if (!r.errors.empty()) throw ValidationError("model config: " + r.errors.front());
    m.validate();
    return m;
}

}  // namespace mgimm

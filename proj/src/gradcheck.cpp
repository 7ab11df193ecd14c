#include "mgimm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mgimm/attention.hpp"
#include "mgimm/layers.hpp"
#include "mgimm/lora.hpp"
#include "mgimm/train.hpp"

namespace mgimm {

namespace {
// Below kGradFloor * max(1, |loss|) a gradient is compared in absolute
// terms; central differences carry noise proportional to the loss value.
constexpr double kGradFloor = 1e-6;
}  // namespace

double check_graph(ParamStore<double>& params, const ScalarGraph& graph, Rng& rng, const GradCheckOptions& options,
                   std::size_t* entries) {
    GradientMap<double> analytic;
    double floor = kGradFloor;
    {
        Tape<double> tape;
        Binder<double> bind(tape, params);
        auto loss = graph(bind);
        floor *= std::max(1.0, std::abs(loss.value().item()));
        analytic = tape.backward(loss);
    }
    auto evaluate = [&] {
        Tape<double> tape;
        Binder<double> bind(tape, params, false);
        return graph(bind).value().item();
    };

    double worst = 0.0;
    for (const auto& [name, grad] : analytic) {
        auto& value = params.value(name);
        // the largest analytic entry keeps the norm meaningful; the rest are random
        std::vector<std::size_t> picks;
        std::size_t arg = 0;
        for (std::size_t i = 1; i < grad.size(); ++i) {
            if (std::abs(grad[i]) > std::abs(grad[arg])) arg = i;
        }
        picks.push_back(arg);
        while (picks.size() < std::min(options.entries_per_tensor, grad.size())) {
            picks.push_back(static_cast<std::size_t>(rng.below(grad.size())));
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (auto i : picks) {
            const double saved = value[i];
            value[i] = saved + options.step;
            const double up = evaluate();
            value[i] = saved - options.step;
            const double down = evaluate();
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            diff2 += (grad[i] - numeric) * (grad[i] - numeric);
            a2 += grad[i] * grad[i];
            n2 += numeric * numeric;
        }
        if (entries) *entries += picks.size();
        const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
        worst = std::max(worst, rel);
    }
    return worst;
}

namespace {

struct Case {
    ParamStore<double> params;
    ScalarGraph graph;
};

using CaseFactory = std::function<Case(Rng&)>;

Tensor<double> randn(Shape shape, Rng& rng, double stddev = 1.0) {
    return Tensor<double>::randn(std::move(shape), rng, stddev);
}

/// Scalar read-out sum(out * R) with a fixed random R, so every output
/// coordinate contributes with a distinct weight.
ScalarGraph weighted(std::function<Var<double>(Binder<double>&)> body, Shape out_shape, Rng& rng) {
    auto weights = randn(std::move(out_shape), rng);
    return [body = std::move(body), weights](Binder<double>& bind) {
        auto out = body(bind);
        if (out.shape() != weights.shape()) {
            throw ShapeError("gradcheck: read-out shape " + shape_str(weights.shape()) + " does not match output " +
                             shape_str(out.shape()));
        }
        return sum(mul(out, bind.tape().constant(weights)));
    };
}

Case unary(Rng& rng, Shape shape, Shape out, std::function<Var<double>(Var<double>)> op) {
    Case c;
    c.params.add("x", randn(shape, rng), Section::lm);
    c.graph = weighted([op](Binder<double>& b) { return op(b("x")); }, std::move(out), rng);
    return c;
}

Case binary(Rng& rng, Shape sa, Shape sb, Shape out, std::function<Var<double>(Var<double>, Var<double>)> op) {
    Case c;
    c.params.add("a", randn(sa, rng), Section::lm);
    c.params.add("b", randn(sb, rng), Section::lm);
    c.graph = weighted([op](Binder<double>& b) { return op(b("a"), b("b")); }, std::move(out), rng);
    return c;
}

std::vector<std::pair<std::string, CaseFactory>> op_cases() {
    std::vector<std::pair<std::string, CaseFactory>> cases;
    cases.emplace_back("add", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](Var<double> a, Var<double> b) { return add(a, b); }); });
    cases.emplace_back("sub", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](Var<double> a, Var<double> b) { return sub(a, b); }); });
    cases.emplace_back("mul", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](Var<double> a, Var<double> b) { return mul(a, b); }); });
    cases.emplace_back("scale", [](Rng& r) {
        return unary(r, {3, 4}, {3, 4}, [](Var<double> x) { return scale(x, -1.7); });
    });
    cases.emplace_back("add_row", [](Rng& r) { return binary(r, {3, 4}, {4}, {3, 4}, [](Var<double> a, Var<double> b) { return add_row(a, b); }); });
    cases.emplace_back("matmul", [](Rng& r) { return binary(r, {3, 5}, {5, 4}, {3, 4}, [](Var<double> a, Var<double> b) { return matmul(a, b); }); });
    cases.emplace_back("matmul_nt", [](Rng& r) { return binary(r, {3, 5}, {4, 5}, {3, 4}, [](Var<double> a, Var<double> b) { return matmul_nt(a, b); }); });
    cases.emplace_back("transpose", [](Rng& r) { return unary(r, {3, 5}, {5, 3}, [](Var<double> x) { return transpose(x); }); });
    cases.emplace_back("linear", [](Rng& r) {
        Case c;
        c.params.add("x", randn({3, 5}, r), Section::lm);
        c.params.add("w", randn({4, 5}, r), Section::lm);
        c.params.add("b", randn({4}, r), Section::lm);
        c.graph = weighted([](Binder<double>& b) { return linear(b("x"), b("w"), b("b")); }, {3, 4}, r);
        return c;
    });
    cases.emplace_back("sum", [](Rng& r) { return unary(r, {3, 4}, {1}, [](Var<double> x) { return sum(x); }); });
    cases.emplace_back("mean", [](Rng& r) { return unary(r, {3, 4}, {1}, [](Var<double> x) { return mean(x); }); });
    cases.emplace_back("concat_rows", [](Rng& r) {
        return binary(r, {2, 4}, {3, 4}, {7, 4}, [](Var<double> a, Var<double> b) {
            return concat_rows(std::vector<Var<double>>{a, b, a});
        });
    });
    cases.emplace_back("slice_rows", [](Rng& r) {
        return unary(r, {5, 3}, {2, 3}, [](Var<double> x) { return slice_rows(x, 2, 2); });
    });
    cases.emplace_back("concat_cols", [](Rng& r) {
        return binary(r, {3, 2}, {3, 4}, {3, 6}, [](Var<double> a, Var<double> b) {
            return concat_cols(std::vector<Var<double>>{a, b});
        });
    });
    cases.emplace_back("slice_cols", [](Rng& r) {
        return unary(r, {3, 6}, {3, 3}, [](Var<double> x) { return slice_cols(x, 1, 3); });
    });
    cases.emplace_back("embedding", [](Rng& r) {
        std::vector<int> ids{1, 4, 1, 0};
        return unary(r, {6, 4}, {4, 4}, [ids](Var<double> t) { return embedding(t, ids); });
    });
    cases.emplace_back("layer_norm", [](Rng& r) {
        Case c;
        c.params.add("x", randn({3, 6}, r), Section::lm);
        c.params.add("g", randn({6}, r), Section::lm);
        c.params.add("b", randn({6}, r), Section::lm);
        c.graph = weighted([](Binder<double>& b) { return layer_norm(b("x"), b("g"), b("b")); }, {3, 6}, r);
        return c;
    });
    cases.emplace_back("gelu", [](Rng& r) { return unary(r, {3, 5}, {3, 5}, [](Var<double> x) { return gelu(x); }); });
    cases.emplace_back("softmax", [](Rng& r) {
        return unary(r, {3, 5}, {3, 5}, [](Var<double> x) { return softmax(x); });
    });
    cases.emplace_back("softmax_causal", [](Rng& r) {
        return unary(r, {4, 4}, {4, 4}, [](Var<double> x) { return softmax(x, true); });
    });
    cases.emplace_back("cross_entropy", [](Rng& r) {
        Case c;
        c.params.add("x", randn({5, 7}, r), Section::lm);
        std::vector<int> targets{3, -1, 0, 6, -1};
        c.graph = [targets](Binder<double>& b) { return cross_entropy(b("x"), targets); };
        return c;
    });
    cases.emplace_back("attention", [](Rng& r) {
        Case c;
        c.params.add("q", randn({3, 8}, r), Section::rim);
        c.params.add("kv", randn({5, 8}, r), Section::rim);
        add_attention_params(c.params, "attn", 8, 8, Section::rim, r);
        c.graph = weighted(
            [](Binder<double>& b) { return multi_head_attention(b("q"), b("kv"), bind_attention(b, "attn", 2)); },
            {3, 8}, r);
        return c;
    });
    cases.emplace_back("attention_causal", [](Rng& r) {
        Case c;
        c.params.add("q", randn({4, 8}, r), Section::lm);
        c.params.add("k", randn({4, 8}, r), Section::lm);
        c.params.add("v", randn({4, 8}, r), Section::lm);
        c.graph = weighted(
            [](Binder<double>& b) { return scaled_dot_product_attention(b("q"), b("k"), b("v"), 2, true); }, {4, 8},
            r);
        return c;
    });
    cases.emplace_back("lora_linear", [](Rng& r) {
        Case c;
        c.params.add("x", randn({3, 6}, r), Section::lm);
        add_linear(c.params, "layer", 6, 5, Section::lm, r);
        add_lora(c.params, "layer", 2, 4.0, r);
        // a zero B leaves the adapter path untested
        c.params.value("layer.lora.B") = randn({5, 2}, r, 0.5);
        c.graph = weighted([](Binder<double>& b) { return apply_lora_linear(b, "layer", b("x")); }, {3, 5}, r);
        return c;
    });
    return cases;
}

ModelConfig gradcheck_model() {
    ModelConfig m = ModelConfig::toy();
    m.vocab_size = 30;
    return m;
}

std::vector<int> random_ids(Rng& rng, std::size_t n, int vocab) {
    std::vector<int> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(Vocab::kReservedCount + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab) -
                                                                         Vocab::kReservedCount)));
    }
    return out;
}

Image random_image(Rng& rng, const EncoderConfig& enc) {
    Image im{enc.image_size, enc.image_size, enc.channels, {}};
    for (std::size_t i = 0; i < enc.image_size * enc.image_size * enc.channels; ++i) {
        im.pixels.push_back(static_cast<float>(rng.uniform()));
    }
    return im;
}

BBox random_box(Rng& rng) {
    const double x = rng.uniform(0.0, 500.0), y = rng.uniform(0.0, 500.0);
    return {x, y, rng.uniform(20.0, 250.0), rng.uniform(20.0, 250.0), 800.0, 800.0};
}

InstructionPrompt random_prompt(Rng& rng, PromptMode mode, int vocab) {
    std::vector<int> ids{Vocab::kBos, mode == PromptMode::region ? Vocab::kRegion : Vocab::kImage};
    for (int id : random_ids(rng, 4, vocab)) ids.push_back(id);
    return InstructionPrompt::from_ids(std::move(ids), mode);
}

std::vector<std::pair<std::string, CaseFactory>> module_cases() {
    std::vector<std::pair<std::string, CaseFactory>> cases;
    const auto model = gradcheck_model();

    cases.emplace_back("encoder", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        auto image = random_image(r, model.encoder);
        c.graph = weighted(
            [model, image](Binder<double>& b) { return encode_image(b, model.encoder, image).grid; },
            {model.encoder.num_patches(), model.encoder.d_v}, r);
        return c;
    });
    cases.emplace_back("bbox_encoding", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        auto box = random_box(r);
        c.graph = weighted(
            [box](Binder<double>& b) {
                return encode_bbox(box, b.store().value("rim.pe_freq"), b("rim.corner_embed"));
            },
            {2, model.rim.d_model}, r);
        return c;
    });
    cases.emplace_back("rim", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        c.params.add("box_tokens", randn({2, model.rim.d_model}, r), Section::rim);
        c.params.add("image_tokens", randn({6, model.rim.d_model}, r), Section::rim);
        const auto pe = grid_positional_encoding(c.params.value("rim.pe_freq"), 2, 3);
        auto read_box = randn({2, model.rim.d_model}, r);
        auto read_img = randn({6, model.rim.d_model}, r);
        c.graph = [model, pe, read_box, read_img](Binder<double>& b) {
            auto out = rim_forward(b, model.rim, b("box_tokens"), b("image_tokens"), pe);
            return add(sum(mul(out.regional, b.tape().constant(read_box))),
                       sum(mul(out.image, b.tape().constant(read_img))));
        };
        return c;
    });
    cases.emplace_back("v2l_map", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        c.params.add("features", randn({3, model.encoder.d_v}, r), Section::v2l);
        c.graph = weighted([](Binder<double>& b) { return v2l_map(b, b("features")); }, {3, model.lm.d_lm}, r);
        return c;
    });
    cases.emplace_back("lm_forward", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        c.params.add("sequence", randn({5, model.lm.d_lm}, r), Section::lm);
        c.graph = weighted([model](Binder<double>& b) { return lm_forward(b, model.lm, b("sequence")); },
                           {5, model.vocab_size}, r);
        return c;
    });
    cases.emplace_back("stage1_loss", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        RegionSample sample;
        sample.image_id = "gradcheck";
        sample.bbox = random_box(r);
        sample.attribute = "x";
        sample.visual.image = random_image(r, model.encoder);
        const auto prompt = random_prompt(r, PromptMode::region, static_cast<int>(model.vocab_size));
        const auto answer = random_ids(r, 4, static_cast<int>(model.vocab_size));
        c.graph = [model, sample, prompt, answer](Binder<double>& b) {
            return region_loss(b, model, prompt, sample, answer);
        };
        return c;
    });
    cases.emplace_back("stage2_loss", [model](Rng& r) {
        Case c;
        c.params = init_model<double>(model, r.next_u64());
        for (const auto& layer : lm_adaptable_layers(model.lm)) {
            add_lora(c.params, layer, 2, 4.0, r);
            c.params.value(layer + ".lora.B") = randn(c.params.value(layer + ".lora.B").shape(), r, 0.1);
        }
        CaptionSample sample;
        sample.image_id = "gradcheck";
        sample.image_w = sample.image_h = 800.0;
        sample.caption = "x";
        sample.visual.image = random_image(r, model.encoder);
        const auto prompt = random_prompt(r, PromptMode::image, static_cast<int>(model.vocab_size));
        const auto answer = random_ids(r, 4, static_cast<int>(model.vocab_size));
        c.graph = [model, sample, prompt, answer](Binder<double>& b) {
            return caption_loss(b, model, prompt, sample, answer);
        };
        return c;
    });
    return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
    auto cases = op_cases();
    for (auto& c : module_cases()) cases.push_back(std::move(c));

    std::vector<GradCheckResult> results;
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const auto& [name, factory] = cases[k];
        GradCheckResult res;
        res.name = name;
        Rng rng(options.seed * 1000003ULL + k);
        for (std::size_t i = 0; i < options.instances; ++i) {
            auto c = factory(rng);
            c.params.set_all_trainable(true);
            res.max_rel_error =
                std::max(res.max_rel_error, check_graph(c.params, c.graph, rng, options, &res.entries));
            ++res.instances;
        }
        results.push_back(res);
    }
    return results;
}

}  // namespace mgimm

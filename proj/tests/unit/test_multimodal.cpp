#include <doctest.h>

#include <cmath>

#include "mgimm/multimodal.hpp"
#include "test_util.hpp"

using namespace mgimm;

namespace {

Image random_image(std::size_t size, std::size_t channels, Rng& rng) {
    Image img{size, size, channels, std::vector<float>(size * size * channels)};
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

ModelConfig toy_config(std::size_t vocab_size = 40) {
    auto cfg = ModelConfig::toy();
    cfg.vocab_size = vocab_size;
    return cfg;
}

/// <bos> plus nine word ids with the placeholder at index 4: ten tokens.
std::vector<int> ten_token_prompt(int placeholder) {
    return {Vocab::kBos, 10, 11, 12, placeholder, 13, 14, 15, 16, 17};
}

}  // namespace

TEST_SUITE("multimodal") {

TEST_CASE("full-scale encoder geometry gives 576 patches") {
    const auto cfg = EncoderConfig::paper();
    CHECK(cfg.num_patches() == 576);
    Rng rng(1);
    const auto patches = image_to_patches(random_image(336, 3, rng), cfg);
    CHECK(patches.shape() == Shape{576, 14 * 14 * 3});
}

TEST_CASE("patches are cut row-major with HWC flattening") {
    EncoderConfig cfg{4, 2, 1, 8};
    Image img{4, 4, 1, {}};
    for (int i = 0; i < 16; ++i) img.pixels.push_back(static_cast<float>(i));
    const auto p = image_to_patches(img, cfg);
    CHECK(p == Tensor<float>({4, 4}, {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
}

TEST_CASE("toy encoder output shape and determinism") {
    const auto cfg = toy_config();
    const auto store = init_model<float>(cfg, 3);
    Rng rng(2);
    const auto img = random_image(32, 3, rng);
    Tape<float> tape;
    Binder<float> bind(tape, store, false);
    const auto a = encode_image(bind, cfg.encoder, img);
    const auto b = encode_image(bind, cfg.encoder, img);
    CHECK(a.grid.shape() == Shape{16, 32});
    CHECK(a.rows == 4);
    CHECK(a.cols == 4);
    CHECK(a.grid.value() == b.grid.value());
    for (float v : a.grid.value().data()) CHECK(std::isfinite(v));
}

TEST_CASE("non-divisible image sizes are rejected") {
    CHECK_THROWS_AS((EncoderConfig{30, 8, 3, 32}.validate()), ValidationError);
    Rng rng(4);
    CHECK_THROWS_AS(image_to_patches(random_image(30, 3, rng), EncoderConfig{30, 8, 3, 32}), ValidationError);
    CHECK_THROWS_AS(image_to_patches(random_image(24, 3, rng), EncoderConfig::toy()), ValidationError);
}

TEST_CASE("mapper with zero weights outputs zeros and preserves the row count") {
    const auto cfg = toy_config();
    auto store = init_model<double>(cfg, 5);
    Rng rng(6);
    const auto x = Tensor<double>::randn({2, 32}, rng, 1.0);
    {
        Tape<double> tape;
        Binder<double> bind(tape, store, false);
        CHECK(v2l_map(bind, tape.constant(x)).shape() == Shape{2, cfg.lm.d_lm});
    }
    for (const char* name : {"v2l.fc1.weight", "v2l.fc1.bias", "v2l.fc2.weight", "v2l.fc2.bias"}) {
        store.value(name) = Tensor<double>::zeros(store.value(name).shape());
    }
    Tape<double> tape;
    Binder<double> bind(tape, store, false);
    for (double v : v2l_map(bind, tape.constant(x)).value().data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(v2l_map(bind, tape.constant(Tensor<double>::randn({2, 31}, rng, 1.0))), ShapeError);
}

TEST_CASE("placeholder splicing lengths") {
    Rng rng(7);
    Tape<double> tape;
    auto table = tape.constant(Tensor<double>::randn({20, 8}, rng, 1.0));
    const auto region = InstructionPrompt::from_ids(ten_token_prompt(Vocab::kRegion), PromptMode::region);
    CHECK(region.placeholder_index == 4);
    const MappedFeatures<double> two{tape.constant(Tensor<double>::randn({2, 8}, rng, 1.0)), PromptMode::region};
    CHECK(build_prompt(region, two, table).rows() == 11);

    const auto image = InstructionPrompt::from_ids(ten_token_prompt(Vocab::kImage), PromptMode::image);
    const MappedFeatures<double> many{tape.constant(Tensor<double>::randn({576, 8}, rng, 1.0)), PromptMode::image};
    CHECK(build_prompt(image, many, table).rows() == 585);
}

TEST_CASE("placeholder errors") {
    CHECK_THROWS_AS(InstructionPrompt::from_ids({Vocab::kBos, 10, 11}, PromptMode::image), ValidationError);
    CHECK_THROWS_AS(InstructionPrompt::from_ids({Vocab::kBos, Vocab::kImage, 10, Vocab::kImage}, PromptMode::image),
                    ValidationError);
    CHECK_THROWS_AS(InstructionPrompt::from_ids({Vocab::kBos, Vocab::kRegion, 10}, PromptMode::image), ValidationError);

    Rng rng(8);
    Tape<double> tape;
    auto table = tape.constant(Tensor<double>::randn({20, 8}, rng, 1.0));
    const auto region = InstructionPrompt::from_ids(ten_token_prompt(Vocab::kRegion), PromptMode::region);
    const MappedFeatures<double> image_feats{tape.constant(Tensor<double>::randn({3, 8}, rng, 1.0)), PromptMode::image};
    CHECK_THROWS_AS(build_prompt(region, image_feats, table), ValidationError);
    const MappedFeatures<double> narrow{tape.constant(Tensor<double>::randn({2, 7}, rng, 1.0)), PromptMode::region};
    CHECK_THROWS_AS(build_prompt(region, narrow, table), ShapeError);
}

TEST_CASE("splicing preserves every non-placeholder embedding exactly") {
    Rng rng(9);
    Tape<double> tape;
    const auto table_value = Tensor<double>::randn({20, 8}, rng, 1.0);
    auto table = tape.constant(table_value);
    const auto ids = ten_token_prompt(Vocab::kRegion);
    const auto prompt = InstructionPrompt::from_ids(ids, PromptMode::region);
    const auto feats = Tensor<double>::randn({2, 8}, rng, 1.0);
    const auto seq = build_prompt(prompt, MappedFeatures<double>{tape.constant(feats), PromptMode::region}, table).value();
    std::size_t out_row = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i == prompt.placeholder_index) {
            for (std::size_t k = 0; k < 2; ++k, ++out_row) {
                for (std::size_t c = 0; c < 8; ++c) CHECK(seq(out_row, c) == feats(k, c));
            }
            continue;
        }
        for (std::size_t c = 0; c < 8; ++c) CHECK(seq(out_row, c) == table_value(static_cast<std::size_t>(ids[i]), c));
        ++out_row;
    }
    CHECK(out_row == seq.rows());
}

TEST_CASE("language model is causal and emits [T, V] logits") {
    const auto cfg = toy_config(40);
    const auto store = init_model<double>(cfg, 10);
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t len = 3 + rng.below(8);
        auto seq = Tensor<double>::randn({len, cfg.lm.d_lm}, rng, 1.0);
        Tape<double> tape;
        Binder<double> bind(tape, store, false);
        const auto a = lm_forward(bind, cfg.lm, tape.constant(seq)).value();
        CHECK(a.shape() == Shape{len, 40});
        const std::size_t t = rng.below(len - 1);
        for (std::size_t c = 0; c < cfg.lm.d_lm; ++c) seq(t + 1, c) += rng.normal();
        const auto b = lm_forward(bind, cfg.lm, tape.constant(seq)).value();
        for (std::size_t r = 0; r <= t; ++r) {
            for (std::size_t c = 0; c < 40; ++c) REQUIRE(a(r, c) == b(r, c));
        }
        CHECK(max_abs_diff(a, b) > 0.0);
    }
}

TEST_CASE("language model rejects bad sequences") {
    const auto cfg = toy_config();
    const auto store = init_model<double>(cfg, 12);
    Tape<double> tape;
    Binder<double> bind(tape, store, false);
    CHECK_THROWS_AS(lm_forward(bind, cfg.lm, tape.constant(Tensor<double>::zeros({3, 31}))), ShapeError);
    CHECK_THROWS_AS(lm_forward(bind, cfg.lm, tape.constant(Tensor<double>::zeros({cfg.lm.max_seq_len + 1, 32}))),
                    ShapeError);
}

TEST_CASE("greedy generation is deterministic and honours max_len") {
    const auto cfg = toy_config();
    const auto store = init_model<float>(cfg, 13);
    Rng rng(14);
    const auto prefix = Tensor<float>::randn({5, cfg.lm.d_lm}, rng, 1.0f);
    CHECK(generate(store, cfg.lm, prefix, 0).empty());
    const auto a = generate(store, cfg.lm, prefix, 12);
    const auto b = generate(store, cfg.lm, prefix, 12);
    CHECK(a == b);
    CHECK(a.size() <= 12);
    for (int id : a) CHECK(id != Vocab::kEos);
}

TEST_CASE("adaptable layers cover attention and MLP projections") {
    const auto layers = lm_adaptable_layers(LmConfig::toy());
    CHECK(layers.size() == 12);
    const auto store = init_model<float>(toy_config(), 15);
    for (const auto& l : layers) CHECK(store.contains(l + ".weight"));
}

TEST_CASE("tokenizer round trip on corpus sentences") {
    const std::vector<std::string> sentences{
        "A  bridge crosses the river, linking two roads.",
        "Several ships are docked at the harbor (near the terminal).",
        "The <region> is a white airplane; it is parked!",
        "Is there a storage tank? Yes: three.",
    };
    std::vector<std::string> words;
    for (const auto& s : sentences) {
        const auto toks = tokenize(s);
        CHECK(detokenize(toks) == normalize_text(s));
        words.insert(words.end(), toks.begin(), toks.end());
    }
    const auto vocab = Vocab::build(words);
    for (const auto& s : sentences) {
        const auto ids = vocab.encode(s);
        for (int id : ids) CHECK(id != Vocab::kUnk);
        CHECK(vocab.decode(ids) == normalize_text(s));
    }
    CHECK(tokenize("The <region> here.") == std::vector<std::string>{"the", "<region>", "here", "."});
}

TEST_CASE("vocabulary ids are stable across save and load") {
    const auto vocab = Vocab::build({"river", "bridge", "a", "river"});
    const auto& reserved = Vocab::reserved_tokens();
    REQUIRE(reserved.size() == 6);
    CHECK(vocab.id("<pad>") == Vocab::kPad);
    CHECK(vocab.id("<unk>") == Vocab::kUnk);
    CHECK(vocab.id("<bos>") == Vocab::kBos);
    CHECK(vocab.id("<eos>") == Vocab::kEos);
    CHECK(vocab.id("<region>") == Vocab::kRegion);
    CHECK(vocab.id("<image>") == Vocab::kImage);
    CHECK(vocab.size() == 9);
    CHECK(vocab.id("zebra") == Vocab::kUnk);

    test::TempDir dir("vocab");
    vocab.save(dir.file("vocab.txt"));
    const auto back = Vocab::load(dir.file("vocab.txt"));
    CHECK(back.tokens() == vocab.tokens());
    CHECK(back.hash() == vocab.hash());
    CHECK(Vocab::parse(vocab.serialize()).tokens() == vocab.tokens());
    CHECK(vocab.hash() != Vocab::build({"river"}).hash());
    CHECK(vocab.decode({Vocab::kBos, vocab.id("a"), vocab.id("river"), Vocab::kEos, vocab.id("bridge")}) == "a river");
}

}  // TEST_SUITE

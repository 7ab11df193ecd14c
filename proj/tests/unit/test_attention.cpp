#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mgimm/attention.hpp"
#include "test_util.hpp"

using namespace mgimm;
using mgimm::test::naive_matmul;
using mgimm::test::randn;

namespace {

struct Weights {
    Tensor<double> wq, wk, wv, wo;
};

Weights random_weights(std::size_t d_model, std::size_t d_attn, Rng& rng) {
    return {randn({d_model, d_attn}, rng, 0.4), randn({d_model, d_attn}, rng, 0.4), randn({d_model, d_attn}, rng, 0.4),
            randn({d_attn, d_model}, rng, 0.4)};
}

AttentionParams<double> on_tape(Tape<double>& tape, const Weights& w, std::size_t heads) {
    return {tape.constant(w.wq), tape.constant(w.wk), tape.constant(w.wv), tape.constant(w.wo), heads};
}

/// Unvectorised reference: explicit loops per head, query and key.
Tensor<double> loop_attention(const Tensor<double>& q_in, const Tensor<double>& kv_in, const Weights& w,
                              std::size_t heads) {
    const auto q = naive_matmul(q_in, w.wq), k = naive_matmul(kv_in, w.wk), v = naive_matmul(kv_in, w.wv);
    const std::size_t d_attn = w.wq.cols(), dh = d_attn / heads;
    Tensor<double> concat({q_in.rows(), d_attn});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.rows(); ++i) {
            std::vector<double> scores(k.rows());
            for (std::size_t j = 0; j < k.rows(); ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
                scores[j] = s / std::sqrt(static_cast<double>(dh));
            }
            const double mx = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (auto& s : scores) z += (s = std::exp(s - mx));
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k.rows(); ++j) acc += scores[j] / z * v(j, h * dh + c);
                concat(i, h * dh + c) = acc;
            }
        }
    }
    return naive_matmul(concat, w.wo);
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("matches the per-head loop oracle") {
    Rng rng(31);
    const auto w = random_weights(8, 12, rng);
    const auto q_in = randn({3, 8}, rng), kv_in = randn({5, 8}, rng);
    Tape<double> tape;
    const auto got = multi_head_attention(tape.constant(q_in), tape.constant(kv_in), on_tape(tape, w, 3)).value();
    CHECK(max_abs_diff(got, loop_attention(q_in, kv_in, w, 3)) < 1e-6);
}

TEST_CASE("a single key yields its projected value for every query") {
    Rng rng(32);
    const auto w = random_weights(6, 8, rng);
    const auto q_in = randn({4, 6}, rng), kv_in = randn({1, 6}, rng);
    Tape<double> tape;
    const auto got = multi_head_attention(tape.constant(q_in), tape.constant(kv_in), on_tape(tape, w, 2)).value();
    const auto expected = naive_matmul(naive_matmul(kv_in, w.wv), w.wo);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(got(i, c) - expected(0, c)) < 1e-12);
    }
}

TEST_CASE("permuting keys and values leaves the output unchanged") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_weights(8, 8, rng);
        const auto q_in = randn({3, 8}, rng), kv_in = randn({6, 8}, rng);
        std::vector<std::size_t> perm(6);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tape<float> tape;
        auto params = AttentionParams<float>{tape.constant(w.wq.cast<float>()), tape.constant(w.wk.cast<float>()),
                                             tape.constant(w.wv.cast<float>()), tape.constant(w.wo.cast<float>()), 2};
        const auto a = multi_head_attention(tape.constant(q_in.cast<float>()), tape.constant(kv_in.cast<float>()), params);
        const auto b = multi_head_attention(tape.constant(q_in.cast<float>()),
                                            tape.constant(permute_rows(kv_in, perm).cast<float>()), params);
        CHECK(max_abs_diff(a.value(), b.value()) <= 1e-5);
    }
}

TEST_CASE("scaling queries by c and keys by 1/c leaves the output unchanged") {
    Rng rng(34);
    const auto q = randn({3, 8}, rng), k = randn({5, 8}, rng), v = randn({5, 8}, rng);
    auto scaled = [](Tensor<double> t, double c) {
        for (auto& x : t.data()) x *= c;
        return t;
    };
    Tape<double> tape;
    const auto base = scaled_dot_product_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2).value();
    const auto moved = scaled_dot_product_attention(tape.constant(scaled(q, 4.0)), tape.constant(scaled(k, 0.25)),
                                                    tape.constant(v), 2)
                           .value();
    CHECK(max_abs_diff(base, moved) < 1e-12);
}

TEST_CASE("self-attention is the call with kv equal to the queries") {
    Rng rng(35);
    const auto w = random_weights(8, 8, rng);
    const auto x = randn({4, 8}, rng);
    Tape<double> tape;
    auto p = on_tape(tape, w, 4);
    auto xv = tape.constant(x);
    CHECK(multi_head_attention(xv, xv, p).value() == attention(xv, xv, xv, p).value());
    CHECK(max_abs_diff(multi_head_attention(xv, xv, p).value(), loop_attention(x, x, w, 4)) < 1e-9);
}

TEST_CASE("causal attention ignores later keys") {
    Rng rng(36);
    auto q = randn({5, 8}, rng), k = randn({5, 8}, rng), v = randn({5, 8}, rng);
    Tape<double> tape;
    const auto a = scaled_dot_product_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, true).value();
    for (std::size_t c = 0; c < 8; ++c) {
        k(4, c) += 3.0;
        v(4, c) -= 2.0;
    }
    const auto b = scaled_dot_product_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, true).value();
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 8; ++c) CHECK(a(i, c) == b(i, c));
    }
    CHECK(max_abs_diff(a, b) > 1e-3);
}

TEST_CASE("shape errors") {
    Rng rng(37);
    Tape<double> tape;
    const auto w = random_weights(8, 8, rng);
    auto p = on_tape(tape, w, 2);
    CHECK_THROWS_AS(multi_head_attention(tape.constant(randn({2, 7}, rng)), tape.constant(randn({3, 8}, rng)), p),
                    ShapeError);
    auto bad_heads = on_tape(tape, w, 3);
    CHECK_THROWS_AS(bad_heads.validate(), ShapeError);
    AttentionParams<double> bad_o{tape.constant(w.wq), tape.constant(w.wk), tape.constant(w.wv),
                                  tape.constant(randn({4, 8}, rng)), 2};
    CHECK_THROWS_AS(bad_o.validate(), ShapeError);
    AttentionParams<double> wrong{tape.constant(w.wq), tape.constant(randn({8, 4}, rng)), tape.constant(w.wv),
                                  tape.constant(w.wo), 2};
    CHECK_THROWS_AS(wrong.validate(), ShapeError);
}

TEST_CASE("store registration uses the documented names and shapes") {
    Rng rng(38);
    ParamStore<float> store;
    add_attention_params(store, "blk", 16, 8, Section::rim, rng);
    CHECK(store.value("blk.wq").shape() == Shape{16, 8});
    CHECK(store.value("blk.wk").shape() == Shape{16, 8});
    CHECK(store.value("blk.wv").shape() == Shape{16, 8});
    CHECK(store.value("blk.wo").shape() == Shape{8, 16});
    CHECK(store.size() == 4);
}

}  // TEST_SUITE

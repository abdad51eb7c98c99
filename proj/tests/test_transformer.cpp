// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "plora/transformer.hpp"
#include "support/oracles.hpp"

using namespace plora;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 0.5) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * scale);
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
Block<T> random_block(std::size_t d, std::size_t ffn, Rng& rng) {
    Block<T> b;
    b.ln1 = make_layer_norm<T>(d);
    b.ln2 = make_layer_norm<T>(d);
    b.qkv = make_linear<T>(d, 3 * d, rng, false);
    b.proj = make_linear<T>(d, d, rng);
    b.fc1 = make_linear<T>(d, ffn, rng);
    b.fc2 = make_linear<T>(ffn, d, rng);
    return b;
}

}  // namespace

TEST_SUITE("attention") {
    TEST_CASE("a single token attends only to itself") {
        Rng rng(200);
        const std::size_t d = 8;
        auto blk = random_block<double>(d, 16, rng);
        auto x = random_tensor<double>({1, d}, rng);
        BlockContext<double> ctx;
        std::vector<Tensor<double>> weights;
        auto out = attention_forward(x, blk, 2, ctx, &weights);

        for (const auto& w : weights) {
            REQUIRE(w.size() == 1);
            CHECK(w.values()[0] == 1.0);
        }
        // output equals proj(v row of the normed input) + input
        auto xn = layer_norm(x, blk.ln1.gamma, blk.ln1.beta, 1e-5);
        auto qkv = matmul(xn, blk.qkv.weight);
        auto v = slice_cols(qkv, 2 * d, 3 * d);
        auto expect = add(x, linear_forward(v, blk.proj));
        for (std::size_t i = 0; i < d; ++i)
            CHECK(out.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
    }

    TEST_CASE("identical tokens produce identical outputs") {
        Rng rng(201);
        const std::size_t d = 8;
        auto blk = random_block<double>(d, 16, rng);
        std::vector<double> row(d);
        for (auto& v : row) v = rng.normal();
        std::vector<double> data;
        for (int i = 0; i < 4; ++i) data.insert(data.end(), row.begin(), row.end());
        auto out = attention_forward(Tensor<double>::from_data({4, d}, data), blk, 2,
                                     BlockContext<double>{});
        for (std::size_t i = 1; i < 4; ++i)
            for (std::size_t j = 0; j < d; ++j)
                CHECK(out.values()[j] == doctest::Approx(out.values()[i * d + j]).epsilon(1e-12));
    }

    TEST_CASE("permuting tokens permutes outputs identically") {
        Rng rng(202);
        const std::size_t d = 8, n = 5;
        auto blk = random_block<double>(d, 16, rng);
        auto x = random_tensor<double>({n, d}, rng);
        std::vector<std::size_t> perm{4, 2, 0, 3, 1};
        std::vector<double> pdata(n * d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                pdata[i * d + j] = x.values()[perm[i] * d + j];
        auto out = attention_forward(x, blk, 2, BlockContext<double>{});
        auto pout = attention_forward(Tensor<double>::from_data({n, d}, pdata), blk, 2,
                                      BlockContext<double>{});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                CHECK(pout.values()[i * d + j] ==
                      doctest::Approx(out.values()[perm[i] * d + j]).epsilon(1e-9));
    }

    TEST_CASE("attention weights per head per query sum to one") {
        Rng rng(203);
        auto blk = random_block<double>(12, 24, rng);
        auto x = random_tensor<double>({7, 12}, rng, 1.5);
        std::vector<Tensor<double>> weights;
        attention_forward(x, blk, 3, BlockContext<double>{}, &weights);
        REQUIRE(weights.size() == 3);
        for (const auto& w : weights)
            for (std::size_t i = 0; i < w.rows(); ++i) {
                double s = 0;
                for (std::size_t j = 0; j < w.cols(); ++j) s += w.values()[i * w.cols() + j];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    }
}

TEST_SUITE("ffn") {
    TEST_CASE("zero-initialized second linear reduces to the identity") {
        Rng rng(204);
        const std::size_t d = 8;
        auto blk = random_block<double>(d, 16, rng);
        blk.fc2 = make_zero_linear<double>(16, d);
        auto x = random_tensor<double>({3, d}, rng);
        auto out = ffn_forward(x, blk, BlockContext<double>{});
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.values()[i] == x.values()[i]);
    }

    TEST_CASE("acts pointwise across tokens") {
        Rng rng(205);
        const std::size_t d = 8;
        auto blk = random_block<double>(d, 16, rng);
        auto x = random_tensor<double>({4, d}, rng);

        auto full = ffn_forward(x, blk, BlockContext<double>{});
        for (std::size_t i = 0; i < 4; ++i) {
            std::vector<double> row(x.values().begin() + i * d, x.values().begin() + (i + 1) * d);
            auto single = ffn_forward(Tensor<double>::from_data({1, d}, row), blk,
                                      BlockContext<double>{});
            for (std::size_t j = 0; j < d; ++j)
                CHECK(full.values()[i * d + j] == doctest::Approx(single.values()[j]));
        }
    }

    TEST_CASE("matches a composition of the primitives") {
        Rng rng(206);
        const std::size_t d = 8;
        auto blk = random_block<double>(d, 16, rng);
        auto x = random_tensor<double>({3, d}, rng);
        auto out = ffn_forward(x, blk, BlockContext<double>{});
        auto manual = add(
            x, add_rowvec(matmul(gelu(add_rowvec(matmul(layer_norm(x, blk.ln2.gamma, blk.ln2.beta,
                                                                   1e-5),
                                                        blk.fc1.weight),
                                                 blk.fc1.bias)),
                                 blk.fc2.weight),
                          blk.fc2.bias));
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));
    }
}

TEST_SUITE("encoder") {
    TEST_CASE("two blocks equal manual composition") {
        Rng rng(207);
        const std::size_t d = 8;
        std::vector<Block<double>> blocks{random_block<double>(d, 16, rng),
                                          random_block<double>(d, 16, rng)};
        auto fn = make_layer_norm<double>(d);
        auto x = random_tensor<double>({4, d}, rng);
        std::vector<BlockContext<double>> ctx(2);
        auto out = encoder_forward(x, blocks, fn, 2, ctx);

        auto manual = block_forward(block_forward(x, blocks[0], 2, ctx[0]), blocks[1], 2, ctx[1]);
        manual = layer_norm(manual, fn.gamma, fn.beta, 1e-5);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));
    }

    TEST_CASE("evaluation is repeat-identical") {
        Rng rng(208);
        const std::size_t d = 8;
        std::vector<Block<float>> blocks{random_block<float>(d, 16, rng)};
        auto fn = make_layer_norm<float>(d);
        auto x = random_tensor<float>({5, d}, rng);
        std::vector<BlockContext<float>> ctx(1);
        auto a = encoder_forward(x, blocks, fn, 2, ctx);
        auto b = encoder_forward(x, blocks, fn, 2, ctx);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
    }

    TEST_CASE("end-to-end gradients match finite differences on a tiny config") {
        Rng rng(209);
        const std::size_t d = 8;
        std::vector<Block<double>> blocks{random_block<double>(d, 16, rng),
                                          random_block<double>(d, 16, rng)};
        auto fn = make_layer_norm<double>(d);
        auto x = random_tensor<double>({4, d}, rng);
        std::vector<BlockContext<double>> ctx(2);
        for (auto& b : blocks) {
            b.qkv.weight.set_requires_grad(true);
            b.fc1.weight.set_requires_grad(true);
            b.ln1.gamma.set_requires_grad(true);
        }
        auto run = [&] {
            TokenSequence<double> seq;
            seq.tokens = encoder_forward(x, blocks, fn, 2, ctx);
            seq.roles.assign(4, TokenRole::Patch);
            seq.roles[0] = TokenRole::Class;
            seq.centers.assign(4, {0, 0, 0});
            auto pooled = pool_features(seq);
            return mean_all(mul(pooled, pooled));
        };
        backward(run());
        for (auto& b : blocks) {
            for (auto* t : {&b.qkv.weight, &b.fc1.weight, &b.ln1.gamma}) {
                REQUIRE(t->has_grad());
                for (std::size_t i = 0; i < t->size();
                     i += std::max<std::size_t>(1, t->size() / 4)) {
                    const double fd =
                        oracle::fd_gradient(t->values(), i, [&] { return run().item(); }, 1e-5);
                    CHECK(oracle::rel_err(t->grad()[i], fd) < 1e-3);
                }
            }
        }
    }
}

TEST_SUITE("feature pooling") {
    TEST_CASE("single patch token concatenates class and that token") {
        TokenSequence<double> seq;
        seq.tokens = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        seq.roles = {TokenRole::Class, TokenRole::Patch};
        seq.centers = {{0, 0, 0}, {1, 1, 1}};
        auto pooled = pool_features(seq);
        REQUIRE(pooled.shape() == Shape{1, 6});
        const double expect[6] = {1, 2, 3, 4, 5, 6};
        for (std::size_t i = 0; i < 6; ++i) CHECK(pooled.values()[i] == expect[i]);
    }

    TEST_CASE("max half is invariant to token order and duplication") {
        TokenSequence<double> a;
        a.tokens = Tensor<double>::from_data({3, 2}, {9, 9, 1, 7, 5, 2});
        a.roles = {TokenRole::Class, TokenRole::Patch, TokenRole::Patch};
        a.centers.assign(3, {0, 0, 0});

        TokenSequence<double> b;
        b.tokens = Tensor<double>::from_data({4, 2}, {9, 9, 5, 2, 1, 7, 5, 2});
        b.roles = {TokenRole::Class, TokenRole::Patch, TokenRole::Patch, TokenRole::Patch};
        b.centers.assign(4, {0, 0, 0});

        auto pa = pool_features(a);
        auto pb = pool_features(b);
        for (std::size_t i = 0; i < 4; ++i) CHECK(pa.values()[i] == pb.values()[i]);
    }

    TEST_CASE("missing class token is a contract error") {
        TokenSequence<double> seq;
        seq.tokens = Tensor<double>::from_data({1, 2}, {1, 2});
        seq.roles = {TokenRole::Patch};
        seq.centers = {{0, 0, 0}};
        CHECK_THROWS_AS(pool_features(seq), ContractError);
    }

    TEST_CASE("prompt tokens can be excluded from the pool") {
        TokenSequence<double> seq;
        seq.tokens = Tensor<double>::from_data({3, 1}, {0, 1, 100});
        seq.roles = {TokenRole::Class, TokenRole::Patch, TokenRole::Prompt};
        seq.centers.assign(3, {0, 0, 0});
        CHECK(pool_features(seq, true).values()[1] == 100);
        CHECK(pool_features(seq, false).values()[1] == 1);
    }
}

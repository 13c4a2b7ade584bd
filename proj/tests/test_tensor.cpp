#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "core/tensor.hpp"
#include "oracles.hpp"

using namespace atoms;

TEST_CASE("matmul identity and projector") {
    Tensor i2 = Tensor::identity(2);
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(i2, m);
    CHECK(r.data() == std::vector<float>{1, 2, 3, 4});

    Tensor proj = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    Tensor s = matmul(proj, Tensor::from_data({2, 2}, {5, 6, 7, 8}));
    CHECK(s.data() == std::vector<float>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch raises") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), DimError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(7);
    // Modest scales keep single-precision probe noise inside the bound.
    Tensor a = rand_uniform({3, 4}, rng, -0.5f, 0.5f, true);
    Tensor b = rand_uniform({4, 2}, rng, -0.5f, 0.5f, true);
    Tensor w = rand_uniform({3, 2}, rng, -1.0f, 1.0f, false);
    auto fwd = [&]() { return sum(hadamard(matmul(a, b), w)); };
    CHECK(oracles::max_grad_rel_err(fwd, {a, b}) < 1e-4);
}

TEST_CASE("softmax rows") {
    Tensor u = softmax_rows(Tensor::from_data({1, 3}, {0, 0, 0}));
    for (float v : u.data()) CHECK(v == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));

    Tensor sat = softmax_rows(Tensor::from_data({1, 2}, {1000.0f, 0.0f}));
    CHECK(std::fabs(sat.data()[0] - 1.0f) < 1e-9);
    CHECK(std::fabs(sat.data()[1]) < 1e-9);

    Rng rng(3);
    Tensor x = randn({2, 5}, rng, 1.0f, true);
    Tensor w = randn({2, 5}, rng, 1.0f, false);
    auto fwd = [&]() { return sum(hadamard(softmax_rows(x), w)); };
    CHECK(oracles::max_grad_rel_err(fwd, {x}) < 1e-4);
}

TEST_CASE("softmax row sums are one") {
    Rng rng(11);
    Tensor x = randn({6, 9}, rng, 2.0f, false);
    Tensor y = softmax_rows(x);
    for (int i = 0; i < 6; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 9; ++j) acc += y.at(i, j);
        CHECK(std::fabs(acc - 1.0) < 1e-6);
    }
}

TEST_CASE("backward on linear and quadratic losses") {
    Tensor w = Tensor::from_data({2, 2}, {1, -2, 3, 0.5f}, true);
    backward(sum(w));
    CHECK(w.grad() == std::vector<float>(4, 1.0f));

    backward(scale(sum(hadamard(w, w)), 0.5f));
    for (size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.data()[i]));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(backward(hadamard(w, w)), ContractError);
}

TEST_CASE("backward overwrites unless accumulation requested") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    backward(sum(w));
    backward(sum(w));
    CHECK(w.grad() == std::vector<float>{1, 1});
    backward(sum(w), /*accumulate=*/true);
    CHECK(w.grad() == std::vector<float>{2, 2});
}

TEST_CASE("frozen tensors receive no grad") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    Tensor frozen = Tensor::from_data({2}, {3, 4}, false);
    backward(sum(hadamard(w, frozen)));
    CHECK(w.has_grad());
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("non-finite op output raises NumericError") {
    Tensor big = Tensor::from_data({1, 2}, {100.0f, 100.0f});
    CHECK_THROWS_AS(exponential(scale(big, 100.0f)), NumericError);
}

TEST_CASE("elementwise op gradients vs finite differences") {
    Rng rng(17);
    // Offsets keep probes away from relu/log kinks.
    Tensor x = rand_uniform({3, 4}, rng, 0.2f, 1.8f, true);
    Tensor y = rand_uniform({3, 4}, rng, 0.2f, 1.8f, true);
    Tensor w = randn({3, 4}, rng, 1.0f, false);

    auto check = [&](std::function<Tensor()> fwd, std::vector<Tensor> params) {
        CHECK(oracles::max_grad_rel_err(fwd, params) < 1e-3);
    };

    check([&]() { return sum(hadamard(add(x, y), w)); }, {x, y});
    check([&]() { return sum(hadamard(subtract(x, y), w)); }, {x, y});
    check([&]() { return sum(hadamard(hadamard(x, y), w)); }, {x, y});
    check([&]() { return sum(hadamard(scale(x, 1.7f), w)); }, {x});
    check([&]() { return sum(hadamard(relu(subtract(x, y)), w)); }, {x, y});
    check([&]() { return sum(hadamard(sigmoid(x), w)); }, {x});
    check([&]() { return sum(hadamard(exponential(x), w)); }, {x});
    check([&]() { return sum(hadamard(logarithm(x), w)); }, {x});
    check([&]() { return mean(hadamard(x, w)); }, {x});
    check([&]() { return sum(hadamard(transpose(x), transpose(w))); }, {x});
    check([&]() { return sum(hadamard(reshape(x, {4, 3}), reshape(w, {4, 3}))); }, {x});
    check([&]() { return sum(row_sum(hadamard(x, w))); }, {x});
    check([&]() { return sum(col_mean(hadamard(x, w))); }, {x});
    check([&]() { return sum(hadamard(col_slice(x, 1, 3), col_slice(w, 1, 3))); }, {x});
    check([&]() { return sum(hadamard(row_slice(x, 0, 2), row_slice(w, 0, 2))); }, {x});
}

TEST_CASE("row broadcast add gradients") {
    Rng rng(23);
    Tensor x = randn({4, 3}, rng, 1.0f, true);
    Tensor bias = randn({1, 3}, rng, 1.0f, true);
    Tensor w = randn({4, 3}, rng, 1.0f, false);
    auto fwd = [&]() { return sum(hadamard(add(x, bias), w)); };
    CHECK(oracles::max_grad_rel_err(fwd, {x, bias}) < 1e-3);
}

TEST_CASE("gaussian reparameterization gradient") {
    Rng rng(29);
    Tensor mu = randn({1, 2}, rng, 0.5f, true);
    Tensor logvar = randn({1, 2}, rng, 0.3f, true);
    Tensor eps = randn({1, 2}, rng, 1.0f, false);
    Tensor w = randn({1, 2}, rng, 1.0f, false);
    auto fwd = [&]() { return sum(hadamard(gaussian_reparam(mu, logvar, eps), w)); };
    CHECK(oracles::max_grad_rel_err(fwd, {mu, logvar}) < 1e-3);
}

TEST_CASE("determinism: identical seeds give identical tensors") {
    Rng a(42), b(42);
    Tensor ta = randn({8, 8}, a, 1.0f);
    Tensor tb = randn({8, 8}, b, 1.0f);
    CHECK(ta.data() == tb.data());
}

TEST_CASE("serialization round trip is bit exact") {
    Rng rng(5);
    Tensor t = randn({3, 5, 2}, rng, 2.5f);
    std::string path = (std::filesystem::temp_directory_path() / "atns_roundtrip.atns").string();
    save_tensor(path, t);
    Tensor back = load_tensor(path);
    CHECK(back.shape() == t.shape());
    CHECK(back.data() == t.data());
    std::remove(path.c_str());
}

TEST_CASE("serialization rejects malformed files") {
    std::string path = (std::filesystem::temp_directory_path() / "atns_bad.atns").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_tensor(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_tensor("/definitely/not/here.atns"), IoError);
}

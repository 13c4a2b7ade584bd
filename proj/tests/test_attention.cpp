#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "attention/adapter.hpp"
#include "attention/lora.hpp"
#include "oracles.hpp"

using namespace atoms;

namespace {

// Straight-line single-head reference: softmax(X Wq (X Wk)^T) X Wv Wo,
// written with raw loops, independent of the library ops.
Tensor single_head_oracle(const AttentionLayer& layer, const Tensor& x) {
    int n = x.dim(0), ci = x.dim(1), co = layer.c_out();
    auto mm = [](const std::vector<double>& a, const std::vector<double>& b, int p, int q, int r) {
        std::vector<double> out(static_cast<size_t>(p) * r, 0.0);
        for (int i = 0; i < p; ++i)
            for (int k = 0; k < q; ++k)
                for (int j = 0; j < r; ++j)
                    out[static_cast<size_t>(i) * r + j] +=
                        a[static_cast<size_t>(i) * q + k] * b[static_cast<size_t>(k) * r + j];
        return out;
    };
    std::vector<double> xd(x.data().begin(), x.data().end());
    std::vector<double> wq(layer.w_q.data().begin(), layer.w_q.data().end());
    std::vector<double> wk(layer.w_k.data().begin(), layer.w_k.data().end());
    std::vector<double> wv(layer.w_v.data().begin(), layer.w_v.data().end());
    std::vector<double> wo(layer.w_o.data().begin(), layer.w_o.data().end());
    std::vector<double> q = mm(xd, wq, n, ci, co), k = mm(xd, wk, n, ci, co);
    std::vector<double> logits(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int t = 0; t < co; ++t)
                logits[static_cast<size_t>(i) * n + j] +=
                    q[static_cast<size_t>(i) * co + t] * k[static_cast<size_t>(j) * co + t];
    for (int i = 0; i < n; ++i) {
        double mx = logits[static_cast<size_t>(i) * n];
        for (int j = 1; j < n; ++j) mx = std::max(mx, logits[static_cast<size_t>(i) * n + j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            logits[static_cast<size_t>(i) * n + j] = std::exp(logits[static_cast<size_t>(i) * n + j] - mx);
            denom += logits[static_cast<size_t>(i) * n + j];
        }
        for (int j = 0; j < n; ++j) logits[static_cast<size_t>(i) * n + j] /= denom;
    }
    std::vector<double> out = mm(mm(logits, mm(xd, wv, n, ci, co), n, n, co), wo, n, co, co);
    Tensor res = Tensor::zeros({n, co});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < co; ++j) res.at(i, j) = static_cast<float>(out[static_cast<size_t>(i) * co + j]);
    return res;
}

// Multi-head dense oracle: per-head straight-line loops in double precision,
// summing A_h (X Wv_h) Wo_h with Wo_h the h-th row block of W_o.
Tensor multi_head_oracle(const AttentionLayer& layer, const Tensor& x) {
    int n = x.dim(0), ci = layer.c_in(), co = layer.c_out(), hd = layer.head_dim();
    std::vector<double> total(static_cast<size_t>(n) * co, 0.0);
    for (int h = 0; h < layer.num_heads; ++h) {
        std::vector<double> q(static_cast<size_t>(n) * hd, 0.0), k(q), v(q);
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < ci; ++t) {
                double xv = x.at(i, t);
                for (int j = 0; j < hd; ++j) {
                    q[static_cast<size_t>(i) * hd + j] += xv * layer.w_q.at(t, h * hd + j);
                    k[static_cast<size_t>(i) * hd + j] += xv * layer.w_k.at(t, h * hd + j);
                    v[static_cast<size_t>(i) * hd + j] += xv * layer.w_v.at(t, h * hd + j);
                }
            }
        std::vector<double> map(static_cast<size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j)
                for (int t = 0; t < hd; ++t)
                    map[static_cast<size_t>(i) * n + j] +=
                        q[static_cast<size_t>(i) * hd + t] * k[static_cast<size_t>(j) * hd + t];
            double mx = map[static_cast<size_t>(i) * n];
            for (int j = 1; j < n; ++j) mx = std::max(mx, map[static_cast<size_t>(i) * n + j]);
            double denom = 0.0;
            for (int j = 0; j < n; ++j) {
                map[static_cast<size_t>(i) * n + j] = std::exp(map[static_cast<size_t>(i) * n + j] - mx);
                denom += map[static_cast<size_t>(i) * n + j];
            }
            for (int j = 0; j < n; ++j) map[static_cast<size_t>(i) * n + j] /= denom;
        }
        // total += A (X Wv_h) Wo_rowblock_h
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double a = map[static_cast<size_t>(i) * n + j];
                for (int t = 0; t < hd; ++t) {
                    double av = a * v[static_cast<size_t>(j) * hd + t];
                    for (int c = 0; c < co; ++c)
                        total[static_cast<size_t>(i) * co + c] += av * layer.w_o.at(h * hd + t, c);
                }
            }
    }
    Tensor res = Tensor::zeros({n, co});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < co; ++j) res.at(i, j) = static_cast<float>(total[static_cast<size_t>(i) * co + j]);
    return res;
}

}  // namespace

TEST_CASE("single token attends to itself") {
    Rng rng(1);
    AttentionLayer layer = AttentionLayer::random_init(4, 4, 1, rng, 0.3f);
    Tensor x = randn({1, 4}, rng, 1.0f);
    AttentionOut out = attention_forward(layer, x);
    CHECK(out.head_maps[0].data()[0] == doctest::Approx(1.0f));
    Tensor want = matmul(matmul(x, layer.w_v), layer.w_o);
    for (int j = 0; j < 4; ++j)
        CHECK(out.output.at(0, j) == doctest::Approx(want.at(0, j)).epsilon(1e-5));
}

TEST_CASE("H=1 matches the separately coded single-head path") {
    Rng rng(2);
    AttentionLayer layer = AttentionLayer::random_init(6, 6, 1, rng, 0.4f);
    Tensor x = randn({5, 6}, rng, 0.8f);
    AttentionOut out = attention_forward(layer, x);
    Tensor want = single_head_oracle(layer, x);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(std::fabs(out.output.at(i, j) - want.at(i, j)) < 1e-6);
}

TEST_CASE("multi-head forward matches the dense oracle") {
    Rng rng(3);
    AttentionLayer layer = AttentionLayer::random_init(8, 8, 2, rng, 0.4f);
    Tensor x = randn({4, 8}, rng, 0.8f);
    AttentionOut out = attention_forward(layer, x);
    Tensor want = multi_head_oracle(layer, x);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(std::fabs(out.output.at(i, j) - want.at(i, j)) < 1e-5);
    for (const auto& map : out.head_maps) {
        for (int i = 0; i < 4; ++i) {
            double acc = 0.0;
            for (int j = 0; j < 4; ++j) acc += map.at(i, j);
            CHECK(std::fabs(acc - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("composite dictionary view reproduces the forward output") {
    Rng rng(4);
    for (int heads : {1, 2, 4}) {
        AttentionLayer layer = AttentionLayer::random_init(8, 8, heads, rng, 0.4f);
        Tensor x = randn({4, 8}, rng, 0.8f);
        AttentionOut fwd = attention_forward(layer, x);
        DictionaryView view = composite_dictionary_view(layer, x);
        CHECK(view.coeffs.shape() == Shape{4, 4 * heads});
        CHECK(view.atoms.shape() == Shape{4 * heads, 8});
        Tensor prod = matmul(view.coeffs, view.atoms);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(std::fabs(prod.at(i, j) - fwd.output.at(i, j)) < 1e-5);
        if (heads == 1) {
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    CHECK(view.coeffs.at(i, j) == doctest::Approx(fwd.head_maps[0].at(i, j)));
        }
    }
}

TEST_CASE("adapter full shrinkage is a no-op") {
    Rng rng(5);
    SparseAdapter adapter = SparseAdapter::init(6, 6, 4, ActivationPolicy::soft_threshold(100.0f),
                                                rng, false, 0.02f, 0.3f);
    Tensor x = randn({3, 6}, rng, 1.0f);
    Tensor map = softmax_rows(randn({3, 3}, rng, 0.5f));
    AdapterOut out = adapter_forward(adapter, x, map);
    for (float v : out.delta_o.data()) CHECK(v == 0.0f);
    for (float v : out.coeffs.data()) CHECK(v == 0.0f);
}

TEST_CASE("adapter hand-computed case: lambda 0, identity map") {
    Rng rng(6);
    SparseAdapter adapter = SparseAdapter::init(2, 3, 2, ActivationPolicy::soft_threshold(0.0f),
                                                rng, false, 1.0f, 1.0f);
    adapter.w_s = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    adapter.dict = Tensor::from_data({2, 3}, {1, 0, 1, 0, 1, 2}, true);
    Tensor x = Tensor::from_data({1, 2}, {0.5f, -1.0f});
    Tensor map = Tensor::from_data({1, 1}, {1.0f});
    AdapterOut out = adapter_forward(adapter, x, map);
    // S = X W_s = [0.5*1 - 1*3, 0.5*2 - 1*4] = [-2.5, -3]
    CHECK(out.coeffs.at(0, 0) == doctest::Approx(-2.5f));
    CHECK(out.coeffs.at(0, 1) == doctest::Approx(-3.0f));
    // delta = S D = [-2.5, -3, -8.5]
    CHECK(out.delta_o.at(0, 0) == doctest::Approx(-2.5f).epsilon(1e-6));
    CHECK(out.delta_o.at(0, 1) == doctest::Approx(-3.0f).epsilon(1e-6));
    CHECK(out.delta_o.at(0, 2) == doctest::Approx(-8.5f).epsilon(1e-6));
}

TEST_CASE("top-1 adapter keeps each row on a single atom") {
    Rng rng(7);
    SparseAdapter adapter =
        SparseAdapter::init(6, 6, 5, ActivationPolicy::top_k(1), rng, false, 0.5f, 0.5f);
    Tensor x = randn({4, 6}, rng, 1.0f);
    Tensor map = softmax_rows(randn({4, 4}, rng, 0.5f));
    AdapterOut out = adapter_forward(adapter, x, map);
    for (int i = 0; i < 4; ++i) {
        int nonzero = 0;
        for (int m = 0; m < 5; ++m)
            if (out.coeffs.at(i, m) != 0.0f) ++nonzero;
        CHECK(nonzero <= 1);
    }
    CHECK(density(out.coeffs) <= doctest::Approx(1.0 / 5.0));
}

TEST_CASE("zero-initialized adapter leaves attention output bit-identical") {
    Rng rng(8);
    AttentionLayer layer = AttentionLayer::random_init(8, 8, 2, rng, 0.4f);
    SparseAdapter adapter =
        SparseAdapter::init(8, 8, 6, ActivationPolicy::soft_threshold(0.1f), rng);
    Tensor x = randn({4, 8}, rng, 0.8f);
    Tensor base = attention_forward(layer, x).output;
    AdaptedOut adapted = adapted_attention_forward(layer, adapter, x);
    CHECK(adapted.output.data() == base.data());
}

TEST_CASE("gradients stop at frozen layers; adapters still learn") {
    Rng rng(9);
    AttentionLayer layer = AttentionLayer::random_init(6, 6, 1, rng, 0.4f);
    layer.set_frozen(true);
    SparseAdapter adapter =
        SparseAdapter::init(6, 6, 4, ActivationPolicy::soft_threshold(0.01f), rng, true, 0.3f, 0.3f);
    Tensor x = randn({3, 6}, rng, 0.8f);
    std::vector<float> wq_before = layer.w_q.data();

    AdaptedOut out = adapted_attention_forward(layer, adapter, x);
    backward(mean(hadamard(out.output, out.output)));
    CHECK_FALSE(layer.w_q.has_grad());
    CHECK_FALSE(layer.w_v.has_grad());
    CHECK(adapter.dict.has_grad());
    CHECK(layer.w_q.data() == wq_before);
}

TEST_CASE("adapted attention composite gradient vs finite differences") {
    Rng rng(10);
    AttentionLayer layer = AttentionLayer::random_init(4, 4, 2, rng, 0.4f);
    layer.set_frozen(true);
    SparseAdapter adapter =
        SparseAdapter::init(4, 4, 3, ActivationPolicy::shifted_relu(0.05f), rng, true, 0.4f, 0.4f);
    Tensor x = randn({3, 4}, rng, 0.6f);
    Tensor w = randn({3, 4}, rng, 1.0f);
    auto fwd = [&]() {
        AdaptedOut out = adapted_attention_forward(layer, adapter, x);
        return sum(hadamard(out.output, w));
    };
    CHECK(oracles::max_grad_rel_err(fwd, {adapter.w_s, adapter.dict}) < 1e-3);
}

TEST_CASE("select_atoms: all, none, and top-1 outer product") {
    Rng rng(11);
    SparseAdapter adapter =
        SparseAdapter::init(5, 5, 4, ActivationPolicy::soft_threshold(0.0f), rng, false, 0.6f, 0.6f);
    Tensor x = randn({3, 5}, rng, 1.0f);
    Tensor map = softmax_rows(randn({3, 3}, rng, 0.5f));
    AdapterOut out = adapter_forward(adapter, x, map);

    Tensor all = select_atoms_delta(adapter, out.effective_coeffs, {0, 1, 2, 3});
    for (size_t i = 0; i < all.data().size(); ++i)
        CHECK(all.data()[i] == doctest::Approx(out.delta_o.data()[i]).epsilon(1e-6));

    Tensor none = select_atoms_delta(adapter, out.effective_coeffs, {});
    for (float v : none.data()) CHECK(v == 0.0f);

    std::vector<int> top = rank_atoms_by_mass(out.effective_coeffs);
    Tensor one = select_atoms_delta_top(adapter, out.effective_coeffs, 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(one.at(i, j) ==
                  doctest::Approx(out.effective_coeffs.at(i, top[0]) * adapter.dict.at(top[0], j))
                      .epsilon(1e-5));

    CHECK_THROWS_AS(select_atoms_delta(adapter, out.effective_coeffs, {7}), ContractError);
}

TEST_CASE("per-atom contributions sum to the full update") {
    Rng rng(12);
    SparseAdapter adapter =
        SparseAdapter::init(5, 5, 6, ActivationPolicy::soft_threshold(0.05f), rng, true, 0.5f, 0.5f);
    Tensor x = randn({4, 5}, rng, 1.0f);
    Tensor map = softmax_rows(randn({4, 4}, rng, 0.5f));
    AdapterOut out = adapter_forward(adapter, x, map);
    Tensor acc = Tensor::zeros({4, 5});
    for (int m = 0; m < 6; ++m) {
        Tensor part = select_atoms_delta(adapter, out.effective_coeffs, {m});
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 5; ++j) acc.at(i, j) += part.at(i, j);
    }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(std::fabs(acc.at(i, j) - out.delta_o.at(i, j)) < 1e-6);
}

TEST_CASE("lora zero init is exact; dense-weight oracle agrees") {
    Rng rng(13);
    AttentionLayer layer = AttentionLayer::random_init(6, 6, 2, rng, 0.4f);
    LowRankAdapter::Targets targets;
    targets.q = targets.k = targets.v = targets.o = true;
    LowRankAdapter lora = LowRankAdapter::init(layer, 2, targets, rng);
    Tensor x = randn({4, 6}, rng, 0.8f);

    Tensor base = attention_forward(layer, x).output;
    Tensor adapted = lowrank_adapted_forward(layer, lora, x);
    CHECK(adapted.data() == base.data());

    // populate B factors, then compare against explicitly added weights
    Rng fill(14);
    for (auto* pair : {&lora.q, &lora.k, &lora.v, &lora.o})
        for (auto& v : (*pair)->b.data()) v = fill.normal() * 0.3f;

    AttentionLayer dense;
    dense.num_heads = layer.num_heads;
    dense.w_q = add(layer.w_q, matmul(lora.q->a, lora.q->b)).detached_copy();
    dense.w_k = add(layer.w_k, matmul(lora.k->a, lora.k->b)).detached_copy();
    dense.w_v = add(layer.w_v, matmul(lora.v->a, lora.v->b)).detached_copy();
    dense.w_o = add(layer.w_o, matmul(lora.o->a, lora.o->b)).detached_copy();

    Tensor via_lora = lowrank_adapted_forward(layer, lora, x);
    Tensor via_dense = attention_forward(dense, x).output;
    for (size_t i = 0; i < via_lora.data().size(); ++i)
        CHECK(std::fabs(via_lora.data()[i] - via_dense.data()[i]) < 1e-5);
}

TEST_CASE("rank-1 value update produces a rank-1 output difference") {
    Rng rng(15);
    AttentionLayer layer = AttentionLayer::random_init(6, 6, 1, rng, 0.4f);
    LowRankAdapter::Targets targets;
    targets.v = true;
    LowRankAdapter lora = LowRankAdapter::init(layer, 1, targets, rng, 0.4f);
    Rng fill(16);
    for (auto& v : lora.v->b.data()) v = fill.normal() * 0.4f;

    Tensor x = randn({5, 6}, rng, 0.8f);
    Tensor base = attention_forward(layer, x).output;
    Tensor adapted = lowrank_adapted_forward(layer, lora, x);
    Tensor diff = Tensor::zeros({5, 6});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) diff.at(i, j) = adapted.at(i, j) - base.at(i, j);
    auto [s1, s2] = oracles::top_two_singular_values(diff);
    CHECK(s1 > 1e-4);
    CHECK(s2 < 1e-5 * s1 + 1e-6);
}

TEST_CASE("adapter bundle round trip") {
    Rng rng(17);
    SparseAdapter adapter =
        SparseAdapter::init(6, 8, 5, ActivationPolicy::top_k(2), rng, false, 0.4f, 0.4f);
    std::string dir = (std::filesystem::temp_directory_path() / "adapter_bundle_test").string();
    save_adapter_bundle(dir, adapter);
    SparseAdapter back = load_adapter_bundle(dir);
    CHECK(back.w_s.data() == adapter.w_s.data());
    CHECK(back.dict.data() == adapter.dict.data());
    CHECK(back.activation.kind == ActivationKind::TopK);
    CHECK(back.activation.k == 2);
    CHECK(back.apply_before_attention == false);
    std::filesystem::remove_all(dir);
}

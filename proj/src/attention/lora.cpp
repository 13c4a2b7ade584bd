#include "attention/lora.hpp"

namespace atoms {

namespace {

LowRankAdapter::FactorPair make_pair(int rows, int cols, int rank, Rng& rng, float a_scale) {
    LowRankAdapter::FactorPair p;
    p.a = randn({rows, rank}, rng, a_scale, true);
    p.b = Tensor::zeros({rank, cols}, true);
    return p;
}

Tensor adapted_weight(const Tensor& base, const std::optional<LowRankAdapter::FactorPair>& pair) {
    if (!pair) return base;
    return add(base, matmul(pair->a, pair->b));
}

}  // namespace

LowRankAdapter LowRankAdapter::init(const AttentionLayer& layer, int rank, Targets targets,
                                    Rng& rng, float a_scale) {
    if (rank < 1) throw ContractError("lora: rank must be positive");
    if (!(targets.q || targets.k || targets.v || targets.o))
        throw ContractError("lora: at least one target projection required");
    LowRankAdapter lora;
    lora.rank = rank;
    int ci = layer.c_in(), co = layer.c_out();
    if (targets.q) lora.q = make_pair(ci, co, rank, rng, a_scale);
    if (targets.k) lora.k = make_pair(ci, co, rank, rng, a_scale);
    if (targets.v) lora.v = make_pair(ci, co, rank, rng, a_scale);
    if (targets.o) lora.o = make_pair(co, co, rank, rng, a_scale);
    return lora;
}

void LowRankAdapter::set_trainable(bool trainable) {
    for (auto* pair : {&q, &k, &v, &o}) {
        if (pair->has_value()) {
            (*pair)->a.set_requires_grad(trainable);
            (*pair)->b.set_requires_grad(trainable);
        }
    }
}

std::vector<NamedParam> LowRankAdapter::params(const std::string& prefix) const {
    std::vector<NamedParam> out;
    auto push = [&](const char* name, const std::optional<FactorPair>& pair) {
        if (pair) {
            out.emplace_back(prefix + "." + name + ".a", pair->a);
            out.emplace_back(prefix + "." + name + ".b", pair->b);
        }
    };
    push("q", q);
    push("k", k);
    push("v", v);
    push("o", o);
    return out;
}

Tensor lowrank_adapted_forward(const AttentionLayer& layer, const LowRankAdapter& lora,
                               const Tensor& x) {
    Tensor wq = adapted_weight(layer.w_q, lora.q);
    Tensor wk = adapted_weight(layer.w_k, lora.k);
    Tensor wv = adapted_weight(layer.w_v, lora.v);
    Tensor wo = adapted_weight(layer.w_o, lora.o);

    int hd = layer.head_dim();
    Tensor acc;
    for (int h = 0; h < layer.num_heads; ++h) {
        Tensor q = matmul(x, col_slice(wq, h * hd, (h + 1) * hd));
        Tensor k = matmul(x, col_slice(wk, h * hd, (h + 1) * hd));
        Tensor map = softmax_rows(matmul(q, transpose(k)));
        Tensor v = matmul(x, col_slice(wv, h * hd, (h + 1) * hd));
        Tensor head = matmul(matmul(map, v), row_slice(wo, h * hd, (h + 1) * hd));
        acc = h == 0 ? head : add(acc, head);
    }
    return acc;
}

}  // namespace atoms

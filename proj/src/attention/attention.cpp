#include "attention/attention.hpp"

namespace atoms {

AttentionLayer AttentionLayer::random_init(int c_in, int c_out, int heads, Rng& rng,
                                           float stddev) {
    if (heads < 1 || c_out % heads != 0)
        throw ContractError("attention: C_o must be divisible by the head count");
    AttentionLayer layer;
    layer.num_heads = heads;
    layer.w_q = randn({c_in, c_out}, rng, stddev, true);
    layer.w_k = randn({c_in, c_out}, rng, stddev, true);
    layer.w_v = randn({c_in, c_out}, rng, stddev, true);
    layer.w_o = randn({c_out, c_out}, rng, stddev, true);
    return layer;
}

void AttentionLayer::set_frozen(bool frozen) {
    w_q.set_requires_grad(!frozen);
    w_k.set_requires_grad(!frozen);
    w_v.set_requires_grad(!frozen);
    w_o.set_requires_grad(!frozen);
}

std::vector<NamedParam> AttentionLayer::params(const std::string& prefix) const {
    return {{prefix + ".w_q", w_q}, {prefix + ".w_k", w_k}, {prefix + ".w_v", w_v},
            {prefix + ".w_o", w_o}};
}

std::vector<Tensor> attention_maps(const AttentionLayer& layer, const Tensor& x) {
    if (x.ndim() != 2 || x.dim(1) != layer.c_in())
        throw DimError("attention: input " + shape_str(x.shape()) + " does not match C_i=" +
                       std::to_string(layer.c_in()));
    int hd = layer.head_dim();
    std::vector<Tensor> maps;
    maps.reserve(static_cast<size_t>(layer.num_heads));
    for (int h = 0; h < layer.num_heads; ++h) {
        Tensor q = matmul(x, col_slice(layer.w_q, h * hd, (h + 1) * hd));
        Tensor k = matmul(x, col_slice(layer.w_k, h * hd, (h + 1) * hd));
        maps.push_back(softmax_rows(matmul(q, transpose(k))));
    }
    return maps;
}

AttentionOut attention_forward(const AttentionLayer& layer, const Tensor& x) {
    AttentionOut out;
    out.head_maps = attention_maps(layer, x);
    int hd = layer.head_dim();
    Tensor acc;
    for (int h = 0; h < layer.num_heads; ++h) {
        Tensor v = matmul(x, col_slice(layer.w_v, h * hd, (h + 1) * hd));
        Tensor o_block = row_slice(layer.w_o, h * hd, (h + 1) * hd);
        Tensor head = matmul(matmul(out.head_maps[static_cast<size_t>(h)], v), o_block);
        acc = h == 0 ? head : add(acc, head);
    }
    out.output = acc;
    return out;
}

DictionaryView composite_dictionary_view(const AttentionLayer& layer, const Tensor& x) {
    AttentionOut fwd = attention_forward(layer, x);
    int n = x.dim(0);
    int h_count = layer.num_heads;
    int hd = layer.head_dim();
    int c_out = layer.c_out();

    DictionaryView view;
    view.coeffs = Tensor::zeros({n, n * h_count});
    view.atoms = Tensor::zeros({n * h_count, c_out});

    for (int h = 0; h < h_count; ++h) {
        const auto& map = fwd.head_maps[static_cast<size_t>(h)].data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                view.coeffs.at(i, h * n + j) = map[static_cast<size_t>(i) * n + j];

        // X Wvo_h = X Wv_h Wo_h with Wo_h the h-th row block of W_o.
        Tensor xv = matmul(x.detached_copy(),
                           col_slice(Tensor::from_data(layer.w_v.shape(), layer.w_v.data()),
                                     h * hd, (h + 1) * hd));
        Tensor block = matmul(xv, row_slice(Tensor::from_data(layer.w_o.shape(), layer.w_o.data()),
                                            h * hd, (h + 1) * hd));
        for (int j = 0; j < n; ++j)
            for (int t = 0; t < c_out; ++t) view.atoms.at(h * n + j, t) = block.at(j, t);
    }
    return view;
}

}  // namespace atoms

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace atoms {

using NamedParam = std::pair<std::string, Tensor>;

// One attention block: query/key/value projections [C_i x C_o] and an output
// projection [C_o x C_o], split into H head slices of width C_o / H.
struct AttentionLayer {
    Tensor w_q, w_k, w_v, w_o;
    int num_heads = 1;

    static AttentionLayer random_init(int c_in, int c_out, int heads, Rng& rng,
                                      float stddev = 0.02f);

    int c_in() const { return w_q.dim(0); }
    int c_out() const { return w_q.dim(1); }
    int head_dim() const { return c_out() / num_heads; }

    bool frozen() const { return !w_q.requires_grad(); }
    void set_frozen(bool frozen);

    std::vector<NamedParam> params(const std::string& prefix = "attn") const;
};

struct AttentionOut {
    Tensor output;                  // N x C_o
    std::vector<Tensor> head_maps;  // H attention maps, each N x N, rows sum to 1
};

// Multi-head forward: output = sum_h A_h (X Wv_h) Wo_h with Wo_h the h-th
// row block of W_o. H = 1 reduces to softmax(X Wq (X Wk)^T) X Wv Wo.
AttentionOut attention_forward(const AttentionLayer& layer, const Tensor& x);

// Attention maps only (useful when the value path is replaced).
std::vector<Tensor> attention_maps(const AttentionLayer& layer, const Tensor& x);

struct DictionaryView {
    Tensor coeffs;  // N x N*H, horizontal concatenation of head maps
    Tensor atoms;   // N*H x C_o, stacked X Wvo_h blocks
};

// The same forward expressed as one coefficients-times-atoms product;
// coeffs * atoms reproduces attention_forward's output. Evaluation only,
// detached from the tape.
DictionaryView composite_dictionary_view(const AttentionLayer& layer, const Tensor& x);

}  // namespace atoms

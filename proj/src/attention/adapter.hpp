#pragma once

#include <string>
#include <vector>

#include "attention/attention.hpp"
#include "sparse/activations.hpp"

namespace atoms {

// Trainable sparse dictionary head: coefficient projection W_s [C_i x M],
// atom dictionary D [M x C_o] and a sparsifying activation. Produces a
// feature update delta_O = coeffs * D.
struct SparseAdapter {
    Tensor w_s;   // C_i x M
    Tensor dict;  // M x C_o
    ActivationPolicy activation;
    // true: delta_O = A * act(X W_s) * D (the cheap order; A and the sparse
    // codes are computed independently). false: delta_O = act(A X W_s) * D.
    bool apply_before_attention = true;

    // w_s gets a small Gaussian init; dict_scale 0 keeps the adapter an
    // exact no-op on its first forward.
    static SparseAdapter init(int c_in, int c_out, int atom_count, ActivationPolicy activation,
                              Rng& rng, bool apply_before_attention = true,
                              float ws_scale = 0.02f, float dict_scale = 0.0f);

    int c_in() const { return w_s.dim(0); }
    int atom_count() const { return w_s.dim(1); }
    int c_out() const { return dict.dim(1); }

    void set_trainable(bool train_w_s, bool train_dict);
    std::vector<NamedParam> params(const std::string& prefix = "adapter") const;
};

struct AdapterOut {
    Tensor delta_o;           // N x C_o
    Tensor coeffs;            // N x M, the activation's output (sparse codes)
    Tensor effective_coeffs;  // N x M, the codes multiplying dictionary rows
                              // (A-mixed in the before-attention form)
};

// attn_map must have rows summing to 1 (any head map, or an explicit mix).
AdapterOut adapter_forward(const SparseAdapter& adapter, const Tensor& x, const Tensor& attn_map);

// Pre-trained output plus the adapter's update, sharing one attention-map
// computation. Uses the mean of head maps as the adapter's mixing map when
// the layer has several heads.
struct AdaptedOut {
    Tensor output;  // N x C_o
    AdapterOut adapter;
    Tensor base_output;
};
AdaptedOut adapted_attention_forward(const AttentionLayer& layer, const SparseAdapter& adapter,
                                     const Tensor& x);

// delta_O recomputed with coefficient columns outside `keep` zeroed.
// Operates on effective coefficients, so it is exact for both forms.
Tensor select_atoms_delta(const SparseAdapter& adapter, const Tensor& effective_coeffs,
                          const std::vector<int>& keep);

// Keeps the `count` atoms of largest mean |coefficient| column mass
// (ties toward the lower index).
Tensor select_atoms_delta_top(const SparseAdapter& adapter, const Tensor& effective_coeffs,
                              int count);

// Column ranking used by select_atoms_delta_top; exposed for analysis.
std::vector<int> rank_atoms_by_mass(const Tensor& coeffs);

// Mean |coefficient| per atom column.
std::vector<double> atom_importance(const Tensor& coeffs);

// ---- bundle persistence ----
// Directory layout: w_s.atns, dict.atns, meta.txt (flat key = value lines
// recording atom count, activation, form flag and the shape contract).
void save_adapter_bundle(const std::string& dir, const SparseAdapter& adapter);
SparseAdapter load_adapter_bundle(const std::string& dir);

}  // namespace atoms

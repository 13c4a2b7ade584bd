#pragma once

#include <cstdint>
#include <string>

#include "attention/adapter.hpp"
#include "attention/lora.hpp"

namespace atoms {

enum class SignalHeadKind { Dense, SparseDict };

// Single-attention-block model for masked 1-d signal reconstruction.
// Tokens are time positions; each scalar sample is lifted by a frozen random
// 1 -> 64 projection into the first half of the feature vector, the mask bit
// occupies the second half through its own frozen projection, and a learned
// positional table is added. The head either runs the plain value path
// (Dense) or replaces it with a sparse dictionary product (SparseDict).
// The prediction sums the first 64 output channels per token.
struct SignalModelConfig {
    int length = 64;
    int feature_dim = 128;
    int value_channels = 64;
    int heads = 1;
    SignalHeadKind head_kind = SignalHeadKind::Dense;
    int atom_count = 100;
    ActivationPolicy activation = ActivationPolicy::soft_threshold(0.1f);
    bool apply_before_attention = true;
    int context_count = 0;  // optional 1-of-V conditioning embeddings
    uint64_t init_seed = 0;
};

struct SignalModel {
    SignalModelConfig cfg;
    Tensor input_proj;   // 2 x feature_dim, frozen
    Tensor pos_table;    // length x feature_dim
    AttentionLayer attn;
    SparseAdapter sparse_head;  // meaningful when head_kind == SparseDict
    Tensor context_table;       // context_count x feature_dim, frozen

    static SignalModel init(const SignalModelConfig& cfg);

    struct Out {
        Tensor prediction;       // length x 1
        Tensor features;         // length x feature_dim, the attention-block output
        Tensor codes;            // activation output when a dictionary head/adapter ran
        Tensor effective_codes;  // codes actually multiplying dictionary rows
    };

    // masked/mask are length-64 vectors (1-d tensors). context < 0 disables
    // conditioning. delta_adapter adds a dictionary update to a Dense head;
    // lora replaces targeted projections.
    Out forward(const Tensor& masked, const Tensor& mask, int context = -1,
                const SparseAdapter* delta_adapter = nullptr,
                const LowRankAdapter* lora = nullptr) const;

    // Embedded tokens (before attention); exposed for analysis.
    Tensor embed(const Tensor& masked, const Tensor& mask, int context = -1) const;

    std::vector<NamedParam> base_params() const;  // pos table + attention weights

    void save(const std::string& dir) const;
    static SignalModel load(const std::string& dir);
};

}  // namespace atoms

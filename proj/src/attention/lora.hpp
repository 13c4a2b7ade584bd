#pragma once

#include <optional>

#include "attention/attention.hpp"

namespace atoms {

// Low-rank baseline: each targeted projection W gets an additive update
// W_A W_B with W_A [C_i x r], W_B [r x C_o]. W_B starts at zero so the
// initial update is exactly zero.
struct LowRankAdapter {
    struct FactorPair {
        Tensor a, b;
    };
    std::optional<FactorPair> q, k, v, o;
    int rank = 1;

    struct Targets {
        bool q = false, k = false, v = false, o = false;
    };

    static LowRankAdapter init(const AttentionLayer& layer, int rank, Targets targets, Rng& rng,
                               float a_scale = 0.02f);

    void set_trainable(bool trainable);
    std::vector<NamedParam> params(const std::string& prefix = "lora") const;
};

// Attention forward with every targeted weight W replaced by W + W_A W_B.
// Base weights are read, never written.
Tensor lowrank_adapted_forward(const AttentionLayer& layer, const LowRankAdapter& lora,
                               const Tensor& x);

}  // namespace atoms

#pragma once

#include "train/harness.hpp"

namespace atoms {

// Rank-1 capacity comparison: a dictionary update with one active atom per
// token against a rank-1 low-rank update on the value projection. Both
// fine-tune on one fixed band-limited target presented under training
// context 0; evaluation probes the remaining context embeddings.
struct DuelConfig {
    uint64_t seed = 0;
    int contexts = 5;
    int atom_count = 32;
    FourierTaskSpec low_band{64, 5, 0, 24, 16, 0};
    FourierTaskSpec high_band{64, 5, 25, 32, 16, 0};
    TrainConfig pretrain;
    TrainConfig finetune;
};

struct DuelOutcome {
    double sparse_train_loss = 0.0;   // training-context reconstruction
    double lowrank_train_loss = 0.0;
    std::vector<double> sparse_probe;  // per perturbed context
    std::vector<double> lowrank_probe;
    double sparse_probe_mean = 0.0;
    double lowrank_probe_mean = 0.0;
    // variance of adapter coefficients across contexts, summed over entries
    double sparse_coeff_variance = 0.0;
    double lowrank_coeff_variance = 0.0;
    // every probe row keeps at most one nonzero code (top-1 contract)
    bool sparse_support_ok = true;
};

DuelOutcome stability_duel(const DuelConfig& cfg);

}  // namespace atoms

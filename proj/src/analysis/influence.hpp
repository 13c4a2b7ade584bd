#pragma once

#include "tasks/digits.hpp"
#include "tasks/vae.hpp"
#include "train/harness.hpp"

namespace atoms {

// Signed output-space delta contributed by one atom: the decoder is run with
// the dictionary update restricted to that atom, minus the no-adapter output.
struct AtomInfluence {
    int layer = 0;  // 1-based decoder layer index
    int atom = 0;
    double importance = 0.0;  // mean |coefficient| over tokens
    Tensor map;               // 28 x 28 signed pixel delta
};

struct InfluenceReport {
    std::vector<AtomInfluence> atoms;  // atoms above the importance floor, both layers
    Tensor combined_layer1;            // all layer-1 atoms on, layer 2 off
    Tensor combined_layer2;
    Tensor full_map;                   // both adapters on
    // mean |sum of single-atom maps - full map|; reported, not asserted,
    // since the decoder is nonlinear downstream of the update
    double additivity_gap = 0.0;
};

// Influence maps are computed at the frozen encoder's posterior mean for the
// given input image.
InfluenceReport atom_influence(const DigitVae& vae, const SparseAdapter& dec1,
                               const SparseAdapter& dec2, const Tensor& image,
                               double importance_floor = 1e-4);

// Per-atom share of the total |delta O| mass over a dataset, measured at the
// adapted layers: mass_m = sum over samples and tokens of |coeff| * ||d_m||_1.
struct AtomMassReport {
    std::vector<double> mass;  // layer-1 atoms then layer-2 atoms
    double total = 0.0;
    // smallest number of atoms (sorted by mass) covering the given share
    int atoms_for_share(double share) const;
};

AtomMassReport atom_mass_over_dataset(const DigitVae& vae, const SparseAdapter& dec1,
                                      const SparseAdapter& dec2, const DigitDataset& data,
                                      const TrainConfig& cfg, uint64_t noise_stream = 0x00e0a1);

}  // namespace atoms

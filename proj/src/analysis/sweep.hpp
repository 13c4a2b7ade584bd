#pragma once

#include <string>

#include "train/harness.hpp"

namespace atoms {

struct SweepPoint {
    double axis_value = 0.0;
    double eval_loss = 0.0;      // fine-tuned loss on the target band
    double transfer_loss = 0.0;  // same adapter evaluated on a shifted band
    double density = 0.0;
};

struct SweepResult {
    std::string axis;  // "m" or "rho"
    std::vector<SweepPoint> points;
};

// Fine-tunes a dictionary update on `high` per axis value against a shared
// frozen pre-trained model, reporting fit and band-shift transfer. Trends are
// reported, not asserted.
SweepResult ablation_sweep(const std::string& axis, const std::vector<double>& values,
                           SignalModel& pretrained, const FourierTaskSpec& high,
                           const FourierTaskSpec& transfer, const TrainConfig& base_cfg);

// Pinned column order: axis_value, eval_loss, transfer_loss, density.
void write_sweep_csv(const SweepResult& result, const std::string& path);

}  // namespace atoms

#pragma once

#include <map>
#include <string>

#include "tasks/digits.hpp"
#include "tasks/fourier.hpp"
#include "tasks/signal_model.hpp"
#include "tasks/vae.hpp"
#include "train/config.hpp"
#include "train/optim.hpp"

namespace atoms {

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    double density = 0.0;
};

struct RunReport {
    std::vector<EpochRow> history;
    double initial_eval = 0.0;  // before any update
    double final_eval = 0.0;
    double final_train = 0.0;
    int64_t trainable_param_count = 0;
    bool diverged = false;
    // mean |coefficient| per atom at final evaluation, one entry per adapted layer
    std::vector<std::vector<double>> layer_atom_usage;
    std::map<std::string, double> metrics;

    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

struct SignalDataset {
    Tensor masked, mask, target;  // count x length
    int count() const { return masked.defined() ? masked.dim(0) : 0; }
};

SignalDataset make_signal_dataset(const FourierTaskSpec& spec, int count);

ActivationPolicy activation_from_train_config(const TrainConfig& cfg);
AdamConfig adam_from_train_config(const TrainConfig& cfg);

// Mean reconstruction MSE over a dataset; optionally reports the mean code
// density and accumulates per-atom usage.
double eval_signal(const SignalModel& model, const SignalDataset& ds,
                   const SparseAdapter* delta = nullptr, const LowRankAdapter* lora = nullptr,
                   int context = -1, double* density_out = nullptr,
                   std::vector<double>* atom_usage_out = nullptr);

// Lower-level loop shared by the protocol ops and the bespoke analyses.
struct SignalTrainSetup {
    std::vector<NamedParam> trainables;
    std::vector<Tensor> penalized_dicts;
    const SparseAdapter* delta = nullptr;
    const LowRankAdapter* lora = nullptr;
    int context = -1;
    std::vector<int> per_sample_context;  // overrides context when nonempty
};

RunReport run_signal_training(SignalModel& model, const SignalDataset& train,
                              const SignalDataset& eval_set, const TrainConfig& cfg,
                              const SignalTrainSetup& setup);

// Joint training of the whole model (FullModel policy) on the given band.
RunReport pretrain_signal(const FourierTaskSpec& spec, SignalModel& model, const TrainConfig& cfg);

struct SignalFinetuneResult {
    RunReport report;
    // Defined when the base model was Dense: the attached dictionary update.
    SparseAdapter delta_adapter;
    bool used_delta = false;
};

// Base weights (attention maps, positions, embeddings) stay frozen. On a
// SparseDict model the policy tunes the dictionary head in place; on a Dense
// model a zero-initialized dictionary update is attached and trained.
SignalFinetuneResult finetune_signal(const FourierTaskSpec& spec, SignalModel& model,
                                     FreezePolicy policy, const TrainConfig& cfg);

// Denoising pretraining: corrupt with clipped Gaussian noise, reconstruct the
// clean image; loss = recon MSE + kl_weight * KL.
RunReport pretrain_vae(const DigitDataset& data, DigitVae& vae, const TrainConfig& cfg);

struct VaeFinetuneResult {
    RunReport report;
    SparseAdapter dec1, dec2;
};

// Frozen VAE, one dictionary per decoder attention layer, trained on the
// target-class denoising task. initial_eval doubles as the frozen-model
// baseline because the adapters start as exact no-ops.
VaeFinetuneResult finetune_vae_dictionary(const DigitDataset& data, DigitVae& vae, int atom_count,
                                          const TrainConfig& cfg);

// Mean denoising reconstruction MSE of the (possibly adapted) VAE.
double eval_vae_denoise(const DigitVae& vae, const DigitDataset& data, const TrainConfig& cfg,
                        uint64_t noise_stream, const DigitVae::AdapterHooks& hooks = {},
                        std::vector<double>* usage1 = nullptr,
                        std::vector<double>* usage2 = nullptr, double* density_out = nullptr);

int64_t count_params(const std::vector<NamedParam>& params);

}  // namespace atoms

#include "analysis/duel.hpp"

#include <cmath>

namespace atoms {

namespace {

Tensor tensor_row(const Tensor& t, int i) {
    int len = t.dim(1);
    std::vector<float> v(t.data().begin() + static_cast<size_t>(i) * len,
                         t.data().begin() + static_cast<size_t>(i + 1) * len);
    return Tensor::from_data({len}, std::move(v));
}

double context_loss(const SignalModel& model, const SignalDataset& ds, int context,
                    const SparseAdapter* delta, const LowRankAdapter* lora,
                    Tensor* codes_out = nullptr) {
    SignalModel::Out out = model.forward(tensor_row(ds.masked, 0), tensor_row(ds.mask, 0), context,
                                         delta, lora);
    Tensor target = reshape(tensor_row(ds.target, 0), {model.cfg.length, 1});
    Tensor diff = subtract(out.prediction, target);
    if (codes_out) *codes_out = out.codes;
    return mean(hadamard(diff, diff)).value();
}

// Sum over entries of the variance across contexts.
double entry_variance(const std::vector<Tensor>& per_context) {
    if (per_context.empty()) return 0.0;
    size_t n = per_context[0].data().size();
    double total = 0.0;
    for (size_t e = 0; e < n; ++e) {
        double mean = 0.0;
        for (const auto& t : per_context) mean += t.data()[e];
        mean /= static_cast<double>(per_context.size());
        double var = 0.0;
        for (const auto& t : per_context) {
            double d = t.data()[e] - mean;
            var += d * d;
        }
        total += var / static_cast<double>(per_context.size());
    }
    return total;
}

}  // namespace

DuelOutcome stability_duel(const DuelConfig& cfg) {
    if (cfg.contexts < 2) throw ContractError("duel: need at least one probe context");

    SignalModelConfig mc;
    mc.head_kind = SignalHeadKind::Dense;
    mc.context_count = cfg.contexts;
    mc.init_seed = Rng(cfg.seed).fork(11).next_u64();
    SignalModel model = SignalModel::init(mc);

    // Pretraining sees every context so none of them is novel later.
    FourierTaskSpec low_train = cfg.low_band;
    low_train.seed = Rng(cfg.seed).fork(12).next_u64();
    FourierTaskSpec low_eval = cfg.low_band;
    low_eval.seed = Rng(cfg.seed).fork(13).next_u64();
    SignalDataset pre_train = make_signal_dataset(low_train, cfg.pretrain.train_count);
    SignalDataset pre_eval = make_signal_dataset(low_eval, cfg.pretrain.eval_count);

    SignalTrainSetup pre_setup;
    pre_setup.trainables = model.base_params();
    pre_setup.context = 0;
    pre_setup.per_sample_context.resize(static_cast<size_t>(pre_train.count()));
    for (int i = 0; i < pre_train.count(); ++i)
        pre_setup.per_sample_context[static_cast<size_t>(i)] = i % cfg.contexts;
    run_signal_training(model, pre_train, pre_eval, cfg.pretrain, pre_setup);

    // One fixed target, fixed mask, training context 0.
    FourierTaskSpec target_spec = cfg.high_band;
    target_spec.seed = Rng(cfg.seed).fork(14).next_u64();
    SignalDataset target = make_signal_dataset(target_spec, 1);

    model.pos_table.set_requires_grad(false);
    model.attn.set_frozen(true);

    // Dictionary side: top-1 codes, trained coefficients and atoms.
    Rng sparse_rng = Rng(cfg.seed).fork(15);
    SparseAdapter sparse = SparseAdapter::init(model.cfg.feature_dim, model.cfg.feature_dim,
                                               cfg.atom_count, ActivationPolicy::top_k(1),
                                               sparse_rng, true);
    sparse.set_trainable(true, true);
    {
        SignalTrainSetup setup;
        setup.trainables = sparse.params("adapter");
        setup.delta = &sparse;
        setup.penalized_dicts.push_back(sparse.dict);
        setup.context = 0;
        run_signal_training(model, target, target, cfg.finetune, setup);
    }

    // Low-rank side: rank 1 on the value projection.
    Rng lora_rng = Rng(cfg.seed).fork(16);
    LowRankAdapter::Targets targets;
    targets.v = true;
    LowRankAdapter lora = LowRankAdapter::init(model.attn, 1, targets, lora_rng);
    lora.set_trainable(true);
    {
        SignalTrainSetup setup;
        setup.trainables = lora.params("lora");
        setup.lora = &lora;
        setup.context = 0;
        run_signal_training(model, target, target, cfg.finetune, setup);
    }

    DuelOutcome out;
    std::vector<Tensor> sparse_codes, lora_coeffs;

    Tensor codes0;
    out.sparse_train_loss = context_loss(model, target, 0, &sparse, nullptr, &codes0);
    out.lowrank_train_loss = context_loss(model, target, 0, nullptr, &lora);
    sparse_codes.push_back(codes0);
    lora_coeffs.push_back(matmul(model.embed(tensor_row(target.masked, 0),
                                             tensor_row(target.mask, 0), 0),
                                 lora.v->a.detached_copy()));

    for (int c = 1; c < cfg.contexts; ++c) {
        Tensor codes;
        double ls = context_loss(model, target, c, &sparse, nullptr, &codes);
        double ll = context_loss(model, target, c, nullptr, &lora);
        out.sparse_probe.push_back(ls);
        out.lowrank_probe.push_back(ll);
        out.sparse_probe_mean += ls;
        out.lowrank_probe_mean += ll;
        sparse_codes.push_back(codes);
        lora_coeffs.push_back(matmul(model.embed(tensor_row(target.masked, 0),
                                                 tensor_row(target.mask, 0), c),
                                     lora.v->a.detached_copy()));
        // top-1 contract: at most one nonzero code per token row
        for (int t = 0; t < codes.dim(0); ++t) {
            int nonzero = 0;
            for (int m = 0; m < codes.dim(1); ++m)
                if (codes.at(t, m) != 0.0f) ++nonzero;
            if (nonzero > 1) out.sparse_support_ok = false;
        }
    }
    out.sparse_probe_mean /= static_cast<double>(cfg.contexts - 1);
    out.lowrank_probe_mean /= static_cast<double>(cfg.contexts - 1);
    out.sparse_coeff_variance = entry_variance(sparse_codes);
    out.lowrank_coeff_variance = entry_variance(lora_coeffs);
    return out;
}

}  // namespace atoms

#include "train/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace atoms {

void RunReport::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report csv: " + path);
    os << "epoch,train_loss,eval_loss,density\n";
    char buf[160];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", row.epoch, row.train_loss,
                      row.eval_loss, row.density);
        os << buf;
    }
}

void RunReport::write_json(const std::string& path) const {
    nlohmann::json j;
    j["epochs"] = history.size();
    j["initial_eval"] = initial_eval;
    j["final_eval"] = final_eval;
    j["final_train"] = final_train;
    j["trainable_params"] = trainable_param_count;
    j["diverged"] = diverged;
    j["metrics"] = metrics;
    j["atom_usage"] = layer_atom_usage;
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report json: " + path);
    os << j.dump(2) << "\n";
}

SignalDataset make_signal_dataset(const FourierTaskSpec& spec, int count) {
    FourierBatch batch = gen_fourier_batch(spec, count);
    return SignalDataset{batch.masked, batch.mask, batch.target};
}

ActivationPolicy activation_from_train_config(const TrainConfig& cfg) {
    if (cfg.activation == "top_k") {
        int k = cfg.k;
        if (cfg.rho > 0.0f)
            k = std::max(1, static_cast<int>(std::lround(cfg.rho * cfg.dict_size)));
        return ActivationPolicy::top_k(std::min(k, cfg.dict_size));
    }
    return activation_from_name(cfg.activation, cfg.lambda, cfg.k);
}

AdamConfig adam_from_train_config(const TrainConfig& cfg) {
    AdamConfig a;
    a.lr = cfg.lr;
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a.eps = cfg.eps;
    a.weight_decay = cfg.weight_decay;
    a.decoupled = cfg.optimizer == "adamw";
    return a;
}

int64_t count_params(const std::vector<NamedParam>& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params) {
        (void)name;
        n += t.numel();
    }
    return n;
}

namespace {

Tensor dataset_row(const Tensor& t, int i) {
    int len = t.dim(1);
    std::vector<float> v(t.data().begin() + static_cast<size_t>(i) * len,
                         t.data().begin() + static_cast<size_t>(i + 1) * len);
    return Tensor::from_data({len}, std::move(v));
}

Tensor signal_sample_loss(const SignalModel& model, const SignalDataset& ds, int i,
                          const SparseAdapter* delta, const LowRankAdapter* lora, int context,
                          SignalModel::Out* out_opt = nullptr) {
    SignalModel::Out out =
        model.forward(dataset_row(ds.masked, i), dataset_row(ds.mask, i), context, delta, lora);
    Tensor target = reshape(dataset_row(ds.target, i), {model.cfg.length, 1});
    Tensor diff = subtract(out.prediction, target);
    if (out_opt) *out_opt = out;
    return mean(hadamard(diff, diff));
}

std::vector<NamedParam> trainable_subset(const std::vector<NamedParam>& params) {
    std::vector<NamedParam> out;
    for (const auto& p : params)
        if (p.second.requires_grad()) out.push_back(p);
    return out;
}

}  // namespace

RunReport run_signal_training(SignalModel& model, const SignalDataset& train,
                              const SignalDataset& eval_set, const TrainConfig& cfg,
                              const SignalTrainSetup& setup) {
    if (!setup.per_sample_context.empty() &&
        setup.per_sample_context.size() != static_cast<size_t>(train.count()))
        throw ContractError("training: per-sample context list does not match the dataset");

    RunReport report;
    report.trainable_param_count = count_params(setup.trainables);
    double density = 0.0;
    report.initial_eval =
        eval_signal(model, eval_set, setup.delta, setup.lora, setup.context, &density);

    Adam opt(adam_from_train_config(cfg));
    Rng order_rng = Rng(cfg.seed).fork(0xba7c4u);
    std::vector<int> order(static_cast<size_t>(train.count()));
    std::iota(order.begin(), order.end(), 0);
    auto context_of = [&setup](int sample) {
        return setup.per_sample_context.empty() ? setup.context
                                                : setup.per_sample_context[static_cast<size_t>(sample)];
    };

    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            for (size_t i = 0; i + 1 < order.size(); ++i) {
                size_t j = i + order_rng.below(order.size() - i);
                std::swap(order[i], order[j]);
            }
            double epoch_loss = 0.0;
            int batches = 0;
            for (int start = 0; start < train.count(); start += cfg.batch_size) {
                int stop = std::min(train.count(), start + cfg.batch_size);
                Tensor loss;
                for (int b = start; b < stop; ++b) {
                    int idx = order[static_cast<size_t>(b)];
                    Tensor l = signal_sample_loss(model, train, idx, setup.delta, setup.lora,
                                                  context_of(idx));
                    loss = b == start ? l : add(loss, l);
                }
                loss = scale(loss, 1.0f / static_cast<float>(stop - start));
                for (const Tensor& dict : setup.penalized_dicts)
                    if (dict.requires_grad() && cfg.ortho_weight > 0.0f)
                        loss = add(loss, scale(ortho_penalty(dict), cfg.ortho_weight));
                backward(loss);
                if (cfg.clip_norm > 0.0f) clip_global_norm(setup.trainables, cfg.clip_norm);
                opt.step(setup.trainables);
                epoch_loss += loss.value();
                ++batches;
            }
            EpochRow row;
            row.epoch = epoch;
            row.train_loss = batches > 0 ? epoch_loss / batches : 0.0;
            row.eval_loss =
                eval_signal(model, eval_set, setup.delta, setup.lora, setup.context, &density);
            row.density = density;
            report.history.push_back(row);
        }
    } catch (const NumericError&) {
        report.diverged = true;
    }

    std::vector<double> usage;
    report.final_eval = eval_signal(model, eval_set, setup.delta, setup.lora, setup.context,
                                    &density, &usage);
    if (!usage.empty()) report.layer_atom_usage.push_back(usage);
    report.final_train = report.history.empty() ? 0.0 : report.history.back().train_loss;
    return report;
}

double eval_signal(const SignalModel& model, const SignalDataset& ds, const SparseAdapter* delta,
                   const LowRankAdapter* lora, int context, double* density_out,
                   std::vector<double>* atom_usage_out) {
    double total = 0.0;
    double dens = 0.0;
    int dens_count = 0;
    std::vector<double> usage;
    for (int i = 0; i < ds.count(); ++i) {
        SignalModel::Out out;
        Tensor loss = signal_sample_loss(model, ds, i, delta, lora, context, &out);
        total += loss.value();
        if (out.codes.defined()) {
            dens += density(out.codes);
            ++dens_count;
            if (atom_usage_out) {
                std::vector<double> imp = atom_importance(out.effective_codes);
                if (usage.empty()) usage.assign(imp.size(), 0.0);
                for (size_t m = 0; m < imp.size(); ++m) usage[m] += imp[m];
            }
        }
    }
    if (density_out) *density_out = dens_count > 0 ? dens / dens_count : 0.0;
    if (atom_usage_out && !usage.empty()) {
        for (auto& u : usage) u /= std::max(1, ds.count());
        *atom_usage_out = usage;
    }
    return ds.count() > 0 ? total / ds.count() : 0.0;
}

RunReport pretrain_signal(const FourierTaskSpec& spec, SignalModel& model, const TrainConfig& cfg) {
    FourierTaskSpec train_spec = spec;
    train_spec.seed = Rng(spec.seed).fork(1).next_u64();
    FourierTaskSpec eval_spec = spec;
    eval_spec.seed = Rng(spec.seed).fork(2).next_u64();
    SignalDataset train = make_signal_dataset(train_spec, cfg.train_count);
    SignalDataset eval_set = make_signal_dataset(eval_spec, cfg.eval_count);

    SignalTrainSetup setup;
    model.pos_table.set_requires_grad(true);
    model.attn.set_frozen(false);
    if (model.cfg.head_kind == SignalHeadKind::SparseDict) {
        model.sparse_head.set_trainable(true, true);
        setup.penalized_dicts.push_back(model.sparse_head.dict);
        // The dictionary head replaces the value path entirely.
        model.attn.w_v.set_requires_grad(false);
        model.attn.w_o.set_requires_grad(false);
    }
    std::vector<NamedParam> params = model.base_params();
    if (model.cfg.head_kind == SignalHeadKind::SparseDict)
        for (auto& p : model.sparse_head.params("dict_head")) params.push_back(p);
    setup.trainables = trainable_subset(params);

    return run_signal_training(model, train, eval_set, cfg, setup);
}

SignalFinetuneResult finetune_signal(const FourierTaskSpec& spec, SignalModel& model,
                                     FreezePolicy policy, const TrainConfig& cfg) {
    if (policy == FreezePolicy::FullModel)
        throw ContractError("finetune: FullModel policy is reserved for pretraining");

    FourierTaskSpec train_spec = spec;
    train_spec.seed = Rng(spec.seed).fork(3).next_u64();
    FourierTaskSpec eval_spec = spec;
    eval_spec.seed = Rng(spec.seed).fork(4).next_u64();
    SignalDataset train = make_signal_dataset(train_spec, cfg.train_count);
    SignalDataset eval_set = make_signal_dataset(eval_spec, cfg.eval_count);

    // Freeze the pre-trained trunk.
    model.pos_table.set_requires_grad(false);
    model.attn.set_frozen(true);

    SignalFinetuneResult result;
    SignalTrainSetup setup;
    bool train_w_s = policy != FreezePolicy::AtomsOnly;
    bool train_dict = policy != FreezePolicy::CoefficientsOnly;

    if (model.cfg.head_kind == SignalHeadKind::SparseDict) {
        model.sparse_head.set_trainable(train_w_s, train_dict);
        setup.penalized_dicts.push_back(model.sparse_head.dict);
        setup.trainables = trainable_subset(model.sparse_head.params("dict_head"));
    } else {
        Rng rng = Rng(cfg.seed).fork(0xada9u);
        result.delta_adapter = SparseAdapter::init(
            model.cfg.feature_dim, model.cfg.feature_dim, cfg.dict_size,
            activation_from_train_config(cfg), rng, cfg.apply_before_attention);
        result.delta_adapter.set_trainable(train_w_s, train_dict);
        result.used_delta = true;
        setup.delta = &result.delta_adapter;
        setup.penalized_dicts.push_back(result.delta_adapter.dict);
        setup.trainables = trainable_subset(result.delta_adapter.params("adapter"));
    }

    result.report = run_signal_training(model, train, eval_set, cfg, setup);
    return result;
}

// ---- digit VAE ----

namespace {

Tensor noisy_copy(const Tensor& clean, float sigma, Rng& rng) {
    std::vector<float> v(clean.data());
    for (auto& x : v) x = std::clamp(x + sigma * rng.normal(), 0.0f, 1.0f);
    return Tensor::from_data(clean.shape(), std::move(v));
}

Tensor eps_draw(Rng& rng) {
    std::vector<float> v(DigitVae::kLatent);
    for (auto& x : v) x = rng.normal();
    return Tensor::from_data({1, DigitVae::kLatent}, std::move(v));
}

}  // namespace

double eval_vae_denoise(const DigitVae& vae, const DigitDataset& data, const TrainConfig& cfg,
                        uint64_t noise_stream, const DigitVae::AdapterHooks& hooks,
                        std::vector<double>* usage1, std::vector<double>* usage2,
                        double* density_out) {
    double total = 0.0;
    double dens = 0.0;
    int dens_count = 0;
    std::vector<double> acc1, acc2;
    Tensor eps_zero = Tensor::zeros({1, DigitVae::kLatent});
    for (int i = 0; i < data.count(); ++i) {
        Rng rng = Rng(cfg.seed).fork(noise_stream).fork(static_cast<uint64_t>(i));
        Tensor clean = data.image(i);
        Tensor noisy = noisy_copy(clean, cfg.noise_sigma, rng);
        DigitVae::Forward f = vae.forward(noisy, eps_zero, hooks);
        total += vae_recon_mse(f.recon, clean).value();
        if (f.coeffs1.defined()) {
            dens += density(f.coeffs1);
            ++dens_count;
            if (usage1) {
                std::vector<double> imp = atom_importance(f.coeffs1);
                if (acc1.empty()) acc1.assign(imp.size(), 0.0);
                for (size_t m = 0; m < imp.size(); ++m) acc1[m] += imp[m];
            }
        }
        if (f.coeffs2.defined()) {
            dens += density(f.coeffs2);
            ++dens_count;
            if (usage2) {
                std::vector<double> imp = atom_importance(f.coeffs2);
                if (acc2.empty()) acc2.assign(imp.size(), 0.0);
                for (size_t m = 0; m < imp.size(); ++m) acc2[m] += imp[m];
            }
        }
    }
    int n = std::max(1, data.count());
    if (usage1 && !acc1.empty()) {
        for (auto& u : acc1) u /= n;
        *usage1 = acc1;
    }
    if (usage2 && !acc2.empty()) {
        for (auto& u : acc2) u /= n;
        *usage2 = acc2;
    }
    if (density_out) *density_out = dens_count > 0 ? dens / dens_count : 0.0;
    return data.count() > 0 ? total / data.count() : 0.0;
}

namespace {

struct VaeSplit {
    DigitDataset train, eval;
};

VaeSplit split_dataset(const DigitDataset& data, const TrainConfig& cfg) {
    if (data.count() < cfg.train_count + cfg.eval_count)
        throw ContractError("vae: dataset has " + std::to_string(data.count()) +
                            " images, need " + std::to_string(cfg.train_count + cfg.eval_count));
    VaeSplit split;
    std::vector<float> px_train, px_eval;
    const auto& d = data.images.data();
    for (int i = 0; i < cfg.train_count; ++i) {
        px_train.insert(px_train.end(), d.begin() + static_cast<size_t>(i) * 784,
                        d.begin() + static_cast<size_t>(i + 1) * 784);
        split.train.labels.push_back(data.labels[static_cast<size_t>(i)]);
    }
    for (int i = cfg.train_count; i < cfg.train_count + cfg.eval_count; ++i) {
        px_eval.insert(px_eval.end(), d.begin() + static_cast<size_t>(i) * 784,
                       d.begin() + static_cast<size_t>(i + 1) * 784);
        split.eval.labels.push_back(data.labels[static_cast<size_t>(i)]);
    }
    split.train.images = Tensor::from_data({cfg.train_count, 28, 28}, std::move(px_train));
    split.eval.images = Tensor::from_data({cfg.eval_count, 28, 28}, std::move(px_eval));
    return split;
}

struct VaeTrainSetup {
    std::vector<NamedParam> trainables;
    std::vector<Tensor> penalized_dicts;
    DigitVae::AdapterHooks hooks;
    bool include_kl = true;
};

RunReport run_vae_training(DigitVae& vae, const DigitDataset& train, const DigitDataset& eval_set,
                           const TrainConfig& cfg, const VaeTrainSetup& setup) {
    RunReport report;
    report.trainable_param_count = count_params(setup.trainables);
    double density = 0.0;
    report.initial_eval = eval_vae_denoise(vae, eval_set, cfg, 0x00e0a1, setup.hooks, nullptr,
                                           nullptr, &density);

    Adam opt(adam_from_train_config(cfg));
    Rng epoch_rng = Rng(cfg.seed).fork(0x7a11);
    std::vector<int> order(static_cast<size_t>(train.count()));
    std::iota(order.begin(), order.end(), 0);

    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            Rng noise_rng = epoch_rng.fork(static_cast<uint64_t>(epoch));
            for (size_t i = 0; i + 1 < order.size(); ++i) {
                size_t j = i + noise_rng.below(order.size() - i);
                std::swap(order[i], order[j]);
            }
            double epoch_loss = 0.0;
            int batches = 0;
            for (int start = 0; start < train.count(); start += cfg.batch_size) {
                int stop = std::min(train.count(), start + cfg.batch_size);
                Tensor loss;
                for (int b = start; b < stop; ++b) {
                    int idx = order[static_cast<size_t>(b)];
                    Tensor clean = train.image(idx);
                    Tensor noisy = noisy_copy(clean, cfg.noise_sigma, noise_rng);
                    DigitVae::Forward f = vae.forward(noisy, eps_draw(noise_rng), setup.hooks);
                    Tensor l = vae_recon_mse(f.recon, clean);
                    if (setup.include_kl && cfg.kl_weight > 0.0f)
                        l = add(l, scale(vae_kl(f.mu, f.logvar), cfg.kl_weight));
                    loss = b == start ? l : add(loss, l);
                }
                loss = scale(loss, 1.0f / static_cast<float>(stop - start));
                for (const Tensor& dict : setup.penalized_dicts)
                    if (dict.requires_grad() && cfg.ortho_weight > 0.0f)
                        loss = add(loss, scale(ortho_penalty(dict), cfg.ortho_weight));
                backward(loss);
                if (cfg.clip_norm > 0.0f) clip_global_norm(setup.trainables, cfg.clip_norm);
                opt.step(setup.trainables);
                epoch_loss += loss.value();
                ++batches;
            }
            EpochRow row;
            row.epoch = epoch;
            row.train_loss = batches > 0 ? epoch_loss / batches : 0.0;
            row.eval_loss = eval_vae_denoise(vae, eval_set, cfg, 0x00e0a1, setup.hooks, nullptr,
                                             nullptr, &density);
            row.density = density;
            report.history.push_back(row);
        }
    } catch (const NumericError&) {
        report.diverged = true;
    }

    std::vector<double> usage1, usage2;
    report.final_eval = eval_vae_denoise(vae, eval_set, cfg, 0x00e0a1, setup.hooks, &usage1,
                                         &usage2, &density);
    if (!usage1.empty()) report.layer_atom_usage.push_back(usage1);
    if (!usage2.empty()) report.layer_atom_usage.push_back(usage2);
    report.final_train = report.history.empty() ? 0.0 : report.history.back().train_loss;
    return report;
}

}  // namespace

RunReport pretrain_vae(const DigitDataset& data, DigitVae& vae, const TrainConfig& cfg) {
    VaeSplit split = split_dataset(data, cfg);
    vae.set_frozen(false);
    VaeTrainSetup setup;
    setup.trainables = trainable_subset(vae.params());
    setup.include_kl = true;
    return run_vae_training(vae, split.train, split.eval, cfg, setup);
}

VaeFinetuneResult finetune_vae_dictionary(const DigitDataset& data, DigitVae& vae, int atom_count,
                                          const TrainConfig& cfg) {
    VaeSplit split = split_dataset(data, cfg);
    vae.set_frozen(true);

    VaeFinetuneResult result;
    Rng rng = Rng(cfg.seed).fork(0xd1c7);
    TrainConfig acfg = cfg;
    acfg.dict_size = atom_count;
    ActivationPolicy act = activation_from_train_config(acfg);
    Rng rng1 = rng.fork(1), rng2 = rng.fork(2);
    result.dec1 = SparseAdapter::init(DigitVae::kWidth, DigitVae::kWidth, atom_count, act, rng1,
                                      cfg.apply_before_attention);
    result.dec2 = SparseAdapter::init(DigitVae::kWidth, DigitVae::kWidth, atom_count, act, rng2,
                                      cfg.apply_before_attention);
    result.dec1.set_trainable(true, true);
    result.dec2.set_trainable(true, true);

    VaeTrainSetup setup;
    setup.hooks.dec1 = &result.dec1;
    setup.hooks.dec2 = &result.dec2;
    setup.penalized_dicts = {result.dec1.dict, result.dec2.dict};
    setup.include_kl = false;  // encoder frozen, the KL term is constant
    std::vector<NamedParam> params = result.dec1.params("dec1_adapter");
    for (auto& p : result.dec2.params("dec2_adapter")) params.push_back(p);
    setup.trainables = trainable_subset(params);

    result.report = run_vae_training(vae, split.train, split.eval, cfg, setup);
    return result;
}

}  // namespace atoms

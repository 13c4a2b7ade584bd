#include "cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include <json.hpp>

#include "analysis/cost.hpp"
#include "analysis/duel.hpp"
#include "analysis/expansion.hpp"
#include "analysis/influence.hpp"
#include "analysis/sweep.hpp"
#include "train/harness.hpp"

namespace atoms {

namespace {

namespace fs = std::filesystem;

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot checksum: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!is) break;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    // Probe writability before doing any compute.
    std::string probe = out_dir + "/.write_probe";
    {
        std::ofstream os(probe);
        if (!os) throw IoError("output directory is not writable: " + out_dir);
    }
    fs::remove(probe, ec);
}

void require_exists(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

// Config echo + seed + format versions + output checksums.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const KeyValueConfig& cfg, uint64_t seed,
                    const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = cfg.entries();
    j["format_versions"] = {{"tensor", 1}, {"report_csv", 1}};
    nlohmann::json files = nlohmann::json::object();
    for (const auto& name : outputs)
        files[name] = "fnv1a:" + hex64(fnv1a_file(out_dir + "/" + name));
    j["outputs"] = files;
    std::ofstream os(out_dir + "/manifest.json");
    if (!os) throw IoError("cannot write manifest in " + out_dir);
    os << j.dump(2) << "\n";
}

FourierTaskSpec fourier_from_config(KeyValueConfig& cfg, const char* prefix, uint64_t seed,
                                    int band_low_default, int band_high_default) {
    std::string p(prefix);
    FourierTaskSpec spec;
    spec.length = cfg.get_int(p + "length", 64);
    spec.num_bases = cfg.get_int(p + "num_bases", 5);
    spec.band_low = cfg.get_int(p + "band_low", band_low_default);
    spec.band_high = cfg.get_int(p + "band_high", band_high_default);
    spec.mask_observed = cfg.get_int(p + "mask_observed", 16);
    spec.seed = seed;
    spec.validate();
    return spec;
}

std::vector<int> default_pretrain_classes() { return {5, 6, 7, 8, 9}; }

}  // namespace

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const ConfigError&) {
        return 2;
    } catch (const ContractError&) {
        return 2;
    } catch (const IoError&) {
        return 4;
    } catch (const FormatError&) {
        return 4;
    } catch (const NumericError&) {
        return 3;
    } catch (const std::exception&) {
        return 3;
    }
}

// ---- gen-data ----

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<uint64_t> seed_override) {
    KeyValueConfig cfg = KeyValueConfig::parse_file(config_path);
    std::string kind = cfg.get_str("kind");
    uint64_t seed = seed_override.value_or(cfg.get_u64("seed", 0));

    std::vector<std::string> outputs;
    if (kind == "fourier") {
        int count = cfg.get_int("count", 64);
        if (count < 0) throw ConfigError("count must be nonnegative");
        FourierTaskSpec spec = fourier_from_config(cfg, "", seed, 0, 24);
        cfg.reject_unknown();
        ensure_out_dir(out_dir);
        FourierBatch batch = gen_fourier_batch(spec, count);
        if (count > 0) {
            save_tensor(out_dir + "/target.atns", batch.target);
            save_tensor(out_dir + "/mask.atns", batch.mask);
            save_tensor(out_dir + "/masked.atns", batch.masked);
            outputs = {"target.atns", "mask.atns", "masked.atns"};
        }
    } else if (kind == "digits") {
        int count = cfg.get_int("count", 64);
        if (count < 0) throw ConfigError("count must be nonnegative");
        std::vector<int> classes = cfg.get_int_list("classes", default_pretrain_classes());
        cfg.reject_unknown();
        ensure_out_dir(out_dir);
        DigitDataset ds = synth_digits(seed, count, classes);
        save_digit_dataset(out_dir, ds);
        outputs = {"labels.txt"};
        if (count > 0) outputs.push_back("images.atns");
    } else {
        throw ConfigError("gen-data kind must be fourier or digits");
    }

    write_manifest(out_dir, "gen-data", cfg, seed, outputs);
    return 0;
}

// ---- run ----

namespace {

int run_signal_pretrain(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.seed = seed;
    FourierTaskSpec spec = fourier_from_config(cfg, "", Rng(seed).fork(1).next_u64(), 0, 24);
    std::string head = cfg.get_str("head", "sparse_dict");
    int heads = cfg.get_int("heads", 1);
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    SignalModelConfig mc;
    mc.length = spec.length;
    mc.heads = heads;
    mc.head_kind = head == "dense" ? SignalHeadKind::Dense : SignalHeadKind::SparseDict;
    mc.atom_count = tc.dict_size;
    mc.activation = activation_from_train_config(tc);
    mc.apply_before_attention = tc.apply_before_attention;
    mc.init_seed = Rng(seed).fork(2).next_u64();
    SignalModel model = SignalModel::init(mc);

    RunReport report = pretrain_signal(spec, model, tc);
    report.write_csv(out_dir + "/history.csv");
    report.write_json(out_dir + "/summary.json");
    model.save(out_dir + "/snapshot");
    write_manifest(out_dir, "run", cfg, seed, {"history.csv", "summary.json"});
    return report.diverged ? 3 : 0;
}

int run_signal_finetune(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.seed = seed;
    std::string snapshot = cfg.get_str("snapshot_in");
    FourierTaskSpec spec = fourier_from_config(cfg, "", Rng(seed).fork(3).next_u64(), 25, 32);
    FreezePolicy policy = freeze_policy_from_name(cfg.get_str("policy", "atoms_only"));
    cfg.reject_unknown();
    require_exists(snapshot + "/meta.txt", "model snapshot");
    ensure_out_dir(out_dir);

    SignalModel model = SignalModel::load(snapshot);
    SignalFinetuneResult result = finetune_signal(spec, model, policy, tc);
    result.report.write_csv(out_dir + "/history.csv");
    result.report.write_json(out_dir + "/summary.json");
    model.save(out_dir + "/snapshot");
    std::vector<std::string> outputs{"history.csv", "summary.json"};
    if (result.used_delta) save_adapter_bundle(out_dir + "/adapter", result.delta_adapter);
    write_manifest(out_dir, "run", cfg, seed, outputs);
    return result.report.diverged ? 3 : 0;
}

int run_vae_pretrain(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.seed = seed;
    std::vector<int> classes = cfg.get_int_list("classes", default_pretrain_classes());
    int data_count = cfg.get_int("data_count", tc.train_count + tc.eval_count);
    uint64_t data_seed = cfg.get_u64("data_seed", Rng(seed).fork(4).next_u64());
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    DigitDataset data = synth_digits(data_seed, data_count, classes);
    DigitVae vae = DigitVae::init(Rng(seed).fork(5).next_u64());
    RunReport report = pretrain_vae(data, vae, tc);
    report.write_csv(out_dir + "/history.csv");
    report.write_json(out_dir + "/summary.json");
    vae.save(out_dir + "/snapshot");
    write_manifest(out_dir, "run", cfg, seed, {"history.csv", "summary.json"});
    return report.diverged ? 3 : 0;
}

int run_vae_finetune(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.seed = seed;
    std::string snapshot = cfg.get_str("snapshot_in");
    int target_class = cfg.get_int("target_class", 3);
    int data_count = cfg.get_int("data_count", tc.train_count + tc.eval_count);
    uint64_t data_seed = cfg.get_u64("data_seed", Rng(seed).fork(6).next_u64());
    cfg.reject_unknown();
    require_exists(snapshot + "/meta.txt", "model snapshot");
    ensure_out_dir(out_dir);

    DigitDataset data = synth_digits(data_seed, data_count, {target_class});
    DigitVae vae = DigitVae::load(snapshot);
    VaeFinetuneResult result = finetune_vae_dictionary(data, vae, tc.dict_size, tc);
    result.report.write_csv(out_dir + "/history.csv");
    result.report.write_json(out_dir + "/summary.json");
    save_adapter_bundle(out_dir + "/adapter_dec1", result.dec1);
    save_adapter_bundle(out_dir + "/adapter_dec2", result.dec2);
    write_manifest(out_dir, "run", cfg, seed, {"history.csv", "summary.json"});
    return result.report.diverged ? 3 : 0;
}

}  // namespace

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<uint64_t> seed_override) {
    KeyValueConfig cfg = KeyValueConfig::parse_file(config_path);
    std::string task = cfg.get_str("task");
    uint64_t seed = seed_override.value_or(cfg.get_u64("seed", 0));

    if (task == "signal-pretrain") return run_signal_pretrain(cfg, out_dir, seed);
    if (task == "signal-finetune") return run_signal_finetune(cfg, out_dir, seed);
    if (task == "vae-pretrain") return run_vae_pretrain(cfg, out_dir, seed);
    if (task == "vae-finetune") return run_vae_finetune(cfg, out_dir, seed);
    throw ConfigError("unknown run task: " + task);
}

// ---- analyze ----

namespace {

void write_matrix_csv(const std::string& path, const Tensor& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write csv: " + path);
    char buf[48];
    for (int i = 0; i < m.dim(0); ++i) {
        for (int j = 0; j < m.dim(1); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m.at(i, j)));
            os << buf << (j + 1 < m.dim(1) ? "," : "");
        }
        os << "\n";
    }
}

int analyze_cost(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    int64_t c_in = cfg.get_int("c_in", 1024);
    int64_t c_out = cfg.get_int("c_out", 1024);
    int64_t m = cfg.get_int("dict_size", 256);
    int64_t r = cfg.get_int("rank", 16);
    int64_t n = cfg.get_int("tokens", 1024);
    double rho = cfg.get_double("rho", 0.01);
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    CostReport report = cost_report(c_in, c_out, m, r, n, rho);
    std::ofstream os(out_dir + "/cost.json");
    if (!os) throw IoError("cannot write cost report in " + out_dir);
    os << cost_report_json(report) << "\n";
    os.close();
    write_manifest(out_dir, "analyze cost", cfg, seed, {"cost.json"});
    return 0;
}

struct VaeBundle {
    DigitVae vae;
    SparseAdapter dec1, dec2;
};

VaeBundle load_vae_bundle(KeyValueConfig& cfg) {
    std::string snapshot = cfg.get_str("snapshot_in");
    std::string a1 = cfg.get_str("adapter_dec1");
    std::string a2 = cfg.get_str("adapter_dec2");
    require_exists(snapshot + "/meta.txt", "model snapshot");
    require_exists(a1 + "/meta.txt", "adapter bundle");
    require_exists(a2 + "/meta.txt", "adapter bundle");
    return VaeBundle{DigitVae::load(snapshot), load_adapter_bundle(a1), load_adapter_bundle(a2)};
}

int analyze_influence(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    VaeBundle bundle = load_vae_bundle(cfg);
    int target_class = cfg.get_int("target_class", 3);
    uint64_t data_seed = cfg.get_u64("data_seed", Rng(seed).fork(7).next_u64());
    int mass_count = cfg.get_int("mass_count", 32);
    double noise_sigma = cfg.get_double("noise_sigma", 0.3);
    double floor = cfg.get_double("importance_floor", 1e-4);
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    DigitDataset sample = synth_digits(data_seed, std::max(1, mass_count), {target_class});
    InfluenceReport report =
        atom_influence(bundle.vae, bundle.dec1, bundle.dec2, sample.image(0), floor);

    TrainConfig mass_cfg;
    mass_cfg.seed = seed;
    mass_cfg.noise_sigma = static_cast<float>(noise_sigma);
    AtomMassReport mass =
        atom_mass_over_dataset(bundle.vae, bundle.dec1, bundle.dec2, sample, mass_cfg);

    nlohmann::json j;
    j["additivity_gap"] = report.additivity_gap;
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : report.atoms) {
        nlohmann::json e;
        e["layer"] = a.layer;
        e["atom"] = a.atom;
        e["importance"] = a.importance;
        e["map"] = a.map.data();
        j["atoms"].push_back(std::move(e));
    }
    j["mass"] = mass.mass;
    j["mass_total"] = mass.total;
    j["atoms_for_95_percent"] = mass.atoms_for_share(0.95);
    std::ofstream os(out_dir + "/influence.json");
    if (!os) throw IoError("cannot write influence report in " + out_dir);
    os << j.dump(2) << "\n";
    os.close();

    write_matrix_csv(out_dir + "/combined_layer1.csv", report.combined_layer1);
    write_matrix_csv(out_dir + "/combined_layer2.csv", report.combined_layer2);
    write_matrix_csv(out_dir + "/full_map.csv", report.full_map);
    write_manifest(out_dir, "analyze influence", cfg, seed,
                   {"influence.json", "combined_layer1.csv", "combined_layer2.csv", "full_map.csv"});
    return 0;
}

int analyze_select_atoms(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    VaeBundle bundle = load_vae_bundle(cfg);
    int target_class = cfg.get_int("target_class", 3);
    uint64_t data_seed = cfg.get_u64("data_seed", Rng(seed).fork(8).next_u64());
    std::vector<int> counts = cfg.get_int_list("counts", {4, 12, 40});
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    DigitDataset sample = synth_digits(data_seed, 1, {target_class});
    Tensor z = bundle.vae.encode_mu(sample.image(0)).detached_copy();
    DigitVae::Forward baseline = bundle.vae.decode(z);

    DigitVae::AdapterHooks all;
    all.dec1 = &bundle.dec1;
    all.dec2 = &bundle.dec2;
    DigitVae::Forward full = bundle.vae.decode(z, all);
    std::vector<int> rank1 = rank_atoms_by_mass(full.coeffs1);
    std::vector<int> rank2 = rank_atoms_by_mass(full.coeffs2);

    nlohmann::json j = nlohmann::json::array();
    std::vector<std::string> outputs;
    for (int count : counts) {
        if (count < 0) throw ConfigError("counts must be nonnegative");
        std::vector<int> keep1(rank1.begin(),
                               rank1.begin() + std::min<size_t>(rank1.size(), static_cast<size_t>(count)));
        std::vector<int> keep2(rank2.begin(),
                               rank2.begin() + std::min<size_t>(rank2.size(), static_cast<size_t>(count)));
        DigitVae::AdapterHooks hooks = all;
        hooks.keep1 = &keep1;
        hooks.keep2 = &keep2;
        DigitVae::Forward partial = bundle.vae.decode(z, hooks);

        Tensor delta = Tensor::zeros({28, 28});
        double norm = 0.0;
        for (int a = 0; a < 28; ++a)
            for (int b = 0; b < 28; ++b) {
                float d = partial.recon.at(a, b) - baseline.recon.at(a, b);
                delta.at(a, b) = d;
                norm += std::fabs(d);
            }
        std::string name = "select_" + std::to_string(count) + ".csv";
        write_matrix_csv(out_dir + "/" + name, delta);
        outputs.push_back(name);
        j.push_back({{"count", count}, {"delta_l1", norm}});
    }
    std::ofstream os(out_dir + "/select_atoms.json");
    if (!os) throw IoError("cannot write selection report in " + out_dir);
    os << j.dump(2) << "\n";
    os.close();
    outputs.push_back("select_atoms.json");
    write_manifest(out_dir, "analyze select-atoms", cfg, seed, outputs);
    return 0;
}

int analyze_duel(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    DuelConfig dc;
    dc.seed = seed;
    dc.contexts = cfg.get_int("contexts", 5);
    dc.atom_count = cfg.get_int("dict_size", 32);
    std::vector<int> seeds = cfg.get_int_list("seeds", {0, 1, 2, 3, 4});
    dc.pretrain.epochs = cfg.get_int("pretrain_epochs", 10);
    dc.pretrain.train_count = cfg.get_int("pretrain_count", 96);
    dc.pretrain.eval_count = 32;
    dc.pretrain.lr = static_cast<float>(cfg.get_double("lr", 1e-3));
    dc.finetune.epochs = cfg.get_int("finetune_epochs", 200);
    dc.finetune.train_count = 1;
    dc.finetune.eval_count = 1;
    dc.finetune.batch_size = 1;
    dc.finetune.lr = dc.pretrain.lr;
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    nlohmann::json rows = nlohmann::json::array();
    std::ofstream csv(out_dir + "/duel.csv");
    if (!csv) throw IoError("cannot write duel csv in " + out_dir);
    csv << "seed,sparse_train,lowrank_train,sparse_probe_mean,lowrank_probe_mean,"
           "sparse_coeff_var,lowrank_coeff_var,support_ok\n";
    char buf[256];
    for (int s : seeds) {
        DuelConfig per = dc;
        per.seed = static_cast<uint64_t>(s);
        per.pretrain.seed = per.seed;
        per.finetune.seed = per.seed;
        DuelOutcome o = stability_duel(per);
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", s,
                      o.sparse_train_loss, o.lowrank_train_loss, o.sparse_probe_mean,
                      o.lowrank_probe_mean, o.sparse_coeff_variance, o.lowrank_coeff_variance,
                      o.sparse_support_ok ? 1 : 0);
        csv << buf;
        rows.push_back({{"seed", s},
                        {"sparse_train", o.sparse_train_loss},
                        {"lowrank_train", o.lowrank_train_loss},
                        {"sparse_probe", o.sparse_probe},
                        {"lowrank_probe", o.lowrank_probe},
                        {"sparse_coeff_variance", o.sparse_coeff_variance},
                        {"lowrank_coeff_variance", o.lowrank_coeff_variance},
                        {"support_ok", o.sparse_support_ok}});
    }
    csv.close();
    std::ofstream os(out_dir + "/duel.json");
    if (!os) throw IoError("cannot write duel report in " + out_dir);
    os << rows.dump(2) << "\n";
    os.close();
    write_manifest(out_dir, "analyze duel", cfg, seed, {"duel.csv", "duel.json"});
    return 0;
}

int analyze_expansion(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    int cases = cfg.get_int("cases", 500);
    int two_layer_cases = cfg.get_int("two_layer_cases", 100);
    int max_dim = cfg.get_int("max_dim", 8);
    int max_degree = cfg.get_int("max_degree", 4);
    int max_atoms = cfg.get_int("max_atoms", 4);
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    ExpansionVerifyStats stats =
        run_expansion_verification(cases, two_layer_cases, max_dim, max_degree, max_atoms, seed);

    nlohmann::json j;
    j["cases"] = stats.cases;
    j["two_layer_cases"] = stats.two_layer_cases;
    j["max_residual"] = stats.max_residual;
    j["max_two_layer_residual"] = stats.max_two_layer_residual;
    j["rejection_ok"] = stats.rejection_ok;
    j["max_prev_degree_seen"] = stats.max_prev_degree_seen;
    j["prev_degree_bound_ok"] = stats.prev_degree_bound_ok;
    bool pass = stats.max_residual < 1e-6 && stats.max_two_layer_residual < 1e-6 &&
                stats.rejection_ok && stats.prev_degree_bound_ok;
    j["pass"] = pass;
    std::ofstream os(out_dir + "/expansion.json");
    if (!os) throw IoError("cannot write expansion report in " + out_dir);
    os << j.dump(2) << "\n";
    os.close();
    write_manifest(out_dir, "analyze expansion-verify", cfg, seed, {"expansion.json"});
    return pass ? 0 : 3;
}

int analyze_sweep(KeyValueConfig& cfg, const std::string& out_dir, uint64_t seed) {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.seed = seed;
    std::string axis = cfg.get_str("axis");
    std::vector<double> values = cfg.get_double_list("values");
    std::string snapshot = cfg.get_str("snapshot_in", "");
    FourierTaskSpec low = fourier_from_config(cfg, "low_", Rng(seed).fork(1).next_u64(), 0, 24);
    FourierTaskSpec high = fourier_from_config(cfg, "high_", Rng(seed).fork(2).next_u64(), 25, 32);
    FourierTaskSpec transfer =
        fourier_from_config(cfg, "transfer_", Rng(seed).fork(3).next_u64(), 20, 28);
    cfg.reject_unknown();
    ensure_out_dir(out_dir);

    SignalModel model;
    if (!snapshot.empty()) {
        require_exists(snapshot + "/meta.txt", "model snapshot");
        model = SignalModel::load(snapshot);
    } else {
        SignalModelConfig mc;
        mc.head_kind = SignalHeadKind::Dense;
        mc.init_seed = Rng(seed).fork(9).next_u64();
        model = SignalModel::init(mc);
        pretrain_signal(low, model, tc);
    }

    SweepResult result = ablation_sweep(axis, values, model, high, transfer, tc);
    write_sweep_csv(result, out_dir + "/sweep.csv");
    write_manifest(out_dir, "analyze sweep", cfg, seed, {"sweep.csv"});
    return 0;
}

}  // namespace

int cmd_analyze(const std::string& subcommand, const std::string& config_path,
                const std::string& out_dir, std::optional<uint64_t> seed_override) {
    KeyValueConfig cfg = KeyValueConfig::parse_file(config_path);
    uint64_t seed = seed_override.value_or(cfg.get_u64("seed", 0));

    if (subcommand == "cost") return analyze_cost(cfg, out_dir, seed);
    if (subcommand == "influence") return analyze_influence(cfg, out_dir, seed);
    if (subcommand == "select-atoms") return analyze_select_atoms(cfg, out_dir, seed);
    if (subcommand == "duel") return analyze_duel(cfg, out_dir, seed);
    if (subcommand == "expansion-verify") return analyze_expansion(cfg, out_dir, seed);
    if (subcommand == "sweep") return analyze_sweep(cfg, out_dir, seed);
    throw ConfigError("unknown analyze subcommand: " + subcommand);
}

}  // namespace atoms

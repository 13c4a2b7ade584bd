#include "tasks/signal_model.hpp"

#include <filesystem>
#include <fstream>

namespace atoms {

SignalModel SignalModel::init(const SignalModelConfig& cfg) {
    if (cfg.value_channels > cfg.feature_dim)
        throw ContractError("signal model: value channels exceed the feature width");
    SignalModel m;
    m.cfg = cfg;
    Rng rng(cfg.init_seed);
    Rng proj_rng = rng.fork(1);
    Rng attn_rng = rng.fork(2);
    Rng head_rng = rng.fork(3);
    Rng ctx_rng = rng.fork(4);

    // Frozen input projection: the signal value feeds the first
    // value_channels features, the mask bit the remainder.
    m.input_proj = Tensor::zeros({2, cfg.feature_dim});
    for (int j = 0; j < cfg.value_channels; ++j)
        m.input_proj.at(0, j) = proj_rng.normal() * 0.5f;
    for (int j = cfg.value_channels; j < cfg.feature_dim; ++j)
        m.input_proj.at(1, j) = proj_rng.normal() * 0.5f;

    m.pos_table = randn({cfg.length, cfg.feature_dim}, proj_rng, 0.02f, true);
    m.attn = AttentionLayer::random_init(cfg.feature_dim, cfg.feature_dim, cfg.heads, attn_rng);

    if (cfg.head_kind == SignalHeadKind::SparseDict) {
        // Jointly trained dictionary head: atoms start small but nonzero so
        // both factors receive gradients from the first step.
        m.sparse_head = SparseAdapter::init(cfg.feature_dim, cfg.feature_dim, cfg.atom_count,
                                            cfg.activation, head_rng, cfg.apply_before_attention,
                                            0.02f, 0.02f);
    }
    if (cfg.context_count > 0)
        m.context_table = randn({cfg.context_count, cfg.feature_dim}, ctx_rng, 0.5f, false);
    return m;
}

Tensor SignalModel::embed(const Tensor& masked, const Tensor& mask, int context) const {
    if (masked.numel() != cfg.length || mask.numel() != cfg.length)
        throw DimError("signal model: inputs must have length " + std::to_string(cfg.length));
    std::vector<float> u(static_cast<size_t>(cfg.length) * 2);
    for (int t = 0; t < cfg.length; ++t) {
        u[static_cast<size_t>(t) * 2] = masked.data()[static_cast<size_t>(t)];
        u[static_cast<size_t>(t) * 2 + 1] = mask.data()[static_cast<size_t>(t)];
    }
    Tensor tokens = matmul(Tensor::from_data({cfg.length, 2}, std::move(u)), input_proj);
    tokens = add(tokens, pos_table);
    if (context >= 0) {
        if (!context_table.defined() || context >= cfg.context_count)
            throw ContractError("signal model: context id out of range");
        tokens = add(tokens, row_slice(context_table, context, context + 1));
    }
    return tokens;
}

SignalModel::Out SignalModel::forward(const Tensor& masked, const Tensor& mask, int context,
                                      const SparseAdapter* delta_adapter,
                                      const LowRankAdapter* lora) const {
    Tensor x = embed(masked, mask, context);
    Out out;

    if (cfg.head_kind == SignalHeadKind::SparseDict) {
        if (lora || delta_adapter)
            throw ContractError("signal model: dictionary head does not take extra adapters");
        std::vector<Tensor> maps = attention_maps(attn, x);
        Tensor mix = maps[0];
        for (size_t h = 1; h < maps.size(); ++h) mix = add(mix, maps[h]);
        if (maps.size() > 1) mix = scale(mix, 1.0f / static_cast<float>(maps.size()));
        AdapterOut head = adapter_forward(sparse_head, x, mix);
        out.features = head.delta_o;
        out.codes = head.coeffs;
        out.effective_codes = head.effective_coeffs;
    } else if (lora) {
        if (delta_adapter)
            throw ContractError("signal model: choose one adapter kind per forward");
        out.features = lowrank_adapted_forward(attn, *lora, x);
    } else if (delta_adapter) {
        AdaptedOut adapted = adapted_attention_forward(attn, *delta_adapter, x);
        out.features = adapted.output;
        out.codes = adapted.adapter.coeffs;
        out.effective_codes = adapted.adapter.effective_coeffs;
    } else {
        out.features = attention_forward(attn, x).output;
    }

    out.prediction = row_sum(col_slice(out.features, 0, cfg.value_channels));
    return out;
}

std::vector<NamedParam> SignalModel::base_params() const {
    std::vector<NamedParam> p = attn.params("attn");
    p.emplace_back("pos_table", pos_table);
    return p;
}

void SignalModel::save(const std::string& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create model directory: " + dir);
    std::ofstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot write model metadata in " + dir);
    meta << "kind = signal\n";
    meta << "length = " << cfg.length << "\n";
    meta << "feature_dim = " << cfg.feature_dim << "\n";
    meta << "value_channels = " << cfg.value_channels << "\n";
    meta << "heads = " << cfg.heads << "\n";
    meta << "head_kind = " << (cfg.head_kind == SignalHeadKind::Dense ? "dense" : "sparse_dict")
         << "\n";
    meta << "context_count = " << cfg.context_count << "\n";
    meta << "init_seed = " << cfg.init_seed << "\n";
    save_tensor(dir + "/input_proj.atns", input_proj);
    save_tensor(dir + "/pos_table.atns", pos_table);
    save_tensor(dir + "/w_q.atns", attn.w_q);
    save_tensor(dir + "/w_k.atns", attn.w_k);
    save_tensor(dir + "/w_v.atns", attn.w_v);
    save_tensor(dir + "/w_o.atns", attn.w_o);
    if (cfg.head_kind == SignalHeadKind::SparseDict)
        save_adapter_bundle(dir + "/dict_head", sparse_head);
    if (cfg.context_count > 0) save_tensor(dir + "/context_table.atns", context_table);
}

SignalModel SignalModel::load(const std::string& dir) {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot read model metadata in " + dir);
    SignalModelConfig cfg;
    std::string line;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (key == "kind") {
            if (val != "signal") throw FormatError("not a signal model: " + dir);
        } else if (key == "length") cfg.length = std::stoi(val);
        else if (key == "feature_dim") cfg.feature_dim = std::stoi(val);
        else if (key == "value_channels") cfg.value_channels = std::stoi(val);
        else if (key == "heads") cfg.heads = std::stoi(val);
        else if (key == "head_kind") cfg.head_kind = val == "dense" ? SignalHeadKind::Dense
                                                                    : SignalHeadKind::SparseDict;
        else if (key == "context_count") cfg.context_count = std::stoi(val);
        else if (key == "init_seed") cfg.init_seed = std::stoull(val);
        else throw FormatError("unknown model metadata key: " + key);
    }

    SignalModel m;
    m.cfg = cfg;
    m.input_proj = load_tensor(dir + "/input_proj.atns");
    m.pos_table = load_tensor(dir + "/pos_table.atns");
    m.pos_table.set_requires_grad(true);
    m.attn.num_heads = cfg.heads;
    m.attn.w_q = load_tensor(dir + "/w_q.atns");
    m.attn.w_k = load_tensor(dir + "/w_k.atns");
    m.attn.w_v = load_tensor(dir + "/w_v.atns");
    m.attn.w_o = load_tensor(dir + "/w_o.atns");
    m.attn.set_frozen(false);
    if (cfg.head_kind == SignalHeadKind::SparseDict) {
        m.sparse_head = load_adapter_bundle(dir + "/dict_head");
        m.cfg.atom_count = m.sparse_head.atom_count();
        m.cfg.activation = m.sparse_head.activation;
        m.cfg.apply_before_attention = m.sparse_head.apply_before_attention;
    }
    if (cfg.context_count > 0) m.context_table = load_tensor(dir + "/context_table.atns");
    return m;
}

}  // namespace atoms

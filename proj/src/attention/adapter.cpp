#include "attention/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace atoms {

SparseAdapter SparseAdapter::init(int c_in, int c_out, int atom_count,
                                  ActivationPolicy activation, Rng& rng,
                                  bool apply_before_attention, float ws_scale, float dict_scale) {
    if (atom_count < 1) throw ContractError("adapter: atom count must be positive");
    if (activation.kind == ActivationKind::TopK && activation.k > atom_count)
        throw ContractError("adapter: top-k exceeds the atom count");
    SparseAdapter a;
    a.w_s = randn({c_in, atom_count}, rng, ws_scale, true);
    a.dict = dict_scale == 0.0f ? Tensor::zeros({atom_count, c_out}, true)
                                : randn({atom_count, c_out}, rng, dict_scale, true);
    a.activation = activation;
    a.apply_before_attention = apply_before_attention;
    return a;
}

void SparseAdapter::set_trainable(bool train_w_s, bool train_dict) {
    w_s.set_requires_grad(train_w_s);
    dict.set_requires_grad(train_dict);
}

std::vector<NamedParam> SparseAdapter::params(const std::string& prefix) const {
    return {{prefix + ".w_s", w_s}, {prefix + ".dict", dict}};
}

AdapterOut adapter_forward(const SparseAdapter& adapter, const Tensor& x,
                           const Tensor& attn_map) {
    if (x.ndim() != 2 || x.dim(1) != adapter.c_in())
        throw DimError("adapter: input " + shape_str(x.shape()) + " does not match C_i=" +
                       std::to_string(adapter.c_in()));
    if (attn_map.ndim() != 2 || attn_map.dim(0) != x.dim(0) || attn_map.dim(1) != x.dim(0))
        throw DimError("adapter: attention map must be square over the token count");

    AdapterOut out;
    if (adapter.apply_before_attention) {
        out.coeffs = adapter.activation.apply(matmul(x, adapter.w_s));
        out.effective_coeffs = matmul(attn_map, out.coeffs);
    } else {
        out.coeffs = adapter.activation.apply(matmul(matmul(attn_map, x), adapter.w_s));
        out.effective_coeffs = out.coeffs;
    }
    out.delta_o = matmul(out.effective_coeffs, adapter.dict);
    return out;
}

AdaptedOut adapted_attention_forward(const AttentionLayer& layer, const SparseAdapter& adapter,
                                     const Tensor& x) {
    AttentionOut base = attention_forward(layer, x);
    Tensor mix = base.head_maps[0];
    for (size_t h = 1; h < base.head_maps.size(); ++h) mix = add(mix, base.head_maps[h]);
    if (base.head_maps.size() > 1)
        mix = scale(mix, 1.0f / static_cast<float>(base.head_maps.size()));

    AdaptedOut out;
    out.base_output = base.output;
    out.adapter = adapter_forward(adapter, x, mix);
    out.output = add(base.output, out.adapter.delta_o);
    return out;
}

Tensor select_atoms_delta(const SparseAdapter& adapter, const Tensor& effective_coeffs,
                          const std::vector<int>& keep) {
    int m = adapter.atom_count();
    if (effective_coeffs.ndim() != 2 || effective_coeffs.dim(1) != m)
        throw DimError("select_atoms: coefficient matrix does not match the dictionary");
    for (int idx : keep)
        if (idx < 0 || idx >= m)
            throw ContractError("select_atoms: atom index " + std::to_string(idx) + " out of range");

    std::vector<uint8_t> mask(static_cast<size_t>(m), 0);
    for (int idx : keep) mask[static_cast<size_t>(idx)] = 1;

    int n = effective_coeffs.dim(0);
    Tensor masked = Tensor::zeros({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            if (mask[static_cast<size_t>(j)]) masked.at(i, j) = effective_coeffs.at(i, j);
    return matmul(masked, adapter.dict.detached_copy());
}

std::vector<double> atom_importance(const Tensor& coeffs) {
    int n = coeffs.dim(0), m = coeffs.dim(1);
    std::vector<double> imp(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) imp[static_cast<size_t>(j)] += std::fabs(coeffs.at(i, j));
    for (auto& v : imp) v /= static_cast<double>(n);
    return imp;
}

std::vector<int> rank_atoms_by_mass(const Tensor& coeffs) {
    std::vector<double> imp = atom_importance(coeffs);
    std::vector<int> order(imp.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&imp](int a, int b) {
        if (imp[static_cast<size_t>(a)] != imp[static_cast<size_t>(b)])
            return imp[static_cast<size_t>(a)] > imp[static_cast<size_t>(b)];
        return a < b;
    });
    return order;
}

Tensor select_atoms_delta_top(const SparseAdapter& adapter, const Tensor& effective_coeffs,
                              int count) {
    if (count < 0) throw ContractError("select_atoms: count must be nonnegative");
    count = std::min<int>(count, adapter.atom_count());
    std::vector<int> order = rank_atoms_by_mass(effective_coeffs);
    order.resize(static_cast<size_t>(count));
    return select_atoms_delta(adapter, effective_coeffs, order);
}

// ---- bundle persistence ----

void save_adapter_bundle(const std::string& dir, const SparseAdapter& adapter) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create bundle directory: " + dir);
    save_tensor(dir + "/w_s.atns", adapter.w_s);
    save_tensor(dir + "/dict.atns", adapter.dict);
    std::ofstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot write bundle metadata in " + dir);
    meta << "atom_count = " << adapter.atom_count() << "\n";
    meta << "activation = " << adapter.activation.kind_name() << "\n";
    meta << "lambda = " << adapter.activation.lambda << "\n";
    meta << "k = " << adapter.activation.k << "\n";
    meta << "apply_before_attention = " << (adapter.apply_before_attention ? "true" : "false")
         << "\n";
    meta << "c_in = " << adapter.c_in() << "\n";
    meta << "c_out = " << adapter.c_out() << "\n";
}

SparseAdapter load_adapter_bundle(const std::string& dir) {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot read bundle metadata in " + dir);
    std::string line, kind = "soft_threshold";
    int atom_count = 0, k = 0, c_in = 0, c_out = 0;
    float lambda = 0.0f;
    bool before = true;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "atom_count") atom_count = std::stoi(val);
        else if (key == "activation") kind = val;
        else if (key == "lambda") lambda = std::stof(val);
        else if (key == "k") k = std::stoi(val);
        else if (key == "apply_before_attention") before = (val == "true");
        else if (key == "c_in") c_in = std::stoi(val);
        else if (key == "c_out") c_out = std::stoi(val);
        else throw FormatError("unknown bundle metadata key: " + key);
    }

    SparseAdapter a;
    a.w_s = load_tensor(dir + "/w_s.atns");
    a.dict = load_tensor(dir + "/dict.atns");
    a.activation = activation_from_name(kind, lambda, k);
    a.apply_before_attention = before;
    if (a.w_s.ndim() != 2 || a.dict.ndim() != 2 || a.w_s.dim(1) != a.dict.dim(0))
        throw FormatError("bundle tensors are inconsistent in " + dir);
    if (atom_count != a.w_s.dim(1) || c_in != a.w_s.dim(0) || c_out != a.dict.dim(1))
        throw FormatError("bundle metadata does not match tensor shapes in " + dir);
    a.w_s.set_requires_grad(true);
    a.dict.set_requires_grad(true);
    return a;
}

}  // namespace atoms

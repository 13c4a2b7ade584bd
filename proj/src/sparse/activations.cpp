#include "sparse/activations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace atoms {

ActivationPolicy ActivationPolicy::soft_threshold(float lambda) {
    if (lambda < 0.0f) throw ContractError("soft_threshold: lambda must be nonnegative");
    return {ActivationKind::SoftThreshold, lambda, 0};
}

ActivationPolicy ActivationPolicy::shifted_relu(float lambda) {
    if (lambda < 0.0f) throw ContractError("shifted_relu: lambda must be nonnegative");
    return {ActivationKind::ShiftedRelu, lambda, 0};
}

ActivationPolicy ActivationPolicy::top_k(int k) {
    if (k < 1) throw ContractError("top_k: k must be positive");
    return {ActivationKind::TopK, 0.0f, k};
}

Tensor ActivationPolicy::apply(const Tensor& x) const {
    switch (kind) {
        case ActivationKind::SoftThreshold: return atoms::soft_threshold(x, lambda);
        case ActivationKind::ShiftedRelu: return atoms::shifted_relu(x, lambda);
        case ActivationKind::TopK: return atoms::top_k_rows(x, k);
    }
    throw ContractError("unknown activation kind");
}

std::string ActivationPolicy::kind_name() const {
    switch (kind) {
        case ActivationKind::SoftThreshold: return "soft_threshold";
        case ActivationKind::ShiftedRelu: return "shifted_relu";
        case ActivationKind::TopK: return "top_k";
    }
    return "?";
}

ActivationPolicy activation_from_name(const std::string& kind, float lambda, int k) {
    if (kind == "soft_threshold") return ActivationPolicy::soft_threshold(lambda);
    if (kind == "shifted_relu") return ActivationPolicy::shifted_relu(lambda);
    if (kind == "top_k") return ActivationPolicy::top_k(k);
    throw ConfigError("unknown activation kind: " + kind);
}

Tensor soft_threshold(const Tensor& x, float lambda) {
    if (lambda < 0.0f) throw ContractError("soft_threshold: lambda must be nonnegative");
    std::vector<float> out(x.data());
    for (auto& v : out) {
        float a = std::fabs(v) - lambda;
        v = a > 0.0f ? (v > 0.0f ? a : -a) : 0.0f;
    }
    Tensor y = tape::new_node("soft_threshold", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    tape::set_backward(y, [x_, lambda](const std::vector<float>& g) mutable {
        const auto& xd = x_.data();
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = std::fabs(xd[i]) > lambda ? g[i] : 0.0f;
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor shifted_relu(const Tensor& x, float lambda) {
    if (lambda < 0.0f) throw ContractError("shifted_relu: lambda must be nonnegative");
    std::vector<float> out(x.data());
    for (auto& v : out) v = v > lambda ? v - lambda : 0.0f;
    Tensor y = tape::new_node("shifted_relu", {x}, x.shape(), std::move(out));
    Tensor x_ = x;
    tape::set_backward(y, [x_, lambda](const std::vector<float>& g) mutable {
        const auto& xd = x_.data();
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = xd[i] > lambda ? g[i] : 0.0f;
        x_.accumulate_grad(gx);
    });
    return y;
}

Tensor top_k_rows(const Tensor& x, int k) {
    if (x.ndim() != 2) throw DimError("top_k_rows: expected a 2-d tensor");
    int n = x.dim(0), m = x.dim(1);
    if (k < 1 || k > m)
        throw ContractError("top_k_rows: k=" + std::to_string(k) + " out of range for " +
                            std::to_string(m) + " columns");
    const auto& xd = x.data();
    std::vector<float> out(static_cast<size_t>(n) * m, 0.0f);
    std::vector<uint8_t> kept(static_cast<size_t>(n) * m, 0);
    std::vector<int> idx(static_cast<size_t>(m));
    for (int i = 0; i < n; ++i) {
        const float* row = &xd[static_cast<size_t>(i) * m];
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int a, int b) {
            float fa = std::fabs(row[a]), fb = std::fabs(row[b]);
            if (fa != fb) return fa > fb;
            return a < b;  // tie-break: lower column index wins
        });
        for (int j = 0; j < k; ++j) {
            size_t pos = static_cast<size_t>(i) * m + idx[static_cast<size_t>(j)];
            out[pos] = xd[pos];
            kept[pos] = 1;
        }
    }
    Tensor y = tape::new_node("top_k_rows", {x}, {n, m}, std::move(out));
    Tensor x_ = x;
    tape::set_backward(y, [x_, kept](const std::vector<float>& g) mutable {
        std::vector<float> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = kept[i] ? g[i] : 0.0f;
        x_.accumulate_grad(gx);
    });
    return y;
}

double density(const Tensor& s) {
    if (s.numel() == 0) return 0.0;
    int64_t nz = 0;
    for (float v : s.data())
        if (std::fabs(v) > 1e-8f) ++nz;
    return static_cast<double>(nz) / static_cast<double>(s.numel());
}

Tensor ortho_penalty(const Tensor& dict) {
    if (dict.ndim() != 2) throw DimError("ortho_penalty: expected a 2-d dictionary");
    int m = dict.dim(0), c = dict.dim(1);
    const auto& dd = dict.data();
    // Gram matrix of atom rows.
    std::vector<float> gram(static_cast<size_t>(m) * m, 0.0f);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int t = 0; t < c; ++t)
                acc += static_cast<double>(dd[static_cast<size_t>(i) * c + t]) *
                       dd[static_cast<size_t>(j) * c + t];
            gram[static_cast<size_t>(i) * m + j] = static_cast<float>(acc);
        }
    }
    double pen = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) pen += static_cast<double>(gram[static_cast<size_t>(i) * m + j]) *
                               gram[static_cast<size_t>(i) * m + j];
    Tensor y = tape::new_node("ortho_penalty", {dict}, {1}, {static_cast<float>(pen)});
    Tensor d_ = dict;
    tape::set_backward(y, [d_, gram, m, c](const std::vector<float>& g) mutable {
        // d penalty / d d_i = 4 * sum_{j != i} <d_i, d_j> d_j
        const auto& dd = d_.data();
        std::vector<float> gd(static_cast<size_t>(m) * c, 0.0f);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                if (i == j) continue;
                float w = 4.0f * gram[static_cast<size_t>(i) * m + j] * g[0];
                for (int t = 0; t < c; ++t)
                    gd[static_cast<size_t>(i) * c + t] += w * dd[static_cast<size_t>(j) * c + t];
            }
        }
        d_.accumulate_grad(gd);
    });
    return y;
}

}  // namespace atoms

#include "train/optim.hpp"

#include <cmath>

namespace atoms {

void Adam::step(const std::vector<NamedParam>& params) {
    for (const auto& [name, param] : params) {
        Tensor p = param;
        if (!p.requires_grad() || !p.has_grad()) continue;
        const auto& g = p.grad();
        for (float v : g)
            if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter " + name);

        State& st = state_[p.impl()];
        if (st.m.empty()) {
            st.m.assign(g.size(), 0.0f);
            st.v.assign(g.size(), 0.0f);
        }
        ++st.t;
        double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(st.t));
        double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(st.t));

        auto& w = p.data();
        for (size_t i = 0; i < g.size(); ++i) {
            float grad = g[i];
            if (cfg_.weight_decay != 0.0f && !cfg_.decoupled) grad += cfg_.weight_decay * w[i];
            st.m[i] = cfg_.beta1 * st.m[i] + (1.0f - cfg_.beta1) * grad;
            st.v[i] = cfg_.beta2 * st.v[i] + (1.0f - cfg_.beta2) * grad * grad;
            double mhat = st.m[i] / bc1;
            double vhat = st.v[i] / bc2;
            double update = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (cfg_.weight_decay != 0.0f && cfg_.decoupled)
                update += static_cast<double>(cfg_.lr) * cfg_.weight_decay * w[i];
            w[i] -= static_cast<float>(update);
        }
    }
}

int64_t Adam::step_count(const Tensor& param) const {
    auto it = state_.find(param.impl());
    return it == state_.end() ? 0 : it->second.t;
}

double clip_global_norm(const std::vector<NamedParam>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, param] : params) {
        (void)name;
        if (!param.has_grad()) continue;
        for (float v : param.grad()) sq += static_cast<double>(v) * v;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        float s = static_cast<float>(max_norm / norm);
        for (const auto& [name, param] : params) {
            (void)name;
            Tensor p = param;
            if (!p.has_grad()) continue;
            for (auto& v : p.grad_buffer()) v *= s;
        }
    }
    return norm;
}

}  // namespace atoms

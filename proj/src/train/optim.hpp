#pragma once

#include <unordered_map>

#include "attention/attention.hpp"

namespace atoms {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
    bool decoupled = false;  // true = decoupled weight decay (AdamW)
};

// Standard Adam with bias correction. Parameters without a gradient buffer
// are skipped; non-finite gradients raise NumericError naming the parameter.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<NamedParam>& params);

    int64_t step_count(const Tensor& param) const;

private:
    struct State {
        std::vector<float> m, v;
        int64_t t = 0;
    };
    AdamConfig cfg_;
    std::unordered_map<TensorImpl*, State> state_;
};

// Scales gradients so their joint l2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<NamedParam>& params, double max_norm);

}  // namespace atoms

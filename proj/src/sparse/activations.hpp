#pragma once

#include <string>

#include "core/tensor.hpp"

namespace atoms {

enum class ActivationKind { SoftThreshold, ShiftedRelu, TopK };

// Sparsifying activation applied to pre-coefficients. Exactly one of
// (lambda, k) is meaningful for a given kind.
struct ActivationPolicy {
    ActivationKind kind = ActivationKind::SoftThreshold;
    float lambda = 0.0f;
    int k = 0;

    static ActivationPolicy soft_threshold(float lambda);
    static ActivationPolicy shifted_relu(float lambda);
    static ActivationPolicy top_k(int k);

    // Dispatches to the matching op below. TopK requires a 2-d input whose
    // column count is at least k.
    Tensor apply(const Tensor& x) const;

    std::string kind_name() const;
};

ActivationPolicy activation_from_name(const std::string& kind, float lambda, int k);

// sign(x) * max(|x| - lambda, 0); gradient 1 where |x| > lambda, else 0.
Tensor soft_threshold(const Tensor& x, float lambda);

// max(x - lambda, 0).
Tensor shifted_relu(const Tensor& x, float lambda);

// Keeps the k largest-magnitude entries of each row (values preserved),
// zeroes the rest. Ties break toward the lower column index. Gradient passes
// through kept entries only.
Tensor top_k_rows(const Tensor& x, int k);

// Fraction of entries with |v| > 1e-8.
double density(const Tensor& s);

// Sum over ordered pairs i != j of <d_i, d_j>^2 for dictionary rows d_i.
// Zero exactly when atoms are pairwise orthogonal.
Tensor ortho_penalty(const Tensor& dict);

}  // namespace atoms

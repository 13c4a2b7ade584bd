#pragma once

#include "core/tensor.hpp"

namespace atoms {

// l1-regularized sparse coding instance:
//   min_S 0.5 * ||X - S D||_F^2 + lambda * ||S||_1
// with signal X [N x C] and dictionary D [M x C].
struct SparseCodeProblem {
    Tensor signal;      // N x C
    Tensor dictionary;  // M x C
    float lambda = 0.1f;
    int max_iters = 500;
    float tol = 1e-8f;
};

struct SolveDiagnostics {
    int iterations = 0;
    double objective = 0.0;
    bool converged = false;
};

// Proximal-gradient solver. Step size is 1/L with L estimated by power
// iteration on D D^T plus a 10% margin; the accelerated variant skips the
// per-step monotonicity guarantee. Non-convergence is reported through the
// diagnostics flag, not an error.
Tensor ista_solve(const SparseCodeProblem& p, SolveDiagnostics* diag = nullptr,
                  bool accelerated = false);

// Objective value for a candidate coefficient matrix.
double sparse_code_objective(const Tensor& signal, const Tensor& dictionary, float lambda,
                             const Tensor& coeffs);

}  // namespace atoms

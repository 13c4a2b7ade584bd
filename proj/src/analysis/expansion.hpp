#pragma once

#include <vector>

#include "core/errors.hpp"

namespace atoms {

// Elementwise polynomial map f(x) = sum_{k=1..K} c_k x^k (no constant term).
struct PolyLayer {
    std::vector<double> coeffs;  // coeffs[k-1] multiplies x^k

    int degree() const { return static_cast<int>(coeffs.size()); }
    std::vector<double> eval(const std::vector<double>& x) const;
};

struct ScaledAtom {
    double weight = 1.0;               // s_m
    std::vector<double> direction;     // d_m
};

// One atom's series through the expansion: its vector contribution and the
// highest power of the atom that appears with non-negligible coefficient.
struct AtomSeries {
    int atom = 0;
    std::vector<double> contribution;
    int max_degree = 0;
};

struct ExpansionResult {
    std::vector<AtomSeries> series;
    std::vector<double> residual;  // direct delta minus summed series
    double residual_norm = 0.0;    // max |residual| / max(1, max |direct|)
};

// Checks pairwise atom orthogonality (tolerance 1e-6; violations are rejected
// naming the offending pair), then expands
//   f(x + sum_m s_m d_m) = f(x) + sum_m B(d_m)
// with B built from the binomial formula
//   B(d_m) = sum_k c_k sum_{j=1..k} C(k,j) x^{k-j} (s_m d_m)^j   (elementwise).
ExpansionResult expansion_decompose(const PolyLayer& poly, const std::vector<double>& x,
                                    const std::vector<ScaledAtom>& atoms);

struct TwoLayerResult {
    std::vector<AtomSeries> prev_series;  // through both layers; degrees reach K1*K2
    std::vector<AtomSeries> cur_series;   // degrees reach K2
    std::vector<double> residual;
    double residual_norm = 0.0;
};

// Composes two layers: the previous layer's atoms perturb the first layer's
// input, the current layer's atoms add to its output, and the second layer
// maps the sum. Per-atom contributions are composed univariate polynomials
// in the atom entries, so previous-layer atoms carry monomial orders up to
// K1 * K2.
TwoLayerResult expansion_two_layer(const PolyLayer& first, const PolyLayer& second,
                                   const std::vector<double>& x,
                                   const std::vector<ScaledAtom>& atoms_prev,
                                   const std::vector<ScaledAtom>& atoms_cur);

// ---- randomized verification driver (shared by the CLI and test suites) ----

class Rng;

// Atoms on pairwise-disjoint coordinate blocks; disjoint supports satisfy the
// orthogonality hypothesis and make the elementwise binomial split exact.
std::vector<ScaledAtom> random_disjoint_atoms(int dim, int count, Rng& rng);
PolyLayer random_poly(int max_degree, Rng& rng);

struct ExpansionVerifyStats {
    int cases = 0;
    int two_layer_cases = 0;
    double max_residual = 0.0;
    double max_two_layer_residual = 0.0;
    bool rejection_ok = false;  // a deliberately non-orthogonal pair was rejected
    int max_prev_degree_seen = 0;
    bool prev_degree_bound_ok = true;  // never exceeds K1 * K2
};

ExpansionVerifyStats run_expansion_verification(int cases, int two_layer_cases, int max_dim,
                                                int max_degree, int max_atoms, uint64_t seed);

}  // namespace atoms

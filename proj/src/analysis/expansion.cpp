#include "analysis/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "core/rng.hpp"

namespace atoms {

namespace {

constexpr double kOrthoTol = 1e-6;
constexpr double kDegreeTol = 1e-12;

void check_orthogonal(const std::vector<ScaledAtom>& atoms, const char* where) {
    for (size_t i = 0; i < atoms.size(); ++i) {
        for (size_t j = i + 1; j < atoms.size(); ++j) {
            if (atoms[i].direction.size() != atoms[j].direction.size())
                throw DimError(std::string(where) + ": atom dimensions differ");
            double dot = 0.0;
            for (size_t t = 0; t < atoms[i].direction.size(); ++t)
                dot += atoms[i].direction[t] * atoms[j].direction[t];
            if (std::fabs(dot) > kOrthoTol)
                throw ContractError(std::string(where) + ": atoms " + std::to_string(i) + " and " +
                                    std::to_string(j) + " are not orthogonal (inner product " +
                                    std::to_string(dot) + ")");
        }
    }
}

double binomial(int k, int j) {
    double out = 1.0;
    for (int i = 1; i <= j; ++i) out = out * (k - j + i) / i;
    return out;
}

// Polynomial in a scalar perturbation p: coeffs_out[j] multiplies p^j, with
// coeffs_out[0] == 0 by construction. This is f(a + p) - f(a) for the
// elementwise map at base value a.
std::vector<double> shifted_delta_poly(const PolyLayer& f, double a) {
    int deg = f.degree();
    std::vector<double> out(static_cast<size_t>(deg) + 1, 0.0);
    for (int k = 1; k <= deg; ++k) {
        double ck = f.coeffs[static_cast<size_t>(k - 1)];
        if (ck == 0.0) continue;
        for (int j = 1; j <= k; ++j)
            out[static_cast<size_t>(j)] += ck * binomial(k, j) * std::pow(a, k - j);
    }
    return out;
}

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) continue;
        for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    }
    return out;
}

// h(g(p)) as a polynomial in p.
std::vector<double> poly_compose(const std::vector<double>& h, const std::vector<double>& g) {
    std::vector<double> out(1, 0.0);
    // Horner over h's coefficients, highest degree first.
    for (size_t i = h.size(); i-- > 0;) {
        out = poly_mul(out, g);
        if (out.empty()) out.assign(1, 0.0);
        out[0] += h[i];
    }
    return out;
}

double poly_eval(const std::vector<double>& p, double x) {
    double acc = 0.0;
    for (size_t i = p.size(); i-- > 0;) acc = acc * x + p[i];
    return acc;
}

int max_active_degree(const std::vector<double>& p, double scale) {
    int deg = 0;
    for (size_t j = 1; j < p.size(); ++j)
        if (std::fabs(p[j] * std::pow(scale, static_cast<double>(j))) > kDegreeTol)
            deg = static_cast<int>(j);
    return deg;
}

}  // namespace

std::vector<double> PolyLayer::eval(const std::vector<double>& x) const {
    std::vector<double> out(x.size(), 0.0);
    for (size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        for (int k = degree(); k >= 1; --k) acc = (acc + coeffs[static_cast<size_t>(k - 1)]) * x[t];
        out[t] = acc;
    }
    return out;
}

ExpansionResult expansion_decompose(const PolyLayer& poly, const std::vector<double>& x,
                                    const std::vector<ScaledAtom>& atoms) {
    if (poly.degree() < 1) throw ContractError("expansion: polynomial degree must be at least 1");
    for (const auto& a : atoms)
        if (a.direction.size() != x.size())
            throw DimError("expansion: atom dimension does not match the input");
    check_orthogonal(atoms, "expansion_decompose");

    ExpansionResult result;
    size_t dim = x.size();
    std::vector<double> sum_b(dim, 0.0);

    for (size_t m = 0; m < atoms.size(); ++m) {
        AtomSeries series;
        series.atom = static_cast<int>(m);
        series.contribution.assign(dim, 0.0);
        for (size_t t = 0; t < dim; ++t) {
            double p = atoms[m].weight * atoms[m].direction[t];
            if (p == 0.0) continue;
            std::vector<double> delta = shifted_delta_poly(poly, x[t]);
            series.contribution[t] = poly_eval(delta, p);
            series.max_degree = std::max(series.max_degree, max_active_degree(delta, p));
        }
        for (size_t t = 0; t < dim; ++t) sum_b[t] += series.contribution[t];
        result.series.push_back(std::move(series));
    }

    std::vector<double> perturbed(x);
    for (const auto& a : atoms)
        for (size_t t = 0; t < dim; ++t) perturbed[t] += a.weight * a.direction[t];
    std::vector<double> direct_hi = poly.eval(perturbed);
    std::vector<double> direct_lo = poly.eval(x);

    result.residual.assign(dim, 0.0);
    double scale = 1.0, worst = 0.0;
    for (size_t t = 0; t < dim; ++t) {
        double direct = direct_hi[t] - direct_lo[t];
        result.residual[t] = direct - sum_b[t];
        scale = std::max(scale, std::fabs(direct_hi[t]));
        worst = std::max(worst, std::fabs(result.residual[t]));
    }
    result.residual_norm = worst / scale;
    return result;
}

TwoLayerResult expansion_two_layer(const PolyLayer& first, const PolyLayer& second,
                                   const std::vector<double>& x,
                                   const std::vector<ScaledAtom>& atoms_prev,
                                   const std::vector<ScaledAtom>& atoms_cur) {
    if (first.degree() < 1 || second.degree() < 1)
        throw ContractError("expansion: polynomial degree must be at least 1");
    for (const auto& a : atoms_prev)
        if (a.direction.size() != x.size())
            throw DimError("expansion: previous-layer atom dimension mismatch");
    for (const auto& a : atoms_cur)
        if (a.direction.size() != x.size())
            throw DimError("expansion: current-layer atom dimension mismatch");
    check_orthogonal(atoms_prev, "expansion_two_layer (previous layer)");
    check_orthogonal(atoms_cur, "expansion_two_layer (current layer)");

    size_t dim = x.size();
    std::vector<double> base_mid = first.eval(x);       // unperturbed layer-1 output
    std::vector<double> base_out = second.eval(base_mid);

    TwoLayerResult result;
    std::vector<double> sum_b(dim, 0.0);

    // Previous-layer atoms: composed series through both layers.
    for (size_t m = 0; m < atoms_prev.size(); ++m) {
        AtomSeries series;
        series.atom = static_cast<int>(m);
        series.contribution.assign(dim, 0.0);
        for (size_t t = 0; t < dim; ++t) {
            double p = atoms_prev[m].weight * atoms_prev[m].direction[t];
            if (p == 0.0) continue;
            std::vector<double> g = shifted_delta_poly(first, x[t]);
            std::vector<double> h = shifted_delta_poly(second, base_mid[t]);
            std::vector<double> composed = poly_compose(h, g);
            composed[0] = 0.0;  // delta polynomial has no constant term
            series.contribution[t] = poly_eval(composed, p);
            series.max_degree = std::max(series.max_degree, max_active_degree(composed, p));
        }
        for (size_t t = 0; t < dim; ++t) sum_b[t] += series.contribution[t];
        result.prev_series.push_back(std::move(series));
    }

    // Current-layer atoms: one layer of expansion.
    for (size_t m = 0; m < atoms_cur.size(); ++m) {
        AtomSeries series;
        series.atom = static_cast<int>(m);
        series.contribution.assign(dim, 0.0);
        for (size_t t = 0; t < dim; ++t) {
            double p = atoms_cur[m].weight * atoms_cur[m].direction[t];
            if (p == 0.0) continue;
            std::vector<double> h = shifted_delta_poly(second, base_mid[t]);
            series.contribution[t] = poly_eval(h, p);
            series.max_degree = std::max(series.max_degree, max_active_degree(h, p));
        }
        for (size_t t = 0; t < dim; ++t) sum_b[t] += series.contribution[t];
        result.cur_series.push_back(std::move(series));
    }

    // Direct evaluation: perturb layer-1 input by the previous-layer atoms,
    // add the current-layer atoms to its output, then apply layer 2.
    std::vector<double> in1(x);
    for (const auto& a : atoms_prev)
        for (size_t t = 0; t < dim; ++t) in1[t] += a.weight * a.direction[t];
    std::vector<double> mid = first.eval(in1);
    for (const auto& a : atoms_cur)
        for (size_t t = 0; t < dim; ++t) mid[t] += a.weight * a.direction[t];
    std::vector<double> out = second.eval(mid);

    result.residual.assign(dim, 0.0);
    double scale = 1.0, worst = 0.0;
    for (size_t t = 0; t < dim; ++t) {
        double direct = out[t] - base_out[t];
        result.residual[t] = direct - sum_b[t];
        scale = std::max(scale, std::fabs(out[t]));
        worst = std::max(worst, std::fabs(result.residual[t]));
    }
    result.residual_norm = worst / scale;
    return result;
}

// ---- randomized verification ----

std::vector<ScaledAtom> random_disjoint_atoms(int dim, int count, Rng& rng) {
    if (count > dim) throw ContractError("random_disjoint_atoms: more atoms than coordinates");
    std::vector<int> coords(static_cast<size_t>(dim));
    std::iota(coords.begin(), coords.end(), 0);
    for (size_t i = 0; i + 1 < coords.size(); ++i) {
        size_t j = i + rng.below(coords.size() - i);
        std::swap(coords[i], coords[j]);
    }
    // Split a prefix of the shuffled coordinates into nonempty blocks.
    std::vector<ScaledAtom> atoms(static_cast<size_t>(count));
    int used = 0;
    for (int m = 0; m < count; ++m) {
        int remaining = dim - used;
        int reserve = count - m - 1;
        int width = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(remaining - reserve)));
        if (reserve > 0) width = std::min(width, remaining - reserve);
        auto& atom = atoms[static_cast<size_t>(m)];
        atom.weight = rng.uniform(0.3f, 1.5f) * (rng.next_float() < 0.5f ? -1.0 : 1.0);
        atom.direction.assign(static_cast<size_t>(dim), 0.0);
        for (int w = 0; w < width; ++w) {
            double v = rng.uniform(0.2f, 1.0f) * (rng.next_float() < 0.5f ? -1.0 : 1.0);
            atom.direction[static_cast<size_t>(coords[static_cast<size_t>(used + w)])] = v;
        }
        used += width;
    }
    return atoms;
}

PolyLayer random_poly(int max_degree, Rng& rng) {
    int deg = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_degree)));
    PolyLayer p;
    p.coeffs.resize(static_cast<size_t>(deg));
    for (auto& c : p.coeffs) c = rng.uniform(-1.0f, 1.0f);
    // keep the top coefficient alive so the nominal degree is real
    if (std::fabs(p.coeffs.back()) < 0.05) p.coeffs.back() = 0.5;
    return p;
}

ExpansionVerifyStats run_expansion_verification(int cases, int two_layer_cases, int max_dim,
                                                int max_degree, int max_atoms, uint64_t seed) {
    if (max_dim < 2 || max_degree < 1 || max_atoms < 1)
        throw ContractError("expansion verification: degenerate limits");
    ExpansionVerifyStats stats;
    Rng rng(seed);

    for (int i = 0; i < cases; ++i) {
        Rng r = rng.fork(static_cast<uint64_t>(i));
        int dim = 2 + static_cast<int>(r.below(static_cast<uint64_t>(max_dim - 1)));
        int n_atoms = 1 + static_cast<int>(r.below(static_cast<uint64_t>(std::min(max_atoms, dim))));
        PolyLayer poly = random_poly(max_degree, r);
        std::vector<double> x(static_cast<size_t>(dim));
        for (auto& v : x) v = r.uniform(-1.0f, 1.0f);
        std::vector<ScaledAtom> atoms = random_disjoint_atoms(dim, n_atoms, r);
        ExpansionResult res = expansion_decompose(poly, x, atoms);
        stats.max_residual = std::max(stats.max_residual, res.residual_norm);
        ++stats.cases;
    }

    for (int i = 0; i < two_layer_cases; ++i) {
        Rng r = rng.fork(0x900000u + static_cast<uint64_t>(i));
        int dim = 4 + static_cast<int>(r.below(static_cast<uint64_t>(std::max(1, max_dim - 3))));
        PolyLayer f1 = random_poly(max_degree, r);
        PolyLayer f2 = random_poly(max_degree, r);
        std::vector<double> x(static_cast<size_t>(dim));
        for (auto& v : x) v = r.uniform(-1.0f, 1.0f);
        // one shared disjoint layout split between the two layers
        int total = 2 + static_cast<int>(r.below(static_cast<uint64_t>(std::min(max_atoms, dim / 2)) ));
        std::vector<ScaledAtom> all = random_disjoint_atoms(dim, total, r);
        std::vector<ScaledAtom> prev(all.begin(), all.begin() + total / 2 + (total % 2));
        std::vector<ScaledAtom> cur(all.begin() + total / 2 + (total % 2), all.end());
        if (cur.empty()) {
            cur.push_back(prev.back());
            prev.pop_back();
        }
        TwoLayerResult res = expansion_two_layer(f1, f2, x, prev, cur);
        stats.max_two_layer_residual = std::max(stats.max_two_layer_residual, res.residual_norm);
        int bound = f1.degree() * f2.degree();
        for (const auto& s : res.prev_series) {
            stats.max_prev_degree_seen = std::max(stats.max_prev_degree_seen, s.max_degree);
            if (s.max_degree > bound) stats.prev_degree_bound_ok = false;
        }
        ++stats.two_layer_cases;
    }

    // A deliberately overlapping pair must be rejected.
    {
        PolyLayer poly{{0.0, 1.0}};
        std::vector<double> x{1.0, 1.0};
        std::vector<ScaledAtom> bad{{1.0, {1.0, 0.0}}, {1.0, {1.0, 1.0}}};
        try {
            expansion_decompose(poly, x, bad);
            stats.rejection_ok = false;
        } catch (const ContractError&) {
            stats.rejection_ok = true;
        }
    }
    return stats;
}

}  // namespace atoms

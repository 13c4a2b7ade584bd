#pragma once

// Test-only oracles kept independent of the library's gradient and solver
// paths: central finite differences, a grid-search proximal minimizer, and a
// coordinate-descent sparse coder.

#include <cmath>
#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace oracles {

// Central finite differences through an arbitrary scalar-valued forward pass.
// Rebuilds the graph per probe; compares against the gradients deposited by
// one analytic backward at the base point. Returns the worst relative error
// over all checked entries (|analytic - fd| / max(1, |analytic|, |fd|)).
inline double max_grad_rel_err(const std::function<atoms::Tensor()>& forward,
                               std::vector<atoms::Tensor> params, float eps = 1e-3f) {
    atoms::Tensor loss = forward();
    atoms::backward(loss);
    double worst = 0.0;
    for (auto& p : params) {
        if (!p.requires_grad()) continue;
        const std::vector<float> analytic = p.grad();
        for (size_t i = 0; i < p.data().size(); ++i) {
            float keep = p.data()[i];
            p.data()[i] = keep + eps;
            double up = atoms::Tensor(forward()).value();
            p.data()[i] = keep - eps;
            double dn = atoms::Tensor(forward()).value();
            p.data()[i] = keep;
            double fd = (up - dn) / (2.0 * static_cast<double>(eps));
            double a = static_cast<double>(analytic[i]);
            double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// Scalar proximal objective 0.5*(u - x)^2 + lambda*|u| minimized by grid
// search over a fine lattice around the candidate region.
inline double prox_l1_grid(double x, double lambda, double half_width = 4.0,
                           int steps = 400000) {
    double lo = x - half_width, hi = x + half_width;
    double best_u = lo, best_f = 1e300;
    for (int i = 0; i <= steps; ++i) {
        double u = lo + (hi - lo) * static_cast<double>(i) / steps;
        double f = 0.5 * (u - x) * (u - x) + lambda * std::fabs(u);
        if (f < best_f) {
            best_f = f;
            best_u = u;
        }
    }
    // Zero is a kink; consider it explicitly.
    double f0 = 0.5 * x * x;
    if (f0 < best_f) best_u = 0.0;
    return best_u;
}

// Cyclic coordinate descent on 0.5*||x - s D||^2 + lambda*||s||_1 for a
// single-row signal. Each coordinate has the closed-form soft-threshold
// update; iterated to convergence this is an independent minimizer of the
// same objective ista_solve targets.
inline std::vector<double> coord_descent_l1(const std::vector<double>& x,
                                            const std::vector<double>& dict, int m, int c,
                                            double lambda, int sweeps = 20000) {
    std::vector<double> s(static_cast<size_t>(m), 0.0);
    std::vector<double> resid(x);  // x - s D
    auto row = [&](int j) { return dict.data() + static_cast<size_t>(j) * c; };
    std::vector<double> norm2(static_cast<size_t>(m), 0.0);
    for (int j = 0; j < m; ++j) {
        const double* d = row(j);
        for (int t = 0; t < c; ++t) norm2[static_cast<size_t>(j)] += d[t] * d[t];
    }
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double moved = 0.0;
        for (int j = 0; j < m; ++j) {
            if (norm2[static_cast<size_t>(j)] < 1e-30) continue;
            const double* d = row(j);
            double old = s[static_cast<size_t>(j)];
            double corr = 0.0;
            for (int t = 0; t < c; ++t) corr += (resid[static_cast<size_t>(t)] + old * d[t]) * d[t];
            double z = corr / norm2[static_cast<size_t>(j)];
            double thr = lambda / norm2[static_cast<size_t>(j)];
            double a = std::fabs(z) - thr;
            double next = a > 0.0 ? (z > 0.0 ? a : -a) : 0.0;
            if (next != old) {
                for (int t = 0; t < c; ++t) resid[static_cast<size_t>(t)] -= (next - old) * d[t];
                moved += std::fabs(next - old);
            }
            s[static_cast<size_t>(j)] = next;
        }
        if (moved < 1e-14) break;
    }
    return s;
}

// sigma_1 and sigma_2 of a small matrix via deflated power iteration on the
// Gram matrix; enough to check rank-1 structure.
inline std::pair<double, double> top_two_singular_values(const atoms::Tensor& m) {
    int rows = m.dim(0), cols = m.dim(1);
    std::vector<double> gram(static_cast<size_t>(cols) * cols, 0.0);
    for (int i = 0; i < rows; ++i)
        for (int a = 0; a < cols; ++a)
            for (int b = 0; b < cols; ++b)
                gram[static_cast<size_t>(a) * cols + b] +=
                    static_cast<double>(m.at(i, a)) * m.at(i, b);

    auto power = [&](const std::vector<double>& g) {
        std::vector<double> v(static_cast<size_t>(cols), 1.0);
        double eig = 0.0;
        std::vector<double> w(static_cast<size_t>(cols));
        for (int it = 0; it < 500; ++it) {
            for (int a = 0; a < cols; ++a) {
                double acc = 0.0;
                for (int b = 0; b < cols; ++b) acc += g[static_cast<size_t>(a) * cols + b] * v[static_cast<size_t>(b)];
                w[static_cast<size_t>(a)] = acc;
            }
            double n = 0.0;
            for (double x : w) n += x * x;
            n = std::sqrt(n);
            if (n < 1e-30) return std::make_pair(0.0, v);
            eig = 0.0;
            for (int a = 0; a < cols; ++a) {
                eig += v[static_cast<size_t>(a)] * w[static_cast<size_t>(a)];
                v[static_cast<size_t>(a)] = w[static_cast<size_t>(a)] / n;
            }
        }
        return std::make_pair(eig, v);
    };

    auto [e1, v1] = power(gram);
    std::vector<double> deflated(gram);
    for (int a = 0; a < cols; ++a)
        for (int b = 0; b < cols; ++b)
            deflated[static_cast<size_t>(a) * cols + b] -= e1 * v1[static_cast<size_t>(a)] * v1[static_cast<size_t>(b)];
    auto [e2, v2] = power(deflated);
    return {std::sqrt(std::max(e1, 0.0)), std::sqrt(std::max(e2, 0.0))};
}

}  // namespace oracles

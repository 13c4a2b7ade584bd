#include "sparse/ista.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace atoms {

namespace {

double soft(double x, double t) {
    double a = std::fabs(x) - t;
    return a > 0.0 ? (x > 0.0 ? a : -a) : 0.0;
}

// Largest eigenvalue of D D^T by power iteration.
double max_eig_gram(const std::vector<double>& d, int m, int c, int iters) {
    std::vector<double> v(static_cast<size_t>(m), 1.0 / std::sqrt(static_cast<double>(m)));
    std::vector<double> dv(static_cast<size_t>(c));
    std::vector<double> w(static_cast<size_t>(m));
    double eig = 0.0;
    for (int it = 0; it < iters; ++it) {
        // w = D (D^T v)
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int i = 0; i < m; ++i) {
            double vi = v[static_cast<size_t>(i)];
            for (int t = 0; t < c; ++t) dv[static_cast<size_t>(t)] += vi * d[static_cast<size_t>(i) * c + t];
        }
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int t = 0; t < c; ++t) acc += d[static_cast<size_t>(i) * c + t] * dv[static_cast<size_t>(t)];
            w[static_cast<size_t>(i)] = acc;
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-30) return 0.0;
        eig = 0.0;
        for (int i = 0; i < m; ++i) {
            eig += v[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
            v[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] / norm;
        }
    }
    return std::max(eig, 0.0);
}

double objective(const std::vector<double>& x, const std::vector<double>& d,
                 const std::vector<double>& s, int n, int m, int c, double lambda) {
    double quad = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < c; ++t) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j)
                acc += s[static_cast<size_t>(i) * m + j] * d[static_cast<size_t>(j) * c + t];
            double r = x[static_cast<size_t>(i) * c + t] - acc;
            quad += r * r;
        }
    }
    double l1 = 0.0;
    for (double v : s) l1 += std::fabs(v);
    return 0.5 * quad + lambda * l1;
}

// grad = (S D - X) D^T, shape n x m
void gradient(const std::vector<double>& x, const std::vector<double>& d,
              const std::vector<double>& s, int n, int m, int c, std::vector<double>& resid,
              std::vector<double>& grad) {
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < c; ++t) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j)
                acc += s[static_cast<size_t>(i) * m + j] * d[static_cast<size_t>(j) * c + t];
            resid[static_cast<size_t>(i) * c + t] = acc - x[static_cast<size_t>(i) * c + t];
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int t = 0; t < c; ++t)
                acc += resid[static_cast<size_t>(i) * c + t] * d[static_cast<size_t>(j) * c + t];
            grad[static_cast<size_t>(i) * m + j] = acc;
        }
    }
}

}  // namespace

double sparse_code_objective(const Tensor& signal, const Tensor& dictionary, float lambda,
                             const Tensor& coeffs) {
    int n = signal.dim(0), c = signal.dim(1), m = dictionary.dim(0);
    std::vector<double> x(signal.data().begin(), signal.data().end());
    std::vector<double> d(dictionary.data().begin(), dictionary.data().end());
    std::vector<double> s(coeffs.data().begin(), coeffs.data().end());
    return objective(x, d, s, n, m, c, lambda);
}

Tensor ista_solve(const SparseCodeProblem& p, SolveDiagnostics* diag, bool accelerated) {
    if (p.signal.ndim() != 2 || p.dictionary.ndim() != 2)
        throw DimError("ista_solve: signal and dictionary must be 2-d");
    if (p.signal.dim(1) != p.dictionary.dim(1))
        throw DimError("ista_solve: feature widths differ, " + shape_str(p.signal.shape()) +
                       " vs " + shape_str(p.dictionary.shape()));
    if (!(p.lambda > 0.0f)) throw ContractError("ista_solve: lambda must be positive");
    if (p.max_iters < 1) throw ContractError("ista_solve: max_iters must be positive");
    if (!(p.tol > 0.0f)) throw ContractError("ista_solve: tol must be positive");
    for (float v : p.dictionary.data())
        if (!std::isfinite(v)) throw NumericError("ista_solve: dictionary has non-finite entries");

    int n = p.signal.dim(0), c = p.signal.dim(1), m = p.dictionary.dim(0);
    std::vector<double> x(p.signal.data().begin(), p.signal.data().end());
    std::vector<double> d(p.dictionary.data().begin(), p.dictionary.data().end());

    double lip = max_eig_gram(d, m, c, 20) * 1.1;  // 10% margin over the power-iteration estimate
    lip = std::max(lip, 1e-12);
    double step = 1.0 / lip;
    double lambda = static_cast<double>(p.lambda);

    std::vector<double> s(static_cast<size_t>(n) * m, 0.0);
    std::vector<double> s_prev(s);
    std::vector<double> y(s);
    std::vector<double> best(s);
    std::vector<double> resid(static_cast<size_t>(n) * c);
    std::vector<double> grad(static_cast<size_t>(n) * m);

    double obj = objective(x, d, s, n, m, c, lambda);
    double best_obj = obj;
    double t_accel = 1.0;
    bool converged = false;
    int iters = 0;
    int quiet_iters = 0;
    // The accelerated variant is non-monotone, so a single objective plateau
    // can occur mid-oscillation; require several in a row before stopping.
    const int quiet_needed = accelerated ? 5 : 1;

    for (int it = 0; it < p.max_iters; ++it) {
        ++iters;
        const std::vector<double>& base = accelerated ? y : s;
        gradient(x, d, base, n, m, c, resid, grad);
        s_prev = s;
        for (size_t i = 0; i < s.size(); ++i)
            s[i] = soft(base[i] - step * grad[i], step * lambda);

        if (accelerated) {
            double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_accel * t_accel));
            double coef = (t_accel - 1.0) / t_next;
            for (size_t i = 0; i < s.size(); ++i) y[i] = s[i] + coef * (s[i] - s_prev[i]);
            t_accel = t_next;
        }

        double next_obj = objective(x, d, s, n, m, c, lambda);
        if (next_obj < best_obj) {
            best_obj = next_obj;
            best = s;
        }
        double rel = std::fabs(obj - next_obj) / std::max(1.0, std::fabs(obj));
        obj = next_obj;
        quiet_iters = rel < static_cast<double>(p.tol) ? quiet_iters + 1 : 0;
        if (quiet_iters >= quiet_needed) {
            converged = true;
            break;
        }
    }

    if (diag) {
        diag->iterations = iters;
        diag->objective = best_obj;
        diag->converged = converged;
    }

    std::vector<float> out(best.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(best[i]);
    return Tensor::from_data({n, m}, std::move(out), false);
}

}  // namespace atoms

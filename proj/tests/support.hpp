#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "gkd/graphs.hpp"
#include "gkd/tensor.hpp"

namespace gkd::testing {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const Tensor& t) {
    Grid g(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) g[i][j] = t(i, j);
    return g;
}

inline Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo,
                            double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = u(rng);
    return Tensor::matrix(rows, cols, std::move(v), requires_grad);
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
    return worst;
}

// Brute-force reference pipeline on plain nested vectors, written without the
// tensor library: cosine, optional class mask, top-k with union, D^-1/2 W D^-1/2, power.
struct OracleGraph {
    Grid weights;
    Grid adjacency;
};

inline Grid oracle_cosine(const Grid& x) {
    const std::size_t n = x.size();
    Grid s(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double dot = 0, ni = 0, nj = 0;
            for (std::size_t c = 0; c < x[i].size(); ++c) {
                dot += x[i][c] * x[j][c];
                ni += x[i][c] * x[i][c];
                nj += x[j][c] * x[j][c];
            }
            if (ni == 0 || nj == 0) continue;
            s[i][j] = std::clamp(dot / (std::sqrt(ni) * std::sqrt(nj)), 0.0, 1.0);
        }
    }
    return s;
}

inline Grid oracle_topk_union(const Grid& s, std::size_t k) {
    const std::size_t n = s.size();
    std::vector<std::vector<bool>> kept(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t round = 0; round < k; ++round) {
            std::size_t best = n;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i || kept[i][j]) continue;
                if (best == n || s[i][j] > s[i][best]) best = j;
            }
            kept[i][best] = true;
        }
    }
    Grid w(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (kept[i][j] || kept[j][i]) w[i][j] = s[i][j];
    return w;
}

inline Grid oracle_normalize(const Grid& w) {
    const std::size_t n = w.size();
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (double v : w[i]) d[i] += v;
    Grid a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (d[i] > 0 && d[j] > 0) a[i][j] = w[i][j] / std::sqrt(d[i] * d[j]);
    return a;
}

inline Grid oracle_matmul(const Grid& a, const Grid& b) {
    Grid c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t t = 0; t < b.size(); ++t)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][t] * b[t][j];
    return c;
}

inline OracleGraph oracle_graph(const Grid& reps, std::size_t k, std::size_t p, MaskMode mask,
                                const std::vector<std::size_t>& labels = {}) {
    Grid s = oracle_cosine(reps);
    const std::size_t n = s.size();
    if (mask != MaskMode::all) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const bool same = labels[i] == labels[j];
                if ((mask == MaskMode::intra_class) != same) s[i][j] = 0.0;
            }
    }
    OracleGraph g;
    g.weights = oracle_topk_union(s, k);
    const Grid a = oracle_normalize(g.weights);
    g.adjacency = a;
    for (std::size_t i = 1; i < p; ++i) g.adjacency = oracle_matmul(g.adjacency, a);
    return g;
}

// Central differences of a scalar function of one tensor's entries.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor&)>& f,
                                            const Tensor& at, double step = 1e-6) {
    std::vector<double> base(at.values().begin(), at.values().end());
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto plus = base, minus = base;
        plus[i] += step;
        minus[i] -= step;
        grad[i] = (f(Tensor(at.shape(), plus)) - f(Tensor(at.shape(), minus))) / (2 * step);
    }
    return grad;
}

// ‖a − n‖₂ / max(‖n‖₂, 1e-12).
inline double gradient_relative_error(std::span<const double> analytic,
                                      std::span<const double> numeric) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        norm += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

}  // namespace gkd::testing

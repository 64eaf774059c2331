#include "gkd/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gkd/errors.hpp"

namespace gkd {

namespace {

void require_square(const Tensor& m, const char* what) {
    if (m.rank() != 2 || m.rows() != m.cols()) {
        throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                             shape_string(m.shape()));
    }
}

void require_graph_weights(const Tensor& w, const char* what) {
    require_square(w, what);
    const std::size_t n = w.rows();
    auto v = w.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double x = v[i * n + j];
            if (x < 0.0) {
                throw ContractError(std::string(what) + ": negative weight at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
            if (std::abs(x - v[j * n + i]) > 1e-12 * std::max(1.0, std::abs(x))) {
                throw ContractError(std::string(what) + ": weights are not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }
}

// q > 0 ? q^{-1/2} : 0, the pseudo-inverse square root.
Tensor inverse_sqrt_or_zero(const Tensor& q) {
    return map(
        q, [](double x) { return x > 0.0 ? 1.0 / std::sqrt(x) : 0.0; },
        [](double x) { return x > 0.0 ? -0.5 / (x * std::sqrt(x)) : 0.0; });
}

Tensor sqrt_or_zero(const Tensor& q) {
    return map(
        q, [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; },
        [](double x) { return x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; });
}

void check_signal(std::size_t n, const GraphSignal& s, const char* what) {
    if (s.values.size() != n) {
        throw DimensionError(std::string(what) + ": signal of length " +
                             std::to_string(s.values.size()) + " on a " + std::to_string(n) +
                             "-node graph");
    }
}

}  // namespace

std::string to_string(MaskMode mode) {
    switch (mode) {
        case MaskMode::all:
            return "all";
        case MaskMode::inter_class:
            return "inter_class";
        case MaskMode::intra_class:
            return "intra_class";
    }
    return "all";
}

MaskMode parse_mask_mode(const std::string& text) {
    if (text == "all") return MaskMode::all;
    if (text == "inter_class" || text == "inter") return MaskMode::inter_class;
    if (text == "intra_class" || text == "intra") return MaskMode::intra_class;
    throw ConfigError("unknown mask mode '" + text + "' (expected all, inter_class, intra_class)");
}

Tensor cosine_similarity_matrix(const Tensor& reps) {
    if (reps.rank() != 2) {
        throw DimensionError("cosine_similarity_matrix: expected n×d representations, got " +
                             shape_string(reps.shape()));
    }
    const std::size_t n = reps.rows();
    if (n < 2) throw ContractError("cosine_similarity_matrix: need at least 2 rows");

    // Divide by the norm product rather than multiplying inverses: parallel rows then give
    // exactly 1, so mathematically tied neighbours stay tied for the top-k pass.
    const Tensor norm = sqrt_or_zero(sum(square(reps), 1));
    const Tensor denom = outer(norm, norm);
    std::vector<double> pad(n * n, 0.0);
    for (std::size_t i = 0; i < n * n; ++i) pad[i] = denom.values()[i] == 0.0 ? 1.0 : 0.0;
    // Zero rows have a zero gram row too, so the padded entries come out as 0.
    const Tensor cosine =
        matmul(reps, transpose(reps)) / (denom + Tensor::matrix(n, n, std::move(pad)));
    // Negative similarities drop to 0; round-off above 1 is pinned to 1.
    const Tensor clamped = map(
        cosine, [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
        [](double x) { return x > 0.0 && x <= 1.0 ? 1.0 : 0.0; });
    std::vector<double> off(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) off[i * n + i] = 0.0;
    return clamped * Tensor::matrix(n, n, std::move(off));
}

Tensor knn_sparsify(const Tensor& similarity, std::size_t k) {
    require_square(similarity, "knn_sparsify");
    const std::size_t n = similarity.rows();
    if (k < 1 || k + 1 > n) {
        throw ContractError("knn_sparsify: k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(n - 1) + "]");
    }
    auto s = similarity.values();
    std::vector<char> kept(n * n, 0);
    std::vector<std::size_t> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t slot = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order[slot++] = j;
        auto by_weight = [&](std::size_t a, std::size_t b) {
            const double wa = s[i * n + a], wb = s[i * n + b];
            return wa > wb || (wa == wb && a < b);
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), by_weight);
        for (std::size_t r = 0; r < k; ++r) kept[i * n + order[r]] = 1;
    }
    // max(kept, keptᵀ) expressed as a gather so gradients reach the surviving entry.
    std::vector<std::size_t> source(n * n, kNoIndex);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const std::size_t ij = i * n + j, ji = j * n + i;
            const double a = kept[ij] ? s[ij] : 0.0;
            const double b = kept[ji] ? s[ji] : 0.0;
            if (!kept[ij] && !kept[ji]) continue;
            if (a >= b) {
                if (kept[ij] && a >= 0.0) source[ij] = ij;
                else if (kept[ji] && b >= 0.0) source[ij] = ji;
            } else {
                source[ij] = ji;
            }
        }
    }
    return take(similarity, source, {n, n});
}

Tensor degree_normalize(const Tensor& weights) {
    require_graph_weights(weights, "degree_normalize");
    const Tensor inv_sqrt_degree = inverse_sqrt_or_zero(sum(weights, 1));
    return weights * outer(inv_sqrt_degree, inv_sqrt_degree);
}

Tensor adjacency_power(const Tensor& adjacency, std::size_t p) {
    require_square(adjacency, "adjacency_power");
    if (p < 1) throw ContractError("adjacency_power: p must be at least 1");
    Tensor result = adjacency;
    for (std::size_t i = 1; i < p; ++i) result = matmul(result, adjacency);
    return result;
}

Tensor class_mask(const Tensor& similarity, std::span<const std::size_t> labels, MaskMode mode) {
    require_square(similarity, "class_mask");
    const std::size_t n = similarity.rows();
    if (labels.size() != n) {
        throw DimensionError("class_mask: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " nodes");
    }
    if (mode == MaskMode::all) return similarity;
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool same = labels[i] == labels[j];
            mask[i * n + j] = (mode == MaskMode::intra_class) == same ? 1.0 : 0.0;
        }
    }
    return similarity * Tensor::matrix(n, n, std::move(mask));
}

Tensor laplacian(const Tensor& weights) {
    require_graph_weights(weights, "laplacian");
    const std::size_t n = weights.rows();
    std::vector<std::size_t> diagonal(n * n, kNoIndex);
    for (std::size_t i = 0; i < n; ++i) diagonal[i * n + i] = i;
    return take(sum(weights, 1), diagonal, {n, n}) - weights;
}

double smoothness(const Tensor& laplacian, const GraphSignal& signal) {
    require_square(laplacian, "smoothness");
    const std::size_t n = laplacian.rows();
    check_signal(n, signal, "smoothness");
    auto l = laplacian.values();
    // L·1 = 0, so shifting by s[0] leaves sᵀLs unchanged and makes constants exactly 0.
    std::vector<double> s(signal.values);
    const double shift = s.empty() ? 0.0 : s[0];
    for (double& v : s) v -= shift;
    double sigma = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += l[i * n + j] * s[j];
        sigma += s[i] * row;
    }
    return sigma;
}

double smoothness_edges(const Tensor& weights, const GraphSignal& signal) {
    require_square(weights, "smoothness_edges");
    const std::size_t n = weights.rows();
    check_signal(n, signal, "smoothness_edges");
    auto w = weights.values();
    const auto& s = signal.values;
    double sigma = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = s[i] - s[j];
            sigma += w[i * n + j] * d * d;
        }
    }
    return sigma;
}

EigenDecomposition symmetric_eig(const Tensor& matrix) {
    require_square(matrix, "symmetric_eig");
    const std::size_t n = matrix.rows();
    if (n > 4096) throw ContractError("symmetric_eig: n above 4096");
    std::vector<double> a(matrix.values().begin(), matrix.values().end());

    double frob = 0.0;
    for (double x : a) frob += x * x;
    frob = std::sqrt(frob);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-12 * std::max(1.0, frob)) {
                throw ContractError("symmetric_eig: matrix is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }

    // Rows of vt are eigenvectors, kept row-major so rotations touch contiguous memory.
    std::vector<double> vt(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vt[i * n + i] = 1.0;

    auto off_norm = [&] {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) off += a[i * n + j] * a[i * n + j];
        return std::sqrt(off);
    };

    const double target = 1e-10 * frob;
    std::size_t sweeps = 0;
    constexpr std::size_t kMaxSweeps = 100;
    while (frob > 0.0 && off_norm() >= target) {
        if (sweeps == kMaxSweeps) throw Error("symmetric_eig: Jacobi sweeps did not converge");
        ++sweeps;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                double* rp = a.data() + p * n;
                double* rq = a.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double xp = rp[k], xq = rq[k];
                    rp[k] = c * xp - s * xq;
                    rq[k] = s * xp + c * xq;
                    a[k * n + p] = rp[k];
                    a[k * n + q] = rq[k];
                }
                rp[p] = app - t * apq;
                rq[q] = aqq + t * apq;
                rp[q] = 0.0;
                rq[p] = 0.0;

                double* vp = vt.data() + p * n;
                double* vq = vt.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    const double xp = vp[k], xq = vq[k];
                    vp[k] = c * xp - s * xq;
                    vq[k] = s * xp + c * xq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });

    EigenDecomposition result;
    result.sweeps = sweeps;
    std::vector<double> vectors(n * n);
    for (std::size_t col = 0; col < n; ++col) {
        const std::size_t src = order[col];
        result.values.push_back(a[src * n + src]);
        for (std::size_t row = 0; row < n; ++row) vectors[row * n + col] = vt[src * n + row];
    }
    result.vectors = Tensor::matrix(n, n, std::move(vectors));
    return result;
}

GraphSignal fiedler_vector(const Tensor& laplacian) {
    return fiedler_vector(laplacian, nullptr, nullptr);
}

GraphSignal fiedler_vector(const Tensor& laplacian, double* lambda2, double* lambda3) {
    require_square(laplacian, "fiedler_vector");
    const std::size_t n = laplacian.rows();
    if (n < 2) throw ContractError("fiedler_vector: need at least 2 nodes");
    const EigenDecomposition eig = symmetric_eig(laplacian);
    GraphSignal signal{std::vector<double>(n), "fiedler"};
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        signal.values[i] = eig.vectors(i, 1);
        norm += signal.values[i] * signal.values[i];
    }
    norm = std::sqrt(norm);
    double sign = 1.0;
    for (double v : signal.values) {
        if (std::abs(v) > 1e-12) {
            sign = v > 0.0 ? 1.0 : -1.0;
            break;
        }
    }
    for (double& v : signal.values) v *= sign / norm;
    if (lambda2) *lambda2 = eig.values[1];
    if (lambda3) *lambda3 = n > 2 ? eig.values[2] : eig.values[1];
    return signal;
}

SimilarityGraph build_similarity_graph(const Tensor& reps, const GraphParams& params,
                                       std::optional<std::span<const std::size_t>> labels) {
    Tensor similarity = cosine_similarity_matrix(reps);
    const std::size_t n = similarity.rows();
    if (params.mask != MaskMode::all) {
        if (!labels) throw ContractError("build_similarity_graph: class mask needs labels");
        similarity = class_mask(similarity, *labels, params.mask);
    }
    const std::size_t k = params.k == 0 ? n - 1 : params.k;
    Tensor weights = k + 1 == n ? similarity : knn_sparsify(similarity, k);
    Tensor adjacency = adjacency_power(degree_normalize(weights), params.p);
    return {n, std::move(weights), std::move(adjacency), params};
}

}  // namespace gkd

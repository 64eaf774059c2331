#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd {

enum class MaskMode { all, inter_class, intra_class };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& text);

struct GraphParams {
    std::size_t k = 0;  // 0 selects the dense graph, k = n - 1
    std::size_t p = 1;
    MaskMode mask = MaskMode::all;

    friend bool operator==(const GraphParams&, const GraphParams&) = default;
};

/// Per-layer latent graph over a batch. `adjacency` holds the degree-normalized
/// adjacency raised to params.p.
struct SimilarityGraph {
    std::size_t n = 0;
    Tensor weights;
    Tensor adjacency;
    GraphParams params;
};

struct GraphSignal {
    std::vector<double> values;
    std::string name;
};

struct EigenDecomposition {
    std::vector<double> values;  // ascending
    Tensor vectors;              // n×n, column j pairs with values[j]
    std::size_t sweeps = 0;
};

// All matrix-valued operations are differentiable through their Tensor inputs;
// discrete choices (k-NN topology, class masks) are constants on the tape.

/// Pairwise cosine similarity with zero rows mapping to zero, negatives clamped
/// to 0 and the diagonal forced to 0.
Tensor cosine_similarity_matrix(const Tensor& reps);

/// Keeps the k largest off-diagonal entries per row (ties to the lower column),
/// then symmetrizes by union, W = max(kept, keptᵀ).
Tensor knn_sparsify(const Tensor& similarity, std::size_t k);

/// D^{-1/2} W D^{-1/2}; zero-degree nodes get zero rows and columns.
Tensor degree_normalize(const Tensor& weights);

Tensor adjacency_power(const Tensor& adjacency, std::size_t p);

Tensor class_mask(const Tensor& similarity, std::span<const std::size_t> labels, MaskMode mode);

/// L = D - W.
Tensor laplacian(const Tensor& weights);

/// sᵀ L s.
double smoothness(const Tensor& laplacian, const GraphSignal& signal);
/// Σ_{i<j} W[i][j] (s_i - s_j)², the edge-sum form of the same quantity.
double smoothness_edges(const Tensor& weights, const GraphSignal& signal);

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-10·‖M‖_F. Eigenvalues sorted ascending, ties kept in diagonal order.
EigenDecomposition symmetric_eig(const Tensor& matrix);

/// Unit eigenvector of the second-smallest Laplacian eigenvalue, signed so its
/// first nonzero component is positive.
GraphSignal fiedler_vector(const Tensor& laplacian);
/// Same, also reporting λ₂ and λ₃ so callers can detect degeneracy.
GraphSignal fiedler_vector(const Tensor& laplacian, double* lambda2, double* lambda3);

/// cosine → class mask → k-NN → normalize → power.
SimilarityGraph build_similarity_graph(const Tensor& reps, const GraphParams& params,
                                       std::optional<std::span<const std::size_t>> labels = {});

}  // namespace gkd

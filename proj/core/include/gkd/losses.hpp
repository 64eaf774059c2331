#pragma once

#include <span>
#include <vector>

#include "gkd/graphs.hpp"
#include "gkd/tensor.hpp"

namespace gkd {

struct LossBreakdown {
    double task = 0.0;
    double kd = 0.0;
    double lambda_kd = 0.0;
    double total = 0.0;
    std::vector<double> per_example_kd;
};

/// Mean softmax cross-entropy over the batch.
Tensor task_loss(const Tensor& logits, std::span<const std::size_t> labels);

/// Huber loss with threshold 1.
double huber(double x, double y);
/// Elementwise Huber of a difference tensor, differentiable.
Tensor huber(const Tensor& diff);

/// Σ_ℓ Σ_x ‖x^S_ℓ − x^T_ℓ‖² / (|X|·|Λ|). Teacher taps are treated as constants.
Tensor ikd_loss(std::span<const Tensor> student_taps, std::span<const Tensor> teacher_taps);

/// Σ_ℓ mean over ordered pairs x ≠ x′ of Huber(d^S/Δ^S, d^T/Δ^T), where d is the
/// Euclidean distance and Δ its mean over the same pairs.
Tensor rkdd_loss(std::span<const Tensor> student_taps, std::span<const Tensor> teacher_taps);

/// Σ_ℓ ‖A^S_ℓ − A^T_ℓ‖_F². Teacher adjacencies are treated as constants.
Tensor gkd_loss(std::span<const SimilarityGraph> student_graphs,
                std::span<const SimilarityGraph> teacher_graphs);

/// task + λ·kd with λ ≥ 0.
LossBreakdown combined_loss(double task, double kd, double lambda_kd);
Tensor combined_loss(const Tensor& task, const Tensor& kd, double lambda_kd);

// Per-example attributions; each vector sums to the corresponding loss.

/// Row i carries Σ_j (A_S[i][j] − A_T[i][j])².
std::vector<double> per_example_gkd(const Tensor& student_adjacency,
                                    const Tensor& teacher_adjacency);
/// Each ordered pair's Huber term is split evenly between its two endpoints.
std::vector<double> per_example_rkdd(std::span<const Tensor> student_taps,
                                     std::span<const Tensor> teacher_taps);
std::vector<double> per_example_ikd(std::span<const Tensor> student_taps,
                                    std::span<const Tensor> teacher_taps);

}  // namespace gkd

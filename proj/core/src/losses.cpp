#include "gkd/losses.hpp"

#include <cmath>

#include "gkd/errors.hpp"

namespace gkd {

namespace {

void require_pairing(std::size_t student, std::size_t teacher, const char* what) {
    if (student != teacher) {
        throw DimensionError(std::string(what) + ": " + std::to_string(student) +
                             " student taps vs " + std::to_string(teacher) + " teacher taps");
    }
    if (student == 0) throw ContractError(std::string(what) + ": no taps");
}

std::size_t batch_rows(const Tensor& s, const Tensor& t, const char* what) {
    if (s.rank() != 2 || t.rank() != 2 || s.rows() != t.rows()) {
        throw DimensionError(std::string(what) + ": batch mismatch " + shape_string(s.shape()) +
                             " vs " + shape_string(t.shape()));
    }
    return s.rows();
}

struct PairIndex {
    std::vector<std::size_t> left, right;
};

// Ordered pairs (i, j), i ≠ j, row-major.
PairIndex ordered_pairs(std::size_t n) {
    PairIndex pairs;
    pairs.left.reserve(n * (n - 1));
    pairs.right.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            pairs.left.push_back(i);
            pairs.right.push_back(j);
        }
    }
    return pairs;
}

// Pairwise distances divided by their mean; all zeros when the mean is zero.
Tensor normalized_distances(const Tensor& reps, const PairIndex& pairs) {
    const Tensor diff = gather_rows(reps, pairs.left) - gather_rows(reps, pairs.right);
    const Tensor dist = map(
        sum(square(diff), 1), [](double q) { return std::sqrt(q); },
        [](double q) { return q > 0.0 ? 0.5 / std::sqrt(q) : 0.0; });
    const Tensor delta = mean(dist);
    if (delta.item() == 0.0) return Tensor::zeros(dist.shape());
    return dist / delta;
}

}  // namespace

Tensor task_loss(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2 || labels.size() != logits.rows()) {
        throw DimensionError("task_loss: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_string(logits.shape()));
    }
    const std::size_t n = logits.rows(), c = logits.cols();
    auto v = logits.values();
    std::vector<double> shift(n * c);
    std::vector<std::size_t> picked(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c) {
            throw ContractError("task_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                                std::to_string(c) + ")");
        }
        double m = v[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, v[i * c + j]);
        std::fill_n(shift.begin() + static_cast<std::ptrdiff_t>(i * c), c, m);
        picked[i] = i * c + labels[i];
    }
    const Tensor shifted = logits - Tensor::matrix(n, c, std::move(shift));
    const Tensor log_sum_exp = log(sum(exp(shifted), 1));
    return mean(log_sum_exp - take(shifted, picked, {n}));
}

double huber(double x, double y) {
    const double d = std::abs(x - y);
    return d <= 1.0 ? 0.5 * d * d : d - 0.5;
}

Tensor huber(const Tensor& diff) {
    return map(
        diff,
        [](double d) {
            const double a = std::abs(d);
            return a <= 1.0 ? 0.5 * d * d : a - 0.5;
        },
        [](double d) { return d > 1.0 ? 1.0 : (d < -1.0 ? -1.0 : d); });
}

Tensor ikd_loss(std::span<const Tensor> student_taps, std::span<const Tensor> teacher_taps) {
    require_pairing(student_taps.size(), teacher_taps.size(), "ikd_loss");
    Tensor total = Tensor::scalar(0.0);
    const std::size_t n = batch_rows(student_taps[0], teacher_taps[0], "ikd_loss");
    for (std::size_t l = 0; l < student_taps.size(); ++l) {
        const Tensor& s = student_taps[l];
        const Tensor& t = teacher_taps[l];
        if (s.shape() != t.shape()) {
            throw DimensionError(
                "ikd_loss: IKD requires student and teacher representations of the same "
                "dimension; tap " +
                std::to_string(l + 1) + " is " + shape_string(s.shape()) + " vs " +
                shape_string(t.shape()));
        }
        total = total + sum(square(s - t.detach()));
    }
    return total * (1.0 / static_cast<double>(n * student_taps.size()));
}

Tensor rkdd_loss(std::span<const Tensor> student_taps, std::span<const Tensor> teacher_taps) {
    require_pairing(student_taps.size(), teacher_taps.size(), "rkdd_loss");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t l = 0; l < student_taps.size(); ++l) {
        const std::size_t n = batch_rows(student_taps[l], teacher_taps[l], "rkdd_loss");
        if (n < 2) throw ContractError("rkdd_loss: need at least 2 examples per batch");
        const PairIndex pairs = ordered_pairs(n);
        const Tensor s = normalized_distances(student_taps[l], pairs);
        const Tensor t = normalized_distances(teacher_taps[l].detach(), pairs);
        total = total + mean(huber(s - t));
    }
    return total;
}

Tensor gkd_loss(std::span<const SimilarityGraph> student_graphs,
                std::span<const SimilarityGraph> teacher_graphs) {
    require_pairing(student_graphs.size(), teacher_graphs.size(), "gkd_loss");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t l = 0; l < student_graphs.size(); ++l) {
        const SimilarityGraph& s = student_graphs[l];
        const SimilarityGraph& t = teacher_graphs[l];
        if (s.n != t.n) {
            throw DimensionError("gkd_loss: layer " + std::to_string(l + 1) + " has " +
                                 std::to_string(s.n) + " student nodes vs " + std::to_string(t.n) +
                                 " teacher nodes");
        }
        total = total + sum(square(s.adjacency - t.adjacency.detach()));
    }
    return total;
}

LossBreakdown combined_loss(double task, double kd, double lambda_kd) {
    if (!(lambda_kd >= 0.0)) throw ContractError("combined_loss: lambda_kd must be nonnegative");
    return {task, kd, lambda_kd, task + lambda_kd * kd, {}};
}

Tensor combined_loss(const Tensor& task, const Tensor& kd, double lambda_kd) {
    if (!(lambda_kd >= 0.0)) throw ContractError("combined_loss: lambda_kd must be nonnegative");
    return task + kd * lambda_kd;
}

std::vector<double> per_example_gkd(const Tensor& student_adjacency,
                                    const Tensor& teacher_adjacency) {
    if (student_adjacency.shape() != teacher_adjacency.shape() || student_adjacency.rank() != 2) {
        throw DimensionError("per_example_gkd: shapes " + shape_string(student_adjacency.shape()) +
                             " and " + shape_string(teacher_adjacency.shape()));
    }
    const std::size_t n = student_adjacency.rows(), m = student_adjacency.cols();
    auto s = student_adjacency.values();
    auto t = teacher_adjacency.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double d = s[i * m + j] - t[i * m + j];
            out[i] += d * d;
        }
    }
    return out;
}

std::vector<double> per_example_rkdd(std::span<const Tensor> student_taps,
                                     std::span<const Tensor> teacher_taps) {
    require_pairing(student_taps.size(), teacher_taps.size(), "per_example_rkdd");
    const std::size_t n = batch_rows(student_taps[0], teacher_taps[0], "per_example_rkdd");
    if (n < 2) throw ContractError("per_example_rkdd: need at least 2 examples per batch");
    const PairIndex pairs = ordered_pairs(n);
    const double pair_count = static_cast<double>(pairs.left.size());
    std::vector<double> out(n, 0.0);
    for (std::size_t l = 0; l < student_taps.size(); ++l) {
        batch_rows(student_taps[l], teacher_taps[l], "per_example_rkdd");
        const Tensor s = normalized_distances(student_taps[l].detach(), pairs);
        const Tensor t = normalized_distances(teacher_taps[l].detach(), pairs);
        for (std::size_t p = 0; p < pairs.left.size(); ++p) {
            const double h = huber(s(p), t(p)) / pair_count;
            out[pairs.left[p]] += 0.5 * h;
            out[pairs.right[p]] += 0.5 * h;
        }
    }
    return out;
}

std::vector<double> per_example_ikd(std::span<const Tensor> student_taps,
                                    std::span<const Tensor> teacher_taps) {
    require_pairing(student_taps.size(), teacher_taps.size(), "per_example_ikd");
    const std::size_t n = batch_rows(student_taps[0], teacher_taps[0], "per_example_ikd");
    const double scale = 1.0 / static_cast<double>(n * student_taps.size());
    std::vector<double> out(n, 0.0);
    for (std::size_t l = 0; l < student_taps.size(); ++l) {
        const Tensor& s = student_taps[l];
        const Tensor& t = teacher_taps[l];
        if (s.shape() != t.shape()) {
            throw DimensionError("per_example_ikd: IKD requires equal representation dimensions");
        }
        const std::size_t d = s.cols();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = s(i, j) - t(i, j);
                out[i] += diff * diff * scale;
            }
        }
    }
    return out;
}

}  // namespace gkd

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkd/datasets.hpp"
#include "gkd/graphs.hpp"
#include "gkd/losses.hpp"
#include "gkd/models.hpp"

namespace gkd {

enum class KdLoss { vanilla, ikd, rkdd, gkd };

std::string to_string(KdLoss loss);
KdLoss parse_kd_loss(const std::string& text);

struct Schedule {
    double base_lr = 0.1;
    double decay_factor = 0.2;
    std::vector<std::size_t> milestones{20, 40, 50};
    std::size_t total_epochs = 60;

    // 200 epochs, ×0.2 at 60/120/160.
    static Schedule reference();
    void validate() const;
};

/// base_lr · decay^(number of milestones ≤ epoch).
double lr_at(const Schedule& schedule, std::size_t epoch);

struct OptimizerState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::vector<std::vector<double>> velocity;  // mirrors parameter shapes; lazily sized
};

/// Heavy-ball step: v ← μ·v + g; w ← w − lr·v. Parameters without a gradient see g = 0.
void sgd_momentum_step(std::span<Tensor> params, OptimizerState& state);

struct TrainOptions {
    KdLoss loss = KdLoss::vanilla;
    double lambda_kd = 0.0;
    GraphParams graph;
    Schedule schedule;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;  // batch means over the epoch
    double task = 0.0;
    double kd = 0.0;
    double train_error = 0.0;  // full-pass errors after the epoch's updates
    double test_error = 0.0;
};

struct TrainResult {
    BlockNet net;
    std::vector<EpochMetrics> history;

    double final_test_error() const { return history.empty() ? 1.0 : history.back().test_error; }
};

/// Fraction of misclassified rows.
double error_rate(const BlockNet& net, const Dataset& data);

/// Combined objective for one batch; the KD term is omitted when λ = 0 or the
/// loss is vanilla. `teacher` must be present for KD losses.
struct BatchObjective {
    Tensor total;
    LossBreakdown breakdown;
};
BatchObjective batch_objective(const BlockNet& student, const BlockNet* teacher,
                               const Tensor& batch, std::span<const std::size_t> labels,
                               const TrainOptions& options);

/// Configuration errors that would surface mid-run, raised before any step.
void check_train_setup(const BlockNet& student, const BlockNet* teacher,
                       const TrainOptions& options);

/// Trains a copy of `initial`; the teacher is never modified.
TrainResult train(const BlockNet& initial, const Dataset& train_data, const Dataset& test_data,
                  const TrainOptions& options, const BlockNet* teacher = nullptr);

}  // namespace gkd

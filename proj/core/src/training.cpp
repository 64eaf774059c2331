#include "gkd/training.hpp"

#include <algorithm>

#include "gkd/errors.hpp"

namespace gkd {

std::string to_string(KdLoss loss) {
    switch (loss) {
        case KdLoss::vanilla:
            return "vanilla";
        case KdLoss::ikd:
            return "ikd";
        case KdLoss::rkdd:
            return "rkdd";
        case KdLoss::gkd:
            return "gkd";
    }
    return "vanilla";
}

KdLoss parse_kd_loss(const std::string& text) {
    if (text == "vanilla") return KdLoss::vanilla;
    if (text == "ikd") return KdLoss::ikd;
    if (text == "rkdd" || text == "rkd-d") return KdLoss::rkdd;
    if (text == "gkd") return KdLoss::gkd;
    throw ConfigError("unknown loss '" + text + "' (expected vanilla, ikd, rkdd, gkd)");
}

Schedule Schedule::reference() { return {0.1, 0.2, {60, 120, 160}, 200}; }

void Schedule::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("schedule: base_lr must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("schedule: decay_factor must be positive");
    if (total_epochs == 0) throw ConfigError("schedule: total_epochs must be positive");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] >= total_epochs) {
            throw ConfigError("schedule: milestone " + std::to_string(milestones[i]) +
                              " not below total_epochs");
        }
        if (i > 0 && milestones[i] <= milestones[i - 1]) {
            throw ConfigError("schedule: milestones must be strictly increasing");
        }
    }
}

double lr_at(const Schedule& schedule, std::size_t epoch) {
    if (epoch >= schedule.total_epochs) {
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(schedule.total_epochs) + ")");
    }
    double lr = schedule.base_lr;
    for (std::size_t m : schedule.milestones)
        if (m <= epoch) lr *= schedule.decay_factor;
    return lr;
}

void sgd_momentum_step(std::span<Tensor> params, OptimizerState& state) {
    if (state.velocity.empty()) {
        for (const Tensor& p : params) state.velocity.emplace_back(p.numel(), 0.0);
    }
    if (state.velocity.size() != params.size()) {
        throw DimensionError("sgd_momentum_step: " + std::to_string(state.velocity.size()) +
                             " velocity buffers for " + std::to_string(params.size()) +
                             " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = state.velocity[i];
        auto w = params[i].mutable_values();
        if (v.size() != w.size()) {
            throw DimensionError("sgd_momentum_step: velocity shape mismatch at parameter " +
                                 std::to_string(i));
        }
        auto g = params[i].grad();
        const bool has_grad = !g.empty();
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = state.momentum * v[j] + (has_grad ? g[j] : 0.0);
            w[j] -= state.learning_rate * v[j];
        }
    }
}

double error_rate(const BlockNet& net, const Dataset& data) {
    const auto predicted = predict(net, data.features);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != data.labels[i];
    return static_cast<double>(wrong) / static_cast<double>(predicted.size());
}

void check_train_setup(const BlockNet& student, const BlockNet* teacher,
                       const TrainOptions& options) {
    options.schedule.validate();
    if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(options.momentum >= 0.0 && options.momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!(options.lambda_kd >= 0.0)) throw ConfigError("lambda_kd must be nonnegative");
    if (options.loss == KdLoss::vanilla || options.lambda_kd == 0.0) return;

    if (!teacher) throw ConfigError(to_string(options.loss) + " distillation needs a teacher");
    const Architecture& s = student.architecture();
    const Architecture& t = teacher->architecture();
    if (s.input_dim != t.input_dim || s.classes != t.classes) {
        throw ConfigError("teacher and student disagree on input_dim or classes");
    }
    if (student.taps().size() != teacher->taps().size()) {
        throw ConfigError("teacher and student must export the same number of taps (" +
                          std::to_string(teacher->taps().size()) + " vs " +
                          std::to_string(student.taps().size()) + ")");
    }
    if (options.loss == KdLoss::ikd) {
        for (std::size_t i = 0; i < student.taps().blocks.size(); ++i) {
            const std::size_t sw = s.widths[student.taps().blocks[i] - 1];
            const std::size_t tw = t.widths[teacher->taps().blocks[i] - 1];
            if (sw != tw) {
                throw ConfigError("ikd requires teacher and student representations of the same "
                                  "dimension; tap " +
                                  std::to_string(i + 1) + " has width " + std::to_string(sw) +
                                  " vs " + std::to_string(tw));
            }
        }
        if (student.taps().logits != teacher->taps().logits) {
            throw ConfigError("ikd requires the logits tap on both networks or neither");
        }
    }
    if (options.loss == KdLoss::gkd) {
        if (options.graph.p < 1) throw ConfigError("gkd: p must be at least 1");
        if (options.graph.k + 1 > options.batch_size) {
            throw ConfigError("gkd: k = " + std::to_string(options.graph.k) +
                              " exceeds batch_size - 1");
        }
    }
}

BatchObjective batch_objective(const BlockNet& student, const BlockNet* teacher,
                               const Tensor& batch, std::span<const std::size_t> labels,
                               const TrainOptions& options) {
    const TapOutput out = student.forward(batch);
    const Tensor task = task_loss(out.logits, labels);
    const std::size_t n = batch.rows();
    // Relational losses need two examples; a trailing singleton batch trains on the task only.
    if (options.loss == KdLoss::vanilla || options.lambda_kd == 0.0 || n < 2) {
        return {task, combined_loss(task.item(), 0.0, options.lambda_kd)};
    }
    if (!teacher) throw ConfigError(to_string(options.loss) + " distillation needs a teacher");
    const TapOutput target = teacher->forward(batch);

    Tensor kd;
    std::vector<double> per_example;
    switch (options.loss) {
        case KdLoss::ikd:
            kd = ikd_loss(out.taps, target.taps);
            per_example = per_example_ikd(out.taps, target.taps);
            break;
        case KdLoss::rkdd:
            kd = rkdd_loss(out.taps, target.taps);
            per_example = per_example_rkdd(out.taps, target.taps);
            break;
        case KdLoss::gkd: {
            GraphParams params = options.graph;
            // Short trailing batches cap k at the dense graph.
            if (params.k == 0 || params.k + 1 > n) params.k = n - 1;
            std::vector<SimilarityGraph> student_graphs, teacher_graphs;
            for (std::size_t l = 0; l < out.taps.size(); ++l) {
                student_graphs.push_back(build_similarity_graph(out.taps[l], params, labels));
                teacher_graphs.push_back(build_similarity_graph(target.taps[l], params, labels));
            }
            kd = gkd_loss(student_graphs, teacher_graphs);
            per_example.assign(n, 0.0);
            for (std::size_t l = 0; l < out.taps.size(); ++l) {
                const auto row = per_example_gkd(student_graphs[l].adjacency,
                                                 teacher_graphs[l].adjacency);
                for (std::size_t i = 0; i < n; ++i) per_example[i] += row[i];
            }
            break;
        }
        case KdLoss::vanilla:
            break;
    }
    BatchObjective objective{combined_loss(task, kd, options.lambda_kd),
                             combined_loss(task.item(), kd.item(), options.lambda_kd)};
    objective.breakdown.per_example_kd = std::move(per_example);
    return objective;
}

TrainResult train(const BlockNet& initial, const Dataset& train_data, const Dataset& test_data,
                  const TrainOptions& options, const BlockNet* teacher) {
    check_train_setup(initial, teacher, options);
    BlockNet student = initial.clone();
    student.set_trainable(true);
    std::optional<BlockNet> frozen;
    if (teacher) {
        frozen = teacher->clone();
        frozen->set_trainable(false);
    }
    const BlockNet* target = frozen ? &*frozen : nullptr;

    OptimizerState state{options.schedule.base_lr, options.momentum, {}};
    std::vector<Tensor> params = student.parameters();
    const Tensor features = train_data.features.detach();

    TrainResult result{student, {}};
    for (std::size_t epoch = 0; epoch < options.schedule.total_epochs; ++epoch) {
        state.learning_rate = lr_at(options.schedule, epoch);
        EpochMetrics row;
        row.epoch = epoch;
        row.lr = state.learning_rate;
        const auto batches = epoch_batches(train_data.size(), options.batch_size, options.seed, epoch);
        for (const auto& idx : batches) {
            const Tensor x = gather_rows(features, idx);
            std::vector<std::size_t> y;
            y.reserve(idx.size());
            for (std::size_t i : idx) y.push_back(train_data.labels[i]);

            BatchObjective objective = batch_objective(student, target, x, y, options);
            backward(objective.total);
            sgd_momentum_step(params, state);
            student.zero_grad();

            row.loss += objective.breakdown.total;
            row.task += objective.breakdown.task;
            row.kd += objective.breakdown.kd;
        }
        const auto count = static_cast<double>(batches.size());
        row.loss /= count;
        row.task /= count;
        row.kd /= count;
        row.train_error = error_rate(student, train_data);
        row.test_error = error_rate(student, test_data);
        result.history.push_back(row);
    }
    result.net = std::move(student);
    return result;
}

}  // namespace gkd

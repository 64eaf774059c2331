#include "gkd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gkd/errors.hpp"
#include "gkd/losses.hpp"
#include "gkd/stats.hpp"

namespace gkd {

namespace {

BlockNet frozen_copy(const BlockNet& net) {
    BlockNet copy = net.clone();
    copy.set_trainable(false);
    return copy;
}

std::vector<std::string> tap_names(const TapSet& taps) {
    std::vector<std::string> names;
    for (std::size_t b : taps.blocks) names.push_back("block" + std::to_string(b));
    if (taps.logits) names.emplace_back("logits");
    return names;
}

std::vector<std::size_t> argmax_rows(std::span<const double> scores, std::size_t rows,
                                     std::size_t cols) {
    std::vector<std::size_t> out(rows, 0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 1; j < cols; ++j)
            if (scores[i * cols + j] > scores[i * cols + out[i]]) out[i] = j;
    return out;
}

}  // namespace

std::optional<double> loss_concentration(std::span<const double> per_example, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ContractError("loss_concentration: fraction must lie in (0, 1]");
    }
    if (per_example.empty()) throw ContractError("loss_concentration: empty input");
    std::vector<double> sorted(per_example.begin(), per_example.end());
    for (double v : sorted) {
        if (!(v >= 0.0)) throw ContractError("loss_concentration: negative contribution");
    }
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    if (total == 0.0) return std::nullopt;
    const double target = fraction * total;
    double prefix = 0.0;
    std::size_t count = 0;
    while (count < sorted.size()) {
        prefix += sorted[count++];
        if (prefix >= target) break;
    }
    return 100.0 * static_cast<double>(count) / static_cast<double>(sorted.size());
}

ConcentrationReport concentration_report(const BlockNet& teacher, const BlockNet& student,
                                         const Dataset& data, KdLoss method,
                                         const ConcentrationOptions& options) {
    if (method != KdLoss::gkd && method != KdLoss::rkdd) {
        throw ConfigError("concentration_report: method must be gkd or rkdd");
    }
    if (teacher.taps().size() != student.taps().size()) {
        throw ConfigError("concentration_report: tap counts differ");
    }
    const BlockNet t = frozen_copy(teacher);
    const BlockNet s = frozen_copy(student);
    ConcentrationReport report;
    report.method = to_string(method);
    report.taps = tap_names(student.taps());
    report.batch_count = options.batches;
    report.batch_size = std::min(options.batch_size, data.size());
    report.fraction = options.fraction;
    report.per_batch.assign(report.taps.size(), {});

    const Tensor features = data.features.detach();
    for (std::size_t b = 0; b < options.batches; ++b) {
        const auto idx = epoch_batches(data.size(), report.batch_size, options.seed, b).front();
        const Tensor x = gather_rows(features, idx);
        std::vector<std::size_t> labels;
        for (std::size_t i : idx) labels.push_back(data.labels[i]);
        const TapOutput so = s.forward(x);
        const TapOutput to = t.forward(x);
        for (std::size_t l = 0; l < so.taps.size(); ++l) {
            std::vector<double> contributions;
            if (method == KdLoss::gkd) {
                GraphParams params = options.graph;
                if (params.k == 0 || params.k + 1 > idx.size()) params.k = idx.size() - 1;
                const auto sg = build_similarity_graph(so.taps[l], params, labels);
                const auto tg = build_similarity_graph(to.taps[l], params, labels);
                contributions = per_example_gkd(sg.adjacency, tg.adjacency);
            } else {
                contributions = per_example_rkdd(std::span(&so.taps[l], 1), std::span(&to.taps[l], 1));
            }
            if (auto pct = loss_concentration(contributions, options.fraction)) {
                report.per_batch[l].push_back(*pct);
            }
        }
    }
    for (const auto& values : report.per_batch) {
        report.median.push_back(values.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : median_of(values));
    }
    return report;
}

LogisticProbe LogisticProbe::fit(const Tensor& features, std::span<const std::size_t> labels,
                                 std::size_t classes, const Options& options) {
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw DimensionError("LogisticProbe: labels do not match feature rows");
    }
    if (classes < 2) throw ContractError("LogisticProbe: need at least 2 classes");
    const std::size_t n = features.rows(), d = features.cols();
    auto x = features.values();

    LogisticProbe probe;
    probe.dim_ = d;
    probe.classes_ = classes;
    probe.mean_.assign(d, 0.0);
    probe.inv_std_.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) probe.mean_[j] += x[i * d + j];
    for (double& m : probe.mean_) m /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = x[i * d + j] - probe.mean_[j];
            var += c * c;
        }
        var /= static_cast<double>(n);
        probe.inv_std_[j] = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    }
    std::vector<double> z(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            z[i * d + j] = (x[i * d + j] - probe.mean_[j]) * probe.inv_std_[j];

    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= classes) throw ContractError("LogisticProbe: label out of range");
    }

    probe.weight_.assign(d * classes, 0.0);
    probe.bias_.assign(classes, 0.0);
    std::vector<double> prob(n * classes), grad_w(d * classes), grad_b(classes);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double* p = prob.data() + i * classes;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < classes; ++c) {
                double s = probe.bias_[c];
                for (std::size_t j = 0; j < d; ++j) s += z[i * d + j] * probe.weight_[j * classes + c];
                p[c] = s;
                m = std::max(m, s);
            }
            double total = 0.0;
            for (std::size_t c = 0; c < classes; ++c) total += (p[c] = std::exp(p[c] - m));
            for (std::size_t c = 0; c < classes; ++c) p[c] /= total;
            loss -= std::log(std::max(p[labels[i]], 1e-300));
        }
        loss /= static_cast<double>(n);
        if (!std::isfinite(loss)) {
            throw Error("LogisticProbe: training diverged at iteration " + std::to_string(it) +
                        " (loss " + std::to_string(loss) + ", lr " +
                        std::to_string(options.learning_rate) + ")");
        }
        probe.final_loss_ = loss;
        std::fill(grad_w.begin(), grad_w.end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < classes; ++c) {
                const double r = prob[i * classes + c] - (labels[i] == c ? 1.0 : 0.0);
                grad_b[c] += r;
                for (std::size_t j = 0; j < d; ++j) grad_w[j * classes + c] += r * z[i * d + j];
            }
        }
        const double step = options.learning_rate / static_cast<double>(n);
        for (std::size_t k = 0; k < grad_w.size(); ++k) probe.weight_[k] -= step * grad_w[k];
        for (std::size_t c = 0; c < classes; ++c) probe.bias_[c] -= step * grad_b[c];
    }
    return probe;
}

std::vector<std::size_t> LogisticProbe::predict(const Tensor& features) const {
    if (features.rank() != 2 || features.cols() != dim_) {
        throw DimensionError("LogisticProbe: feature dimension mismatch");
    }
    const std::size_t n = features.rows(), d = dim_;
    auto x = features.values();
    std::vector<double> scores(n * classes_);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < classes_; ++c) {
            double s = bias_[c];
            for (std::size_t j = 0; j < d; ++j)
                s += (x[i * d + j] - mean_[j]) * inv_std_[j] * weight_[j * classes_ + c];
            scores[i * classes_ + c] = s;
        }
    }
    return argmax_rows(scores, n, classes_);
}

double probe_agreement(const Tensor& teacher_train, const Tensor& student_train,
                       std::span<const std::size_t> train_labels, std::size_t classes,
                       const Tensor& teacher_eval, const Tensor& student_eval) {
    const auto tp = LogisticProbe::fit(teacher_train, train_labels, classes);
    const auto sp = LogisticProbe::fit(student_train, train_labels, classes);
    const auto a = tp.predict(teacher_eval);
    const auto b = sp.predict(student_eval);
    if (a.size() != b.size()) throw DimensionError("probe_agreement: eval sizes differ");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

double consistency_probe(const BlockNet& teacher, const BlockNet& student,
                         const Dataset& train_data, const Dataset& eval_data, std::size_t block) {
    const std::size_t blocks = teacher.architecture().block_count();
    if (student.architecture().block_count() != blocks) {
        throw ConfigError("consistency_probe: teacher and student block counts differ");
    }
    if (block == 0 || block > blocks + 1) {
        throw ContractError("consistency_probe: block " + std::to_string(block) + " outside 1.." +
                            std::to_string(blocks + 1));
    }
    const BlockNet t = frozen_copy(teacher);
    const BlockNet s = frozen_copy(student);
    if (block == blocks + 1) {
        const auto a = predict(t, eval_data.features);
        const auto b = predict(s, eval_data.features);
        std::size_t same = 0;
        for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
        return static_cast<double>(same) / static_cast<double>(a.size());
    }
    const auto t_train = t.forward(train_data.features).blocks[block - 1];
    const auto s_train = s.forward(train_data.features).blocks[block - 1];
    const auto t_eval = t.forward(eval_data.features).blocks[block - 1];
    const auto s_eval = s.forward(eval_data.features).blocks[block - 1];
    return probe_agreement(t_train, s_train, train_data.labels, train_data.classes, t_eval, s_eval);
}

ConsistencyCurve consistency_curve(const BlockNet& teacher, const BlockNet& student,
                                   const Dataset& train_data, const Dataset& eval_data) {
    ConsistencyCurve curve;
    const std::size_t blocks = teacher.architecture().block_count();
    for (std::size_t b = 1; b <= blocks + 1; ++b) {
        curve.per_block.push_back(consistency_probe(teacher, student, train_data, eval_data, b));
    }
    return curve;
}

double label_smoothness(const Tensor& laplacian, std::span<const std::size_t> labels,
                        std::size_t classes) {
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        GraphSignal indicator{std::vector<double>(labels.size(), 0.0), "label"};
        for (std::size_t i = 0; i < labels.size(); ++i) indicator.values[i] = labels[i] == c;
        total += smoothness(laplacian, indicator);
    }
    return total;
}

SpectralReport spectral_report(const BlockNet& teacher, std::span<const NamedNet> students,
                               const Dataset& data, const SpectralOptions& options) {
    const std::size_t blocks = teacher.architecture().block_count();
    for (const auto& s : students) {
        if (s.net->architecture().block_count() != blocks) {
            throw ConfigError("spectral_report: student '" + s.name + "' has a different block count");
        }
    }
    const std::size_t sample = std::min(options.sample, data.size());
    const auto idx = epoch_batches(data.size(), sample, options.seed, 0).front();
    const Dataset subset = data.subset(idx, data.split);
    GraphParams params = options.graph;
    if (params.k == 0 || params.k + 1 > sample) params.k = sample - 1;

    std::vector<NamedNet> nets{{"teacher", &teacher}};
    nets.insert(nets.end(), students.begin(), students.end());
    std::vector<TapOutput> outputs;
    for (const auto& net : nets) outputs.push_back(frozen_copy(*net.net).forward(subset.features));

    SpectralReport report;
    for (const auto& net : nets) {
        report.curves.push_back({net.name, "label", {}});
        report.curves.push_back({net.name, "teacher_fiedler", {}});
    }
    for (std::size_t b = 0; b < blocks; ++b) {
        const auto teacher_graph = build_similarity_graph(outputs[0].blocks[b], params, subset.labels);
        double lambda2 = 0.0, lambda3 = 0.0;
        const GraphSignal fiedler =
            fiedler_vector(laplacian(teacher_graph.weights), &lambda2, &lambda3);
        if (lambda2 < 1e-10) {
            report.warnings.push_back("block" + std::to_string(b + 1) +
                                      ": teacher graph is disconnected (lambda2 = " +
                                      std::to_string(lambda2) + "); Fiedler vector is not unique");
        } else if (std::abs(lambda3 - lambda2) < 1e-10 * std::max(1.0, lambda2)) {
            report.warnings.push_back("block" + std::to_string(b + 1) +
                                      ": repeated second Laplacian eigenvalue");
        }
        for (std::size_t s = 0; s < nets.size(); ++s) {
            const Tensor l =
                s == 0 ? laplacian(teacher_graph.weights)
                       : laplacian(build_similarity_graph(outputs[s].blocks[b], params, subset.labels)
                                       .weights);
            report.curves[2 * s].per_block.push_back(
                label_smoothness(l, subset.labels, subset.classes));
            report.curves[2 * s + 1].per_block.push_back(smoothness(l, fiedler));
        }
    }
    return report;
}

}  // namespace gkd

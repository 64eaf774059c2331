#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkd/datasets.hpp"
#include "gkd/graphs.hpp"
#include "gkd/models.hpp"
#include "gkd/training.hpp"

namespace gkd {

/// Percentage of examples (largest first) whose contributions reach `fraction`
/// of the total. std::nullopt when every contribution is zero.
std::optional<double> loss_concentration(std::span<const double> per_example, double fraction);

struct ConcentrationReport {
    std::string method;               // "gkd" or "rkdd"
    std::vector<std::string> taps;    // "block1", ..., "logits"
    std::vector<double> median;       // per tap, over batches
    std::vector<std::vector<double>> per_batch;  // [tap][batch]
    std::size_t batch_count = 0;
    std::size_t batch_size = 0;
    double fraction = 0.9;
};

struct ConcentrationOptions {
    std::size_t batches = 20;
    std::size_t batch_size = 256;
    double fraction = 0.9;
    GraphParams graph;  // used by the gkd method
    std::uint64_t seed = 1;
};

/// Concentration of the per-tap KD loss between student and teacher over random batches.
ConcentrationReport concentration_report(const BlockNet& teacher, const BlockNet& student,
                                         const Dataset& data, KdLoss method,
                                         const ConcentrationOptions& options);

/// Multinomial logistic regression fit by full-batch gradient descent on
/// standardized features.
class LogisticProbe {
  public:
    struct Options {
        std::size_t iterations = 500;
        double learning_rate = 0.1;
    };

    static LogisticProbe fit(const Tensor& features, std::span<const std::size_t> labels,
                             std::size_t classes, const Options& options);
    static LogisticProbe fit(const Tensor& features, std::span<const std::size_t> labels,
                             std::size_t classes) {
        return fit(features, labels, classes, Options{});
    }

    std::vector<std::size_t> predict(const Tensor& features) const;
    double final_loss() const { return final_loss_; }

  private:
    std::vector<double> mean_, inv_std_;
    std::vector<double> weight_;  // d × classes
    std::vector<double> bias_;
    std::size_t dim_ = 0;
    std::size_t classes_ = 0;
    double final_loss_ = 0.0;
};

/// Fraction of eval rows on which probes fitted to each representation agree.
double probe_agreement(const Tensor& teacher_train, const Tensor& student_train,
                       std::span<const std::size_t> train_labels, std::size_t classes,
                       const Tensor& teacher_eval, const Tensor& student_eval);

/// Block indices are 1-based; block == block_count + 1 compares the networks' own argmax.
double consistency_probe(const BlockNet& teacher, const BlockNet& student,
                         const Dataset& train_data, const Dataset& eval_data, std::size_t block);

struct ConsistencyCurve {
    std::vector<double> per_block;  // blocks in depth order, then the logits agreement
};

ConsistencyCurve consistency_curve(const BlockNet& teacher, const BlockNet& student,
                                   const Dataset& train_data, const Dataset& eval_data);

struct SmoothnessCurve {
    std::string student;
    std::string signal;  // "label" or "teacher_fiedler"
    std::vector<double> per_block;
};

struct NamedNet {
    std::string name;
    const BlockNet* net = nullptr;
};

struct SpectralOptions {
    GraphParams graph{10, 1, MaskMode::all};
    std::size_t sample = 1000;
    std::uint64_t seed = 1;
};

struct SpectralReport {
    std::vector<SmoothnessCurve> curves;
    std::vector<std::string> warnings;
};

/// Σ_c sᵀLs over one-vs-rest class indicators.
double label_smoothness(const Tensor& laplacian, std::span<const std::size_t> labels,
                        std::size_t classes);

/// Per block: each student's graph Laplacian against the label indicator and the
/// teacher's Fiedler vector at the same block.
SpectralReport spectral_report(const BlockNet& teacher, std::span<const NamedNet> students,
                               const Dataset& data, const SpectralOptions& options);

}  // namespace gkd

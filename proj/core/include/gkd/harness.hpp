#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkd/datasets.hpp"
#include "gkd/graphs.hpp"
#include "gkd/models.hpp"
#include "gkd/training.hpp"

namespace gkd {

inline constexpr int kConfigVersion = 1;

struct DatasetSpec {
    std::string kind = "two_arcs";  // two_arcs | gaussian_mixture | idx
    std::size_t n = 2000;
    double noise = 0.15;
    std::size_t classes = 2;
    std::size_t dim = 2;
    double separation = 4.0;
    std::string images, labels;            // idx
    std::string test_images, test_labels;  // idx; optional explicit test split
    std::size_t limit = 0;
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
};

struct NetSpec {
    std::vector<std::size_t> depths;
    std::vector<std::size_t> widths;
};

struct DistillConfig {
    int version = kConfigVersion;
    DatasetSpec dataset;
    NetSpec teacher{{1, 1, 1}, {64, 64, 64}};
    NetSpec student{{1, 1, 1}, {8, 8, 8}};
    std::optional<TapSet> taps;  // default: every block plus logits
    KdLoss loss = KdLoss::gkd;
    double lambda_kd = 25.0;
    std::optional<GraphParams> gkd;  // filled with defaults iff loss == gkd
    Schedule schedule;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out;

    void validate() const;
};

/// Strict JSON parsing: `version` is required and unknown keys are rejected.
DistillConfig parse_config(const std::string& json_text);
DistillConfig load_config(const std::filesystem::path& path);
/// Canonical serialization; the config digest is taken over this text.
std::string config_to_json(const DistillConfig& config);

std::string sha256_hex(const std::string& bytes);

std::pair<Dataset, Dataset> make_datasets(const DatasetSpec& spec);
Architecture architecture_for(const NetSpec& spec, const Dataset& data);
TrainOptions train_options(const DistillConfig& config, std::uint64_t seed);

struct SeedResult {
    std::uint64_t seed = 0;
    double test_error = 0.0;
    double teacher_test_error = std::numeric_limits<double>::quiet_NaN();
    std::vector<EpochMetrics> history;
    std::string checkpoint_sha256;
    std::string teacher_checkpoint_sha256;
};

struct ExperimentResult {
    std::vector<SeedResult> runs;
    double median_test_error = 0.0;
    double median_teacher_error = std::numeric_limits<double>::quiet_NaN();
};

/// Median of per-seed scalar metrics; even counts take the midpoint.
double aggregate_median(std::span<const double> values);
ExperimentResult aggregate_median(std::vector<SeedResult> runs);

/// Teachers keyed by seed; shared across the points of a sweep.
using TeacherCache = std::map<std::uint64_t, BlockNet>;

/// Trains (or loads) a teacher per seed and distills a student per seed into
/// out/seed_<s>/, writing metrics.csv, checkpoints and manifest.json, then
/// summary.json at the top level.
ExperimentResult run_distill(const DistillConfig& config, const std::filesystem::path& out,
                             const std::optional<std::filesystem::path>& teacher_checkpoint = {},
                             TeacherCache* cache = nullptr);

/// Vanilla training of the configured teacher architecture, one per seed.
ExperimentResult run_train_teacher(const DistillConfig& config, const std::filesystem::path& out);

struct SweepRow {
    std::string param;
    std::string value;
    DistillConfig config;
    ExperimentResult result;
};

/// One run_distill per value of `param` (k, p, mask, lambda, loss); writes sweep.csv.
std::vector<SweepRow> run_sweep(const DistillConfig& config, const std::string& param,
                                std::span<const std::string> values,
                                const std::filesystem::path& out);

/// Shortest round-trip decimal text for a double.
std::string format_double(double value);
std::string metrics_csv(std::span<const EpochMetrics> history);

/// Entry point shared by the `gkd` executable and tests.
int cli(int argc, const char* const* argv);

}  // namespace gkd

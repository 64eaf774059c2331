#include "gkd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "gkd/errors.hpp"

namespace gkd {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    }
    return v;
}

void require_bytes(const std::string& bytes, std::size_t expected, const std::string& what) {
    if (bytes.size() < expected) {
        throw FormatError(what + ": truncated, expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(bytes.size()));
    }
}

std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i / (n / classes);
    return labels;
}

}  // namespace

void Dataset::validate() const {
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw DimensionError("dataset: " + std::to_string(labels.size()) +
                             " labels for features " + shape_string(features.shape()));
    }
    const std::size_t d = features.cols();
    auto v = features.values();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw ContractError("dataset: label out of range");
        bool finite = false;
        for (std::size_t j = 0; j < d; ++j) finite = finite || std::isfinite(v[i * d + j]);
        if (!finite) {
            throw ContractError("dataset: row " + std::to_string(i) + " has no finite feature");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_tag) const {
    Dataset out;
    out.features = gather_rows(features.detach(), indices);
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    out.classes = classes;
    out.split = std::move(split_tag);
    out.provenance = provenance;
    return out;
}

Dataset gen_two_arcs(std::size_t n, double noise, std::uint64_t seed) {
    if (n == 0 || n % 2 != 0) throw ConfigError("gen_two_arcs: n must be even and positive");
    if (!(noise >= 0.0)) throw ConfigError("gen_two_arcs: noise must be nonnegative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t half = n / 2;
    std::vector<double> x(n * 2);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool upper = i < half;
        const std::size_t slot = upper ? i : i - half;
        const double t =
            half > 1 ? std::numbers::pi * static_cast<double>(slot) / static_cast<double>(half - 1)
                     : 0.0;
        double px = upper ? std::cos(t) : 1.0 - std::cos(t);
        double py = upper ? std::sin(t) : 0.5 - std::sin(t);
        if (noise > 0.0) {
            px += noise * gauss(rng);
            py += noise * gauss(rng);
        }
        x[i * 2] = px;
        x[i * 2 + 1] = py;
        labels[i] = upper ? 0 : 1;
    }
    Dataset data{Tensor::matrix(n, 2, std::move(x)), std::move(labels), 2, "all",
                 "two_arcs(n=" + std::to_string(n) + ",noise=" + std::to_string(noise) +
                     ",seed=" + std::to_string(seed) + ")"};
    return data;
}

Dataset gen_gaussian_mixture(std::size_t n, std::size_t classes, std::size_t dim,
                             double separation, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("gen_gaussian_mixture: classes must be at least 2");
    if (dim < 2) throw ConfigError("gen_gaussian_mixture: dim must be at least 2");
    if (!(separation >= 0.0)) {
        throw ConfigError("gen_gaussian_mixture: separation must be nonnegative");
    }
    if (n == 0 || n % classes != 0) {
        throw ConfigError("gen_gaussian_mixture: n must be a positive multiple of classes");
    }
    // Means: scaled basis vectors (all pairs `separation` apart) when dim allows,
    // otherwise a regular polygon in the first two coordinates with that edge length.
    std::vector<double> means(classes * dim, 0.0);
    if (classes <= dim) {
        for (std::size_t c = 0; c < classes; ++c) means[c * dim + c] = separation / std::sqrt(2.0);
    } else {
        const double radius = separation / (2.0 * std::sin(std::numbers::pi / classes));
        for (std::size_t c = 0; c < classes; ++c) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / classes;
            means[c * dim] = radius * std::cos(angle);
            means[c * dim + 1] = radius * std::sin(angle);
        }
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::size_t> labels = balanced_labels(n, classes);
    std::vector<double> x(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) x[i * dim + j] = means[labels[i] * dim + j] + gauss(rng);
    }
    return {Tensor::matrix(n, dim, std::move(x)), std::move(labels), classes, "all",
            "gaussian_mixture(n=" + std::to_string(n) + ",classes=" + std::to_string(classes) +
                ",dim=" + std::to_string(dim) + ",separation=" + std::to_string(separation) +
                ",seed=" + std::to_string(seed) + ")"};
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t limit) {
    const std::string images = read_file(images_path);
    const std::string labels = read_file(labels_path);
    require_bytes(images, 16, "idx images header");
    require_bytes(labels, 8, "idx labels header");
    if (read_be32(images, 0) != 0x00000803) {
        throw FormatError("idx images: bad magic number " + std::to_string(read_be32(images, 0)));
    }
    if (read_be32(labels, 0) != 0x00000801) {
        throw FormatError("idx labels: bad magic number " + std::to_string(read_be32(labels, 0)));
    }
    const std::size_t count = read_be32(images, 4);
    const std::size_t rows = read_be32(images, 8);
    const std::size_t cols = read_be32(images, 12);
    const std::size_t label_count = read_be32(labels, 4);
    if (count != label_count) {
        throw FormatError("idx: " + std::to_string(count) + " images but " +
                          std::to_string(label_count) + " labels");
    }
    const std::size_t pixels = rows * cols;
    if (count == 0 || pixels == 0) throw FormatError("idx: empty dataset");
    const std::size_t expected_images = 16 + count * pixels;
    const std::size_t expected_labels = 8 + count;
    if (images.size() != expected_images) {
        throw FormatError("idx images: expected " + std::to_string(expected_images) +
                          " bytes, got " + std::to_string(images.size()));
    }
    if (labels.size() != expected_labels) {
        throw FormatError("idx labels: expected " + std::to_string(expected_labels) +
                          " bytes, got " + std::to_string(labels.size()));
    }

    const std::size_t n = limit == 0 ? count : std::min(limit, count);
    std::vector<double> x(n * pixels);
    std::vector<std::size_t> y(n);
    std::size_t classes = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < pixels; ++p) {
            x[i * pixels + p] = static_cast<unsigned char>(images[16 + i * pixels + p]) / 255.0;
        }
        y[i] = static_cast<unsigned char>(labels[8 + i]);
        classes = std::max(classes, y[i] + 1);
    }
    return {Tensor::matrix(n, pixels, std::move(x)), std::move(y), classes, "all",
            "idx(" + images_path.filename().string() + ")"};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction,
                                          std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("split: test_fraction must lie in (0, 1)");
    }
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto test_n = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (test_n == 0 || test_n >= n) throw ConfigError("split: empty train or test split");
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_n));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_n), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {data.subset(train, "train"), data.subset(test, "test")};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace gkd

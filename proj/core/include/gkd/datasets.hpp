#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd {

struct Dataset {
    Tensor features;  // n × d
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::string split = "all";
    std::string provenance;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices, std::string split_tag) const;
};

/// Two interleaved half circles: class 0 on the upper unit arc, class 1 on the
/// lower arc shifted to (1, 0.5). Isotropic Gaussian noise of std `noise`.
Dataset gen_two_arcs(std::size_t n, double noise, std::uint64_t seed);

/// Equal-prior unit-variance Gaussians whose neighbouring means sit `separation` apart.
Dataset gen_gaussian_mixture(std::size_t n, std::size_t classes, std::size_t dim,
                             double separation, std::uint64_t seed);

/// IDX images (magic 0x00000803) and labels (0x00000801); pixels scaled to [0, 1].
/// limit 0 loads every example.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t limit);

/// Disjoint, exhaustive train/test split from a seeded permutation.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction,
                                          std::uint64_t seed);

/// Per-epoch batch order, a deterministic function of (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

}  // namespace gkd

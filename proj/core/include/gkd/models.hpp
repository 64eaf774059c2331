#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gkd/tensor.hpp"

namespace gkd {

struct Architecture {
    std::vector<std::size_t> depths;  // affine+relu layers per block
    std::vector<std::size_t> widths;  // output width of each block
    std::size_t input_dim = 0;
    std::size_t classes = 0;

    std::size_t block_count() const { return depths.size(); }
    // Σ(in·out + out) over every affine layer including the head.
    std::size_t parameter_count() const;
    void validate() const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Exported representations. Block indices are 1-based, matching depth order.
struct TapSet {
    std::vector<std::size_t> blocks;
    bool logits = true;

    static TapSet every_block(std::size_t block_count, bool with_logits = true);
    std::size_t size() const { return blocks.size() + (logits ? 1 : 0); }

    friend bool operator==(const TapSet&, const TapSet&) = default;
};

struct Affine {
    Tensor weight;  // in × out
    Tensor bias;    // 1 × out
};

struct TapOutput {
    std::vector<Tensor> taps;    // in TapSet order, logits last when tapped
    std::vector<Tensor> blocks;  // every block output, depth order
    Tensor logits;
};

class BlockNet {
  public:
    // Fan-in scaled uniform init: U(-√(6/fan_in), √(6/fan_in)) weights, zero biases.
    static BlockNet build(const Architecture& arch, std::uint64_t seed);
    static BlockNet zeros(const Architecture& arch);

    const Architecture& architecture() const { return arch_; }
    const TapSet& taps() const { return taps_; }
    void set_taps(TapSet taps);

    std::vector<Affine>& block_layers(std::size_t block) { return blocks_.at(block); }
    const std::vector<Affine>& block_layers(std::size_t block) const { return blocks_.at(block); }
    Affine& head() { return head_; }
    const Affine& head() const { return head_; }

    // Block order: each block's layers (weight, bias), then the head.
    std::vector<Tensor> parameters() const;
    void set_trainable(bool trainable);
    void zero_grad();

    // Independent copy with fresh parameter storage.
    BlockNet clone() const;

    TapOutput forward(const Tensor& batch) const;

  private:
    BlockNet(Architecture arch, std::vector<std::vector<Affine>> blocks, Affine head);
    static BlockNet initialized(const Architecture& arch, std::mt19937_64* rng);

    Architecture arch_;
    TapSet taps_;
    std::vector<std::vector<Affine>> blocks_;
    Affine head_;
};

inline BlockNet build_blocknet(const Architecture& arch, std::uint64_t seed) {
    return BlockNet::build(arch, seed);
}

inline TapOutput forward_with_taps(const BlockNet& net, const Tensor& batch) {
    return net.forward(batch);
}

/// Argmax over logits columns; ties resolve to the lower class index.
std::vector<std::size_t> predict(const BlockNet& net, const Tensor& features);

// Checkpoint: one line of architecture JSON, then every parameter value as a
// little-endian IEEE-754 double in parameters() order.
inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_bytes(const BlockNet& net);
BlockNet checkpoint_from_bytes(const std::string& bytes);
void save_checkpoint(const BlockNet& net, const std::filesystem::path& path);
BlockNet load_checkpoint(const std::filesystem::path& path);

}  // namespace gkd

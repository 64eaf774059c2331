#include "gkd/models.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gkd/errors.hpp"

namespace gkd {

namespace {

Tensor affine_forward(const Affine& layer, const Tensor& x) {
    const Tensor ones = Tensor::full({x.rows(), 1}, 1.0);
    return matmul(x, layer.weight) + matmul(ones, layer.bias);
}

Affine make_affine(std::size_t in, std::size_t out, std::mt19937_64* rng) {
    std::vector<double> w(in * out, 0.0);
    if (rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : w) v = dist(*rng);
    }
    return {Tensor::matrix(in, out, std::move(w), true), Tensor::zeros({1, out}, true)};
}

void append_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double read_le(const std::string& in, std::size_t offset) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

std::size_t Architecture::parameter_count() const {
    std::size_t count = 0;
    std::size_t in = input_dim;
    for (std::size_t b = 0; b < depths.size(); ++b) {
        for (std::size_t l = 0; l < depths[b]; ++l) {
            count += in * widths[b] + widths[b];
            in = widths[b];
        }
    }
    return count + in * classes + classes;
}

void Architecture::validate() const {
    if (depths.size() != widths.size()) {
        throw ConfigError("architecture: " + std::to_string(depths.size()) + " depths but " +
                          std::to_string(widths.size()) + " widths");
    }
    if (depths.empty()) throw ConfigError("architecture: at least one block required");
    for (std::size_t b = 0; b < depths.size(); ++b) {
        if (depths[b] == 0 || widths[b] == 0) {
            throw ConfigError("architecture: block " + std::to_string(b + 1) +
                              " has a non-positive depth or width");
        }
    }
    if (input_dim == 0 || classes == 0) {
        throw ConfigError("architecture: input_dim and classes must be positive");
    }
}

TapSet TapSet::every_block(std::size_t block_count, bool with_logits) {
    TapSet taps;
    for (std::size_t b = 1; b <= block_count; ++b) taps.blocks.push_back(b);
    taps.logits = with_logits;
    return taps;
}

BlockNet::BlockNet(Architecture arch, std::vector<std::vector<Affine>> blocks, Affine head)
    : arch_(std::move(arch)),
      taps_(TapSet::every_block(arch_.block_count())),
      blocks_(std::move(blocks)),
      head_(std::move(head)) {}

BlockNet BlockNet::build(const Architecture& arch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return initialized(arch, &rng);
}

BlockNet BlockNet::zeros(const Architecture& arch) { return initialized(arch, nullptr); }

BlockNet BlockNet::initialized(const Architecture& arch, std::mt19937_64* rng) {
    arch.validate();
    std::vector<std::vector<Affine>> blocks;
    std::size_t in = arch.input_dim;
    for (std::size_t b = 0; b < arch.block_count(); ++b) {
        std::vector<Affine> layers;
        for (std::size_t l = 0; l < arch.depths[b]; ++l) {
            layers.push_back(make_affine(in, arch.widths[b], rng));
            in = arch.widths[b];
        }
        blocks.push_back(std::move(layers));
    }
    Affine head = make_affine(in, arch.classes, rng);
    return BlockNet(arch, std::move(blocks), std::move(head));
}

void BlockNet::set_taps(TapSet taps) {
    for (std::size_t b : taps.blocks) {
        if (b == 0 || b > arch_.block_count()) {
            throw ConfigError("tap block " + std::to_string(b) + " outside 1.." +
                              std::to_string(arch_.block_count()));
        }
    }
    if (taps.size() == 0) throw ConfigError("tap set must not be empty");
    taps_ = std::move(taps);
}

std::vector<Tensor> BlockNet::parameters() const {
    std::vector<Tensor> params;
    for (const auto& block : blocks_) {
        for (const auto& layer : block) {
            params.push_back(layer.weight);
            params.push_back(layer.bias);
        }
    }
    params.push_back(head_.weight);
    params.push_back(head_.bias);
    return params;
}

void BlockNet::set_trainable(bool trainable) {
    for (auto& p : parameters()) p.set_requires_grad(trainable);
}

void BlockNet::zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
}

BlockNet BlockNet::clone() const {
    auto copy_affine = [](const Affine& a) { return Affine{a.weight.clone(), a.bias.clone()}; };
    std::vector<std::vector<Affine>> blocks;
    for (const auto& block : blocks_) {
        std::vector<Affine> layers;
        for (const auto& layer : block) layers.push_back(copy_affine(layer));
        blocks.push_back(std::move(layers));
    }
    BlockNet net(arch_, std::move(blocks), copy_affine(head_));
    net.taps_ = taps_;
    return net;
}

TapOutput BlockNet::forward(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.cols() != arch_.input_dim) {
        throw DimensionError("forward: batch shape " + shape_string(batch.shape()) +
                             " does not match input dimension " + std::to_string(arch_.input_dim));
    }
    TapOutput out;
    Tensor x = batch;
    for (const auto& block : blocks_) {
        for (const auto& layer : block) x = relu(affine_forward(layer, x));
        out.blocks.push_back(x);
    }
    out.logits = affine_forward(head_, x);
    for (std::size_t b : taps_.blocks) out.taps.push_back(out.blocks[b - 1]);
    if (taps_.logits) out.taps.push_back(out.logits);
    return out;
}

std::vector<std::size_t> predict(const BlockNet& net, const Tensor& features) {
    const Tensor logits = net.forward(features).logits;
    const std::size_t n = logits.rows(), c = logits.cols();
    auto v = logits.values();
    std::vector<std::size_t> labels(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 1; j < c; ++j) {
            if (v[i * c + j] > v[i * c + labels[i]]) labels[i] = j;
        }
    }
    return labels;
}

std::string checkpoint_bytes(const BlockNet& net) {
    const Architecture& arch = net.architecture();
    nlohmann::ordered_json header;
    header["format"] = "gkd-checkpoint";
    header["format_version"] = kCheckpointVersion;
    header["depths"] = arch.depths;
    header["widths"] = arch.widths;
    header["input_dim"] = arch.input_dim;
    header["classes"] = arch.classes;
    std::string out = header.dump();
    out.push_back('\n');
    for (const Tensor& p : net.parameters()) {
        for (double v : p.values()) append_le(out, v);
    }
    return out;
}

BlockNet checkpoint_from_bytes(const std::string& bytes) {
    const auto newline = bytes.find('\n');
    if (newline == std::string::npos) throw FormatError("checkpoint: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, newline));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    Architecture arch;
    try {
        if (header.at("format").get<std::string>() != "gkd-checkpoint") {
            throw FormatError("checkpoint: not a gkd checkpoint");
        }
        const int version = header.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw FormatError("checkpoint: unsupported format_version " + std::to_string(version));
        }
        arch.depths = header.at("depths").get<std::vector<std::size_t>>();
        arch.widths = header.at("widths").get<std::vector<std::size_t>>();
        arch.input_dim = header.at("input_dim").get<std::size_t>();
        arch.classes = header.at("classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
    }
    try {
        arch.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }

    const std::size_t expected = arch.parameter_count() * 8;
    const std::size_t actual = bytes.size() - newline - 1;
    if (actual != expected) {
        throw FormatError("checkpoint: expected " + std::to_string(expected) +
                          " payload bytes, got " + std::to_string(actual));
    }
    BlockNet net = BlockNet::zeros(arch);
    std::size_t offset = newline + 1;
    for (Tensor& p : net.parameters()) {
        for (double& v : p.mutable_values()) {
            v = read_le(bytes, offset);
            offset += 8;
        }
    }
    return net;
}

void save_checkpoint(const BlockNet& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::string bytes = checkpoint_bytes(net);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

BlockNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return checkpoint_from_bytes(buffer.str());
}

}  // namespace gkd

#include "gkd/harness.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gkd/errors.hpp"
#include "gkd/stats.hpp"

namespace gkd {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown_keys(const json& object, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!object.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : object.items()) {
        if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_field(const json& object, const char* key, T& target, const std::string& where) {
    if (!object.contains(key)) return;
    try {
        target = object.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

// Unsigned fields reject negative JSON numbers instead of wrapping.
void read_count(const json& object, const char* key, std::size_t& target, const std::string& where) {
    if (!object.contains(key)) return;
    const json& v = object.at(key);
    if (!v.is_number_unsigned()) {
        throw ConfigError(where + "." + key + ": expected a nonnegative integer");
    }
    target = v.get<std::size_t>();
}

void read_counts(const json& object, const char* key, std::vector<std::size_t>& target,
                 const std::string& where) {
    if (!object.contains(key)) return;
    const json& v = object.at(key);
    if (!v.is_array()) throw ConfigError(where + "." + key + ": expected an array");
    target.clear();
    for (const auto& e : v) {
        if (!e.is_number_unsigned()) {
            throw ConfigError(where + "." + key + ": expected nonnegative integers");
        }
        target.push_back(e.get<std::size_t>());
    }
}

NetSpec parse_net(const json& j, NetSpec net, const std::string& where) {
    reject_unknown_keys(j, {"depths", "widths"}, where);
    read_counts(j, "depths", net.depths, where);
    read_counts(j, "widths", net.widths, where);
    return net;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

ordered_json nullable(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json graph_json(const GraphParams& g) {
    return {{"k", g.k}, {"p", g.p}, {"mask", to_string(g.mask)}};
}

void apply_taps(const DistillConfig& config, BlockNet& net) {
    if (config.taps) net.set_taps(*config.taps);
}

BlockNet train_teacher_for_seed(const DistillConfig& config, const Dataset& train_data,
                                const Dataset& test_data, std::uint64_t seed,
                                const std::filesystem::path& dir, double* test_error) {
    const Architecture arch = architecture_for(config.teacher, train_data);
    BlockNet init = BlockNet::build(arch, seed);
    apply_taps(config, init);
    TrainOptions options = train_options(config, seed);
    options.loss = KdLoss::vanilla;
    options.lambda_kd = 0.0;
    TrainResult trained = train(init, train_data, test_data, options);
    *test_error = trained.final_test_error();
    std::filesystem::create_directories(dir);
    write_text(dir / "teacher_metrics.csv", metrics_csv(trained.history));
    save_checkpoint(trained.net, dir / "teacher.ckpt");
    return std::move(trained.net);
}

ordered_json summary_json(const DistillConfig& config, const ExperimentResult& result) {
    ordered_json runs = ordered_json::array();
    for (const auto& r : result.runs) {
        runs.push_back({{"seed", r.seed},
                        {"test_error", nullable(r.test_error)},
                        {"teacher_test_error", nullable(r.teacher_test_error)},
                        {"checkpoint_sha256", r.checkpoint_sha256},
                        {"teacher_checkpoint_sha256", r.teacher_checkpoint_sha256}});
    }
    ordered_json summary;
    summary["config_sha256"] = sha256_hex(config_to_json(config));
    summary["loss"] = to_string(config.loss);
    summary["lambda_kd"] = config.lambda_kd;
    summary["gkd"] = config.gkd ? graph_json(*config.gkd) : ordered_json(nullptr);
    summary["runs"] = runs;
    summary["median_test_error"] = nullable(result.median_test_error);
    summary["median_teacher_test_error"] = nullable(result.median_teacher_error);
    return summary;
}

}  // namespace

void DistillConfig::validate() const {
    if (version != kConfigVersion) {
        throw ConfigError("config: unsupported version " + std::to_string(version));
    }
    if (dataset.kind != "two_arcs" && dataset.kind != "gaussian_mixture" && dataset.kind != "idx") {
        throw ConfigError("config: unknown dataset kind '" + dataset.kind + "'");
    }
    if (seeds.empty()) throw ConfigError("config: at least one seed required");
    if (batch_size < 2) throw ConfigError("config: batch_size must be at least 2");
    if (gkd.has_value() != (loss == KdLoss::gkd)) {
        throw ConfigError("config: gkd parameters are only valid with loss = gkd");
    }
    if (gkd) {
        if (gkd->k < 1 || gkd->k + 1 > batch_size) {
            throw ConfigError("config: gkd.k must lie in [1, batch_size - 1]");
        }
        if (gkd->p < 1) throw ConfigError("config: gkd.p must be at least 1");
    }
    if (!(lambda_kd >= 0.0)) throw ConfigError("config: lambda_kd must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must lie in [0, 1)");
    schedule.validate();
    for (const NetSpec* net : {&teacher, &student}) {
        Architecture probe{net->depths, net->widths, 1, 1};
        probe.validate();
    }
    if (taps) {
        for (const NetSpec* net : {&teacher, &student}) {
            for (std::size_t b : taps->blocks) {
                if (b == 0 || b > net->depths.size()) {
                    throw ConfigError("config: tap block " + std::to_string(b) + " out of range");
                }
            }
        }
        if (taps->size() == 0) throw ConfigError("config: empty tap set");
    }
}

DistillConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown_keys(root,
                        {"version", "dataset", "teacher", "student", "taps", "loss", "lambda_kd",
                         "gkd", "schedule", "momentum", "batch_size", "seeds", "out"},
                        "config");
    if (!root.contains("version")) throw ConfigError("config: missing required key 'version'");

    DistillConfig c;
    read_field(root, "version", c.version, "config");
    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        reject_unknown_keys(d,
                            {"kind", "n", "noise", "classes", "dim", "separation", "images",
                             "labels", "test_images", "test_labels", "limit", "test_fraction",
                             "seed"},
                            "config.dataset");
        read_field(d, "kind", c.dataset.kind, "config.dataset");
        read_count(d, "n", c.dataset.n, "config.dataset");
        read_field(d, "noise", c.dataset.noise, "config.dataset");
        read_count(d, "classes", c.dataset.classes, "config.dataset");
        read_count(d, "dim", c.dataset.dim, "config.dataset");
        read_field(d, "separation", c.dataset.separation, "config.dataset");
        read_field(d, "images", c.dataset.images, "config.dataset");
        read_field(d, "labels", c.dataset.labels, "config.dataset");
        read_field(d, "test_images", c.dataset.test_images, "config.dataset");
        read_field(d, "test_labels", c.dataset.test_labels, "config.dataset");
        read_count(d, "limit", c.dataset.limit, "config.dataset");
        read_field(d, "test_fraction", c.dataset.test_fraction, "config.dataset");
        read_field(d, "seed", c.dataset.seed, "config.dataset");
    }
    if (root.contains("teacher")) c.teacher = parse_net(root.at("teacher"), c.teacher, "config.teacher");
    if (root.contains("student")) c.student = parse_net(root.at("student"), c.student, "config.student");
    if (root.contains("taps")) {
        const json& t = root.at("taps");
        reject_unknown_keys(t, {"blocks", "logits"}, "config.taps");
        TapSet taps;
        read_counts(t, "blocks", taps.blocks, "config.taps");
        read_field(t, "logits", taps.logits, "config.taps");
        c.taps = taps;
    }
    if (root.contains("loss")) {
        std::string loss;
        read_field(root, "loss", loss, "config");
        c.loss = parse_kd_loss(loss);
    }
    read_field(root, "lambda_kd", c.lambda_kd, "config");
    read_count(root, "batch_size", c.batch_size, "config");
    if (root.contains("gkd")) {
        const json& g = root.at("gkd");
        reject_unknown_keys(g, {"k", "p", "mask"}, "config.gkd");
        GraphParams params{c.batch_size - 1, 1, MaskMode::all};
        read_count(g, "k", params.k, "config.gkd");
        read_count(g, "p", params.p, "config.gkd");
        if (g.contains("mask")) {
            std::string mask;
            read_field(g, "mask", mask, "config.gkd");
            params.mask = parse_mask_mode(mask);
        }
        c.gkd = params;
    } else if (c.loss == KdLoss::gkd) {
        c.gkd = GraphParams{c.batch_size - 1, 1, MaskMode::all};
    }
    if (root.contains("schedule")) {
        const json& s = root.at("schedule");
        reject_unknown_keys(s, {"base_lr", "decay_factor", "milestones", "epochs"}, "config.schedule");
        read_field(s, "base_lr", c.schedule.base_lr, "config.schedule");
        read_field(s, "decay_factor", c.schedule.decay_factor, "config.schedule");
        read_counts(s, "milestones", c.schedule.milestones, "config.schedule");
        read_count(s, "epochs", c.schedule.total_epochs, "config.schedule");
    }
    read_field(root, "momentum", c.momentum, "config");
    read_field(root, "seeds", c.seeds, "config");
    read_field(root, "out", c.out, "config");
    c.validate();
    return c;
}

DistillConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string config_to_json(const DistillConfig& c) {
    ordered_json d;
    d["kind"] = c.dataset.kind;
    if (c.dataset.kind == "idx") {
        d["images"] = c.dataset.images;
        d["labels"] = c.dataset.labels;
        d["test_images"] = c.dataset.test_images;
        d["test_labels"] = c.dataset.test_labels;
        d["limit"] = c.dataset.limit;
    } else {
        d["n"] = c.dataset.n;
        if (c.dataset.kind == "two_arcs") {
            d["noise"] = c.dataset.noise;
        } else {
            d["classes"] = c.dataset.classes;
            d["dim"] = c.dataset.dim;
            d["separation"] = c.dataset.separation;
        }
    }
    d["test_fraction"] = c.dataset.test_fraction;
    d["seed"] = c.dataset.seed;

    ordered_json j;
    j["version"] = c.version;
    j["dataset"] = d;
    j["teacher"] = {{"depths", c.teacher.depths}, {"widths", c.teacher.widths}};
    j["student"] = {{"depths", c.student.depths}, {"widths", c.student.widths}};
    if (c.taps) j["taps"] = {{"blocks", c.taps->blocks}, {"logits", c.taps->logits}};
    j["loss"] = to_string(c.loss);
    j["lambda_kd"] = c.lambda_kd;
    if (c.gkd) j["gkd"] = graph_json(*c.gkd);
    j["schedule"] = {{"base_lr", c.schedule.base_lr},
                     {"decay_factor", c.schedule.decay_factor},
                     {"milestones", c.schedule.milestones},
                     {"epochs", c.schedule.total_epochs}};
    j["momentum"] = c.momentum;
    j["batch_size"] = c.batch_size;
    j["seeds"] = c.seeds;
    return j.dump(2) + "\n";
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::pair<Dataset, Dataset> make_datasets(const DatasetSpec& spec) {
    if (spec.kind == "two_arcs") {
        return split_dataset(gen_two_arcs(spec.n, spec.noise, spec.seed), spec.test_fraction,
                             spec.seed + 1);
    }
    if (spec.kind == "gaussian_mixture") {
        return split_dataset(
            gen_gaussian_mixture(spec.n, spec.classes, spec.dim, spec.separation, spec.seed),
            spec.test_fraction, spec.seed + 1);
    }
    if (spec.kind == "idx") {
        Dataset all = load_idx(spec.images, spec.labels, spec.limit);
        if (spec.test_images.empty()) return split_dataset(all, spec.test_fraction, spec.seed + 1);
        Dataset test = load_idx(spec.test_images, spec.test_labels, spec.limit);
        const std::size_t classes = std::max(all.classes, test.classes);
        all.classes = test.classes = classes;
        all.split = "train";
        test.split = "test";
        return {std::move(all), std::move(test)};
    }
    throw ConfigError("unknown dataset kind '" + spec.kind + "'");
}

Architecture architecture_for(const NetSpec& spec, const Dataset& data) {
    Architecture arch{spec.depths, spec.widths, data.dim(), data.classes};
    arch.validate();
    return arch;
}

TrainOptions train_options(const DistillConfig& config, std::uint64_t seed) {
    TrainOptions o;
    o.loss = config.loss;
    o.lambda_kd = config.lambda_kd;
    o.graph = config.gkd.value_or(GraphParams{});
    o.schedule = config.schedule;
    o.momentum = config.momentum;
    o.batch_size = config.batch_size;
    o.seed = seed;
    return o;
}

double aggregate_median(std::span<const double> values) {
    if (values.empty()) throw ContractError("aggregate_median: no results");
    return median_of(values);
}

ExperimentResult aggregate_median(std::vector<SeedResult> runs) {
    if (runs.empty()) throw ContractError("aggregate_median: no results");
    ExperimentResult result;
    std::vector<double> errors, teacher_errors;
    for (const auto& r : runs) {
        errors.push_back(r.test_error);
        if (std::isfinite(r.teacher_test_error)) teacher_errors.push_back(r.teacher_test_error);
    }
    result.median_test_error = median_of(errors);
    if (!teacher_errors.empty()) result.median_teacher_error = median_of(teacher_errors);
    result.runs = std::move(runs);
    return result;
}

ExperimentResult run_distill(const DistillConfig& config, const std::filesystem::path& out,
                             const std::optional<std::filesystem::path>& teacher_checkpoint,
                             TeacherCache* cache) {
    config.validate();
    const auto [train_data, test_data] = make_datasets(config.dataset);
    const bool needs_teacher = config.loss != KdLoss::vanilla && config.lambda_kd > 0.0;
    std::optional<BlockNet> loaded;
    if (needs_teacher && teacher_checkpoint) {
        loaded = load_checkpoint(*teacher_checkpoint);
        apply_taps(config, *loaded);
    }

    std::filesystem::create_directories(out);
    const std::string config_text = config_to_json(config);
    write_text(out / "config.json", config_text);

    std::vector<SeedResult> runs;
    for (std::uint64_t seed : config.seeds) {
        const auto dir = out / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        SeedResult run;
        run.seed = seed;

        std::optional<BlockNet> teacher;
        if (needs_teacher) {
            if (loaded) {
                teacher = loaded->clone();
                run.teacher_test_error = error_rate(*teacher, test_data);
            } else if (cache && cache->contains(seed)) {
                teacher = cache->at(seed).clone();
                run.teacher_test_error = error_rate(*teacher, test_data);
            } else {
                teacher = train_teacher_for_seed(config, train_data, test_data, seed, dir,
                                                 &run.teacher_test_error);
                if (cache) cache->emplace(seed, teacher->clone());
            }
            apply_taps(config, *teacher);
            run.teacher_checkpoint_sha256 = sha256_hex(checkpoint_bytes(*teacher));
        }

        BlockNet init = BlockNet::build(architecture_for(config.student, train_data), seed);
        apply_taps(config, init);
        TrainResult trained = train(init, train_data, test_data, train_options(config, seed),
                                    teacher ? &*teacher : nullptr);
        run.test_error = trained.final_test_error();
        run.history = trained.history;
        const std::string ckpt = checkpoint_bytes(trained.net);
        run.checkpoint_sha256 = sha256_hex(ckpt);
        write_text(dir / "student.ckpt", ckpt);
        write_text(dir / "metrics.csv", metrics_csv(trained.history));

        ordered_json manifest;
        manifest["config_sha256"] = sha256_hex(config_text);
        manifest["seed"] = seed;
        manifest["dataset"] = train_data.provenance;
        manifest["student_checkpoint_sha256"] = run.checkpoint_sha256;
        manifest["teacher_checkpoint_sha256"] = run.teacher_checkpoint_sha256;
        if (teacher_checkpoint && needs_teacher) manifest["teacher_checkpoint"] = teacher_checkpoint->string();
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
        runs.push_back(std::move(run));
    }
    ExperimentResult result = aggregate_median(std::move(runs));
    write_text(out / "summary.json", summary_json(config, result).dump(2) + "\n");
    return result;
}

ExperimentResult run_train_teacher(const DistillConfig& config, const std::filesystem::path& out) {
    config.validate();
    const auto [train_data, test_data] = make_datasets(config.dataset);
    std::filesystem::create_directories(out);
    const std::string config_text = config_to_json(config);
    write_text(out / "config.json", config_text);
    std::vector<SeedResult> runs;
    for (std::uint64_t seed : config.seeds) {
        const auto dir = out / ("seed_" + std::to_string(seed));
        SeedResult run;
        run.seed = seed;
        const BlockNet teacher =
            train_teacher_for_seed(config, train_data, test_data, seed, dir, &run.test_error);
        run.teacher_test_error = run.test_error;
        run.checkpoint_sha256 = sha256_hex(checkpoint_bytes(teacher));
        ordered_json manifest;
        manifest["config_sha256"] = sha256_hex(config_text);
        manifest["seed"] = seed;
        manifest["dataset"] = train_data.provenance;
        manifest["teacher_checkpoint_sha256"] = run.checkpoint_sha256;
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
        runs.push_back(std::move(run));
    }
    ExperimentResult result = aggregate_median(std::move(runs));
    write_text(out / "summary.json", summary_json(config, result).dump(2) + "\n");
    return result;
}

std::vector<SweepRow> run_sweep(const DistillConfig& config, const std::string& param,
                                std::span<const std::string> values,
                                const std::filesystem::path& out) {
    if (values.empty()) throw ConfigError("sweep: no values given");
    auto parse_count = [&](const std::string& text) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            throw ConfigError("sweep: '" + text + "' is not a nonnegative integer");
        }
        return v;
    };
    std::vector<DistillConfig> variants;
    for (const auto& value : values) {
        DistillConfig c = config;
        if (param == "k" || param == "p" || param == "mask") {
            if (c.loss != KdLoss::gkd) throw ConfigError("sweep: " + param + " requires loss = gkd");
            if (param == "k") c.gkd->k = parse_count(value);
            if (param == "p") c.gkd->p = parse_count(value);
            if (param == "mask") c.gkd->mask = parse_mask_mode(value);
        } else if (param == "lambda") {
            try {
                std::size_t used = 0;
                c.lambda_kd = std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
            } catch (const std::exception&) {
                throw ConfigError("sweep: '" + value + "' is not a number");
            }
        } else if (param == "loss") {
            c.loss = parse_kd_loss(value);
            if (c.loss == KdLoss::gkd && !c.gkd) c.gkd = GraphParams{c.batch_size - 1, 1, MaskMode::all};
            if (c.loss != KdLoss::gkd) c.gkd.reset();
        } else {
            throw ConfigError("sweep: unknown parameter '" + param +
                              "' (expected k, p, mask, lambda, loss)");
        }
        c.validate();
        variants.push_back(std::move(c));
    }

    std::filesystem::create_directories(out);
    TeacherCache teachers;
    std::vector<SweepRow> rows;
    std::ostringstream csv;
    csv << "param,value,loss,lambda_kd,k,p,mask,median_test_error,median_teacher_test_error,"
           "seed_test_errors\n";
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const DistillConfig& c = variants[i];
        const auto dir = out / (param + "_" + values[i]);
        SweepRow row{param, values[i], c, run_distill(c, dir, std::nullopt, &teachers)};
        csv << param << ',' << values[i] << ',' << to_string(c.loss) << ','
            << format_double(c.lambda_kd) << ',' << (c.gkd ? std::to_string(c.gkd->k) : "") << ','
            << (c.gkd ? std::to_string(c.gkd->p) : "") << ','
            << (c.gkd ? to_string(c.gkd->mask) : "") << ','
            << format_double(row.result.median_test_error) << ','
            << format_double(row.result.median_teacher_error) << ',';
        for (std::size_t s = 0; s < row.result.runs.size(); ++s) {
            csv << (s ? ";" : "") << format_double(row.result.runs[s].test_error);
        }
        csv << '\n';
        rows.push_back(std::move(row));
    }
    write_text(out / "sweep.csv", csv.str());
    return rows;
}

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    char buffer[64];
    auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
    return std::string(buffer, ptr);
}

std::string metrics_csv(std::span<const EpochMetrics> history) {
    std::ostringstream out;
    out << "epoch,lr,loss,task,kd,train_error,test_error\n";
    for (const auto& m : history) {
        out << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.loss) << ','
            << format_double(m.task) << ',' << format_double(m.kd) << ','
            << format_double(m.train_error) << ',' << format_double(m.test_error) << '\n';
    }
    return out.str();
}

}  // namespace gkd

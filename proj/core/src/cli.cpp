#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "gkd/analysis.hpp"
#include "gkd/errors.hpp"
#include "gkd/harness.hpp"

namespace gkd {

namespace {

struct StudentArg {
    std::string name;
    std::filesystem::path path;
};

std::vector<StudentArg> parse_students(const std::vector<std::string>& args) {
    std::vector<StudentArg> out;
    for (const auto& arg : args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos) {
            out.push_back({std::filesystem::path(arg).stem().string(), arg});
        } else {
            out.push_back({arg.substr(0, eq), arg.substr(eq + 1)});
        }
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string tap_label(std::size_t block, std::size_t block_count) {
    return block > block_count ? "logits" : "block" + std::to_string(block);
}

DistillConfig config_with_seeds(const std::string& path, const std::vector<std::uint64_t>& seeds) {
    DistillConfig config = load_config(path);
    if (!seeds.empty()) config.seeds = seeds;
    return config;
}

std::filesystem::path output_dir(const std::string& flag, const DistillConfig& config) {
    if (!flag.empty()) return flag;
    if (!config.out.empty()) return config.out;
    throw ConfigError("no output directory: pass --out or set \"out\" in the config");
}

void print_summary(const ExperimentResult& result) {
    for (const auto& r : result.runs) {
        std::cout << "seed " << r.seed << ": test_error " << format_double(r.test_error);
        if (std::isfinite(r.teacher_test_error)) {
            std::cout << " teacher_test_error " << format_double(r.teacher_test_error);
        }
        std::cout << '\n';
    }
    std::cout << "median test_error " << format_double(result.median_test_error) << '\n';
}

}  // namespace

int cli(int argc, const char* const* argv) {
    CLI::App app{"Graph-based knowledge distillation experiments"};
    app.require_subcommand(1);

    std::string config_path, out, teacher_path, param, mask = "all";
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> values, student_args;
    std::size_t block = 0, k = 0, p = 1, n = 256, sample = 1000, batches = 20, batch_size = 256;
    double fraction = 0.9;

    auto* train_teacher = app.add_subcommand("train-teacher", "Train teachers, one per seed");
    auto* distill = app.add_subcommand("distill", "Distill a student per seed");
    auto* sweep = app.add_subcommand("sweep", "Distill once per value of one parameter");
    auto* analyze = app.add_subcommand("analyze", "Loss concentration and consistency probes");
    auto* spectral = app.add_subcommand("spectral", "Smoothness of label and teacher signals");
    auto* dump = app.add_subcommand("dump-graph", "Write one layer's latent graph as CSV");

    for (auto* sub : {train_teacher, distill, sweep, analyze, spectral, dump}) {
        sub->add_option("--config", config_path, "JSON experiment config")->required();
        sub->add_option("--out", out, "Output directory");
    }
    for (auto* sub : {train_teacher, distill, sweep}) {
        sub->add_option("--seeds", seeds, "Override the config seeds")->delimiter(',');
    }
    distill->add_option("--teacher", teacher_path, "Teacher checkpoint shared by every seed");
    sweep->add_option("--param", param, "k, p, mask, lambda or loss")->required();
    sweep->add_option("--values", values, "Values to sweep")->required()->delimiter(',');

    for (auto* sub : {analyze, spectral}) {
        sub->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
        sub->add_option("--student", student_args, "Student checkpoint as name=path (repeatable)")
            ->required();
    }
    analyze->add_option("--batches", batches, "Batches for loss concentration");
    analyze->add_option("--batch-size", batch_size, "Batch size for loss concentration");
    analyze->add_option("--fraction", fraction, "Loss fraction to cover");
    spectral->add_option("--sample", sample, "Training examples in the graph");
    spectral->add_option("--k", k, "Neighbours per node");

    dump->add_option("--checkpoint", teacher_path, "Network checkpoint")->required();
    dump->add_option("--block", block, "1-based block; block count + 1 for logits")->required();
    dump->add_option("--n", n, "Training examples in the graph");
    dump->add_option("--k", k, "Neighbours per node (default n - 1)");
    dump->add_option("--p", p, "Adjacency power");
    dump->add_option("--mask", mask, "all, inter_class or intra_class");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*train_teacher) {
            const DistillConfig config = config_with_seeds(config_path, seeds);
            print_summary(run_train_teacher(config, output_dir(out, config)));
        } else if (*distill) {
            const DistillConfig config = config_with_seeds(config_path, seeds);
            std::optional<std::filesystem::path> teacher;
            if (!teacher_path.empty()) teacher = teacher_path;
            print_summary(run_distill(config, output_dir(out, config), teacher));
        } else if (*sweep) {
            const DistillConfig config = config_with_seeds(config_path, seeds);
            for (const auto& row : run_sweep(config, param, values, output_dir(out, config))) {
                std::cout << row.param << '=' << row.value << ": median test_error "
                          << format_double(row.result.median_test_error) << '\n';
            }
        } else if (*analyze) {
            const DistillConfig config = load_config(config_path);
            const auto [train_data, test_data] = make_datasets(config.dataset);
            const std::filesystem::path dir = output_dir(out, config);
            BlockNet teacher = load_checkpoint(teacher_path);
            std::ostringstream conc, cons;
            conc << "student,method,tap,median_percent,batches\n";
            cons << "student,tap,agreement\n";
            for (const auto& s : parse_students(student_args)) {
                BlockNet student = load_checkpoint(s.path);
                if (config.taps) {
                    teacher.set_taps(*config.taps);
                    student.set_taps(*config.taps);
                }
                ConcentrationOptions options;
                options.batches = batches;
                options.batch_size = batch_size;
                options.fraction = fraction;
                options.graph = config.gkd.value_or(GraphParams{});
                for (KdLoss method : {KdLoss::gkd, KdLoss::rkdd}) {
                    const auto report =
                        concentration_report(teacher, student, train_data, method, options);
                    for (std::size_t t = 0; t < report.taps.size(); ++t) {
                        conc << s.name << ',' << report.method << ',' << report.taps[t] << ','
                             << format_double(report.median[t]) << ','
                             << report.per_batch[t].size() << '\n';
                    }
                }
                const auto curve = consistency_curve(teacher, student, train_data, test_data);
                for (std::size_t b = 0; b < curve.per_block.size(); ++b) {
                    cons << s.name << ',' << tap_label(b + 1, curve.per_block.size() - 1) << ','
                         << format_double(curve.per_block[b]) << '\n';
                }
            }
            write_file(dir / "concentration.csv", conc.str());
            write_file(dir / "consistency.csv", cons.str());
            std::cout << "wrote " << (dir / "concentration.csv").string() << " and "
                      << (dir / "consistency.csv").string() << '\n';
        } else if (*spectral) {
            const DistillConfig config = load_config(config_path);
            const auto [train_data, test_data] = make_datasets(config.dataset);
            const std::filesystem::path dir = output_dir(out, config);
            const BlockNet teacher = load_checkpoint(teacher_path);
            const auto args = parse_students(student_args);
            std::vector<BlockNet> nets;
            nets.reserve(args.size());
            std::vector<NamedNet> students;
            for (const auto& s : args) {
                nets.push_back(load_checkpoint(s.path));
                students.push_back({s.name, &nets.back()});
            }
            SpectralOptions options;
            options.sample = sample;
            if (k > 0) options.graph.k = k;
            const SpectralReport report = spectral_report(teacher, students, train_data, options);
            std::ostringstream csv;
            csv << "student,signal,block,smoothness\n";
            for (const auto& curve : report.curves) {
                for (std::size_t b = 0; b < curve.per_block.size(); ++b) {
                    csv << curve.student << ',' << curve.signal << ',' << b + 1 << ','
                        << format_double(curve.per_block[b]) << '\n';
                }
            }
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
            write_file(dir / "smoothness.csv", csv.str());
            std::cout << "wrote " << (dir / "smoothness.csv").string() << '\n';
        } else if (*dump) {
            const DistillConfig config = load_config(config_path);
            const auto [train_data, test_data] = make_datasets(config.dataset);
            const std::filesystem::path dir = output_dir(out, config);
            const BlockNet net = load_checkpoint(teacher_path);
            const std::size_t blocks = net.architecture().block_count();
            if (block < 1 || block > blocks + 1) {
                throw ConfigError("--block must lie in [1, " + std::to_string(blocks + 1) + "]");
            }
            const std::size_t count = std::min(n, train_data.size());
            std::vector<std::size_t> rows(count);
            for (std::size_t i = 0; i < count; ++i) rows[i] = i;
            const Dataset data = train_data.subset(rows, "graph");
            const TapOutput output = forward_with_taps(net, data.features);
            const Tensor& reps = block > blocks ? output.logits : output.blocks[block - 1];
            const GraphParams params{k == 0 ? count - 1 : k, p, parse_mask_mode(mask)};
            const SimilarityGraph graph =
                params.mask == MaskMode::all
                    ? build_similarity_graph(reps, params)
                    : build_similarity_graph(reps, params, std::span<const std::size_t>(data.labels));
            std::ostringstream csv;
            csv << "i,j,weight\n";
            for (std::size_t i = 0; i < count; ++i) {
                for (std::size_t j = 0; j < count; ++j) {
                    const double w = graph.adjacency(i, j);
                    if (w != 0.0) csv << i << ',' << j << ',' << format_double(w) << '\n';
                }
            }
            const std::string stem = "graph_" + tap_label(block, blocks);
            write_file(dir / (stem + ".csv"), csv.str());
            nlohmann::ordered_json meta{{"n", count},
                                        {"k", params.k},
                                        {"p", params.p},
                                        {"mask_mode", to_string(params.mask)},
                                        {"block", block},
                                        {"checkpoint", teacher_path}};
            write_file(dir / (stem + ".json"), meta.dump(2) + "\n");
            std::cout << "wrote " << (dir / (stem + ".csv")).string() << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 3;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << '\n';
        return 4;
    } catch (const ContractError& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace gkd

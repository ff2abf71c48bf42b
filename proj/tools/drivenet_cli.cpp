// drivenet command line: ingest, synth, train, eval, grid, gradcheck.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "drivenet/checkpoint.hpp"
#include "drivenet/experiment.hpp"
#include "drivenet/features.hpp"
#include "drivenet/ingest.hpp"
#include "drivenet/train.hpp"

namespace fs = std::filesystem;
using namespace drivenet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::ConfigError: return kExitUsage;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::DomainError: return kExitNumeric;
    default: return kExitData;
    }
}

void print_dataset_summary(const std::vector<Trajectory>& trajectories, std::ostream& os) {
    std::map<std::string, std::size_t> per_key;
    std::size_t records = 0;
    for (const auto& t : trajectories) {
        per_key[to_string(t.driver) + " " + std::string(to_string(t.behaviour))] += 1;
        records += t.records.size();
    }
    os << "trajectories " << trajectories.size() << ", records " << records << '\n';
    for (const auto& [k, n] : per_key) os << "  " << k << ": " << n << '\n';
}

std::vector<Trajectory> load_data(const std::string& root, std::optional<std::uint64_t> synth_seed,
                                  const DataSource& fallback) {
    DataSource src = fallback;
    if (!root.empty()) src.root = root;
    else if (synth_seed) {
        src.root.reset();
        src.synthetic.seed = *synth_seed;
    }
    std::vector<std::string> warnings;
    auto out = load_trajectories(src, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aggressive-driving detection from GPS windows with from-scratch GRU/LSTM networks"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Scan a dataset tree and report statistics");
    std::string ingest_root, ingest_out, raw_filename = "RAW_GPS.txt";
    bool ingest_strict = false, ingest_speed_limit = false;
    int ingest_window = 120, ingest_stride = 1;
    ingest->add_option("root", ingest_root, "Dataset root directory")->required();
    ingest->add_flag("--strict", ingest_strict, "Fail on the first malformed line");
    ingest->add_option("--out", ingest_out, "Write raw (unnormalized) windows to this file");
    ingest->add_option("--window", ingest_window, "Window length for --out")->check(CLI::PositiveNumber);
    ingest->add_option("--stride", ingest_stride, "Window stride for --out")->check(CLI::PositiveNumber);
    ingest->add_flag("--speed-limit", ingest_speed_limit, "Append the speed-limit gap feature");
    ingest->add_option("--raw-file", raw_filename, "Raw GPS file name inside each trip folder");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in the ingest layout");
    std::uint64_t synth_seed = 1;
    int synth_drivers = 6, synth_trips = 1, synth_len = 300;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--drivers", synth_drivers, "Number of drivers (1-6)")->check(CLI::Range(1, 6));
    synth->add_option("--trips", synth_trips, "Trips per behaviour")->check(CLI::PositiveNumber);
    synth->add_option("--len", synth_len, "Trip length in seconds")->check(CLI::PositiveNumber);
    synth->add_option("--out", synth_out, "Output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "Train one configuration and write a checkpoint");
    std::string train_config, train_data, train_ckpt, train_history;
    std::optional<std::uint64_t> train_synth;
    bool train_quiet = false;
    train->add_option("--config", train_config, "Experiment config file")->required()->check(CLI::ExistingFile);
    auto* train_data_opt = train->add_option("--data", train_data, "Dataset root");
    train->add_option("--synth-seed", train_synth, "Use a synthetic dataset with this seed")->excludes(train_data_opt);
    train->add_option("--checkpoint", train_ckpt, "Checkpoint output path")->required();
    train->add_option("--history", train_history, "History CSV path (default: <checkpoint>.history.csv)");
    train->add_flag("--quiet", train_quiet, "Do not print per-epoch progress");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a protocol's test split");
    std::string eval_ckpt, eval_config, eval_data, eval_protocol = "seen", eval_holdout = "D5";
    std::optional<std::uint64_t> eval_synth;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", eval_config, "Config whose data settings (root, synthetic shape) apply")
        ->check(CLI::ExistingFile);
    auto* eval_data_opt = eval->add_option("--data", eval_data, "Dataset root");
    eval->add_option("--synth-seed", eval_synth, "Use a synthetic dataset with this seed")->excludes(eval_data_opt);
    eval->add_option("--protocol", eval_protocol, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));
    eval->add_option("--holdout", eval_holdout, "Held-out driver for the unseen protocol");

    // grid
    auto* grid = app.add_subcommand("grid", "Run the experiment grid and write the results CSV");
    std::string grid_config, grid_out, grid_data;
    std::optional<std::uint64_t> grid_synth;
    int grid_jobs = 1;
    grid->add_option("--config", grid_config, "Grid config file")->required()->check(CLI::ExistingFile);
    grid->add_option("--out", grid_out, "Results CSV path")->required();
    grid->add_option("--jobs", grid_jobs, "Cells run concurrently")->check(CLI::PositiveNumber);
    auto* grid_data_opt = grid->add_option("--data", grid_data, "Dataset root (overrides the config)");
    grid->add_option("--synth-seed", grid_synth, "Use a synthetic dataset with this seed")->excludes(grid_data_opt);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare BPTT gradients with central differences");
    std::string gc_cell = "lstm";
    int gc_layers = 2, gc_hidden = 4, gc_window = 6, gc_batch = 4;
    bool gc_batchnorm = false;
    double gc_dropout = 0.0;
    std::uint64_t gc_seed = 7;
    std::optional<double> gc_threshold;
    gradcheck->add_option("--cell", gc_cell, "gru or lstm")->check(CLI::IsMember({"gru", "lstm"}));
    gradcheck->add_option("--layers", gc_layers, "Recurrent layers (1-3)")->check(CLI::Range(1, 3));
    gradcheck->add_option("--hidden", gc_hidden, "Units per layer (1-8)")->check(CLI::Range(1, 8));
    gradcheck->add_option("--window", gc_window, "Timesteps (1-10)")->check(CLI::Range(1, 10));
    gradcheck->add_option("--batch", gc_batch, "Batch size (1-4)")->check(CLI::Range(1, 4));
    gradcheck->add_flag("--batchnorm", gc_batchnorm, "Enable batch normalization (Train-mode statistics)");
    gradcheck->add_option("--dropout", gc_dropout, "Dropout rate, mask frozen across evaluations")
        ->check(CLI::Range(0.0, 0.99));
    gradcheck->add_option("--seed", gc_seed, "Seed for the random model and batch");
    gradcheck->add_option("--threshold", gc_threshold, "Failure threshold (default 1e-4, 1e-3 with --batchnorm)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*ingest) {
            ScanOptions opt;
            opt.strict = ingest_strict;
            opt.filename = raw_filename;
            const auto report = scan_dataset(ingest_root, opt);
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
            print_dataset_summary(report.trajectories, std::cout);
            std::cout << "malformed lines skipped " << report.malformed_lines << '\n';
            if (!ingest_out.empty()) {
                FeatureOptions fo;
                fo.window_length = ingest_window;
                fo.stride = ingest_stride;
                fo.include_speed_limit = ingest_speed_limit;
                const auto set = build_windows(report.trajectories, fo);
                save_windows(ingest_out, set.windows);
                const auto [neg, pos] = class_counts(set.windows);
                std::cout << "windows " << set.windows.size() << " (non-aggressive " << neg << ", aggressive " << pos
                          << "), trajectories shorter than the window " << set.too_short << '\n';
            }
            return 0;
        }

        if (*synth) {
            const auto data = generate_synthetic_dataset(synth_seed, synth_drivers, synth_trips, synth_len);
            write_dataset(synth_out, data);
            std::cout << "wrote " << data.size() << " trajectories to " << synth_out << '\n';
            return 0;
        }

        if (*train) {
            auto cfg = load_experiment_config(train_config);
            const auto data = load_data(train_data, train_synth, cfg.data);
            EpochCallback progress;
            if (!train_quiet)
                progress = [](const EpochRecord& r) {
                    std::cerr << "epoch " << r.epoch << "  train_loss " << r.train_loss << "  val_loss " << r.val_loss
                              << "  val_acc " << r.val_accuracy << "  val_f1 " << r.val_f1 << '\n';
                };
            const auto out = run_experiment(cfg, &data, progress);
            save_checkpoint(train_ckpt, out.checkpoint);
            const fs::path history_path = train_history.empty() ? fs::path(train_ckpt + ".history.csv") : fs::path(train_history);
            std::ofstream hs(history_path, std::ios::binary);
            require(static_cast<bool>(hs), ErrorKind::IoFailure, "cannot write " + history_path.string());
            write_history_csv(hs, out.history);
            std::cout << kGridCsvHeader << '\n' << grid_csv_row(out.result) << '\n';
            std::cerr << "test: " << format_report(out.result.metrics, &out.result.counts) << "  ("
                      << out.result.wall_seconds << " s)\n";
            return 0;
        }

        if (*eval) {
            const auto ck = load_checkpoint(eval_ckpt);
            const auto holdout = parse_driver(eval_holdout);
            require(holdout.has_value(), ErrorKind::InvalidArgument, "--holdout must be D1..D6");
            const DataSource fallback = eval_config.empty() ? DataSource{} : load_experiment_config(eval_config).data;
            require(!eval_data.empty() || eval_synth.has_value() || !eval_config.empty(), ErrorKind::InvalidArgument,
                    "eval needs --data, --synth-seed or --config");
            const auto data = load_data(eval_data, eval_synth, fallback);
            const auto r = evaluate_checkpoint(ck, data, parse_protocol(eval_protocol), *holdout);
            std::cout << kGridCsvHeader << '\n' << grid_csv_row(r) << '\n';
            const auto& f = r.fingerprint;
            std::cout << "test windows " << (f.test[0] + f.test[1]) << " (non-aggressive " << f.test[0]
                      << ", aggressive " << f.test[1] << "); tp " << r.counts.tp << " fp " << r.counts.fp << " tn "
                      << r.counts.tn << " fn " << r.counts.fn << '\n';
            return 0;
        }

        if (*grid) {
            auto spec = load_grid_config(grid_config);
            if (!grid_data.empty()) spec.base.data.root = grid_data;
            else if (grid_synth) {
                spec.base.data.root.reset();
                spec.base.data.synthetic.seed = *grid_synth;
            }
            const auto data = load_data("", std::nullopt, spec.base.data);
            const auto results = run_grid(spec, grid_jobs, &data);
            {
                std::ofstream os(grid_out, std::ios::binary);
                require(static_cast<bool>(os), ErrorKind::IoFailure, "cannot write " + grid_out);
                write_grid_csv(os, results);
            }
            const fs::path details = fs::path(grid_out).replace_extension(".details.csv");
            std::ofstream ds(details, std::ios::binary);
            require(static_cast<bool>(ds), ErrorKind::IoFailure, "cannot write " + details.string());
            write_grid_details_csv(ds, results);

            std::size_t failed = 0;
            for (const auto& r : results) {
                if (r.error) {
                    ++failed;
                    std::cerr << "cell failed: " << grid_csv_row(r) << ": " << *r.error << '\n';
                }
            }
            std::cout << "wrote " << results.size() << " rows to " << grid_out << " (" << failed << " failed)\n";
            return 0;
        }

        if (*gradcheck) {
            ModelConfig cfg;
            cfg.cell = parse_cell(gc_cell);
            cfg.num_layers = gc_layers;
            cfg.hidden_size = gc_hidden;
            cfg.window_length = gc_window;
            cfg.batchnorm = gc_batchnorm;
            cfg.dropout = gc_dropout;
            const double threshold = gc_threshold.value_or(gc_batchnorm ? 1e-3 : 1e-4);
            const auto r = gradient_check(cfg, gc_seed, gc_batch);
            std::cout << "max relative error " << r.max_relative_error << " over " << r.parameters_checked
                      << " parameters (threshold " << threshold << ")\n";
            return r.max_relative_error < threshold ? 0 : kExitNumeric;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}

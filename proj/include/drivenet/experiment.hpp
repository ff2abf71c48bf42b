#pragma once

// Experiment configuration files, the end-to-end pipeline for one grid cell,
// and the grid runner that reproduces the 24-cell results table.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "drivenet/checkpoint.hpp"
#include "drivenet/error.hpp"
#include "drivenet/features.hpp"
#include "drivenet/ingest.hpp"
#include "drivenet/metrics.hpp"
#include "drivenet/rnn.hpp"
#include "drivenet/train.hpp"

namespace drivenet {

struct SyntheticSpec {
    std::uint64_t seed = 1;
    int drivers = 6;
    int trips_per_behaviour = 1;
    int trip_len_s = 300;
};

struct DataSource {
    std::optional<std::filesystem::path> root; // synthetic data when unset
    ScanOptions scan;
    SyntheticSpec synthetic;
};

struct ExperimentConfig {
    std::string preset = "desk";
    ModelConfig model = desk_preset();
    FeatureOptions features;
    NormMethod normalization = NormMethod::Standardization;
    Protocol protocol = Protocol::Seen;
    DriverId holdout = DriverId::D5;
    SplitGuard split_guard = SplitGuard::None;
    TrainConfig train;
    std::uint64_t seed = 1;
    DataSource data;
};

struct GridSpec {
    ExperimentConfig base;
    std::vector<CellKind> cells{CellKind::GRU, CellKind::LSTM};
    std::vector<int> windows{60, 120, 180};
    std::vector<NormMethod> normalizations{NormMethod::MinMax, NormMethod::Standardization};
    std::vector<Protocol> protocols{Protocol::Seen, Protocol::UnseenDriver};

    std::size_t cardinality() const { return cells.size() * windows.size() * normalizations.size() * protocols.size(); }
};

// ---------------------------------------------------------------------------
// Config files
//
// One "key = value" per line, '#' starts a comment. "include = <file>" splices
// another file in place (path relative to the including file), so later lines
// override it. "preset = desk|paper-large" resets the model fields to a named
// preset at that point. Relative "data" paths resolve against the file.
// ---------------------------------------------------------------------------

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline void load_key_values(const std::filesystem::path& file, KeyValues& out, int depth) {
    require(depth < 16, ErrorKind::ConfigError, "include nesting too deep at " + file.string());
    std::ifstream in(file);
    require(static_cast<bool>(in), ErrorKind::ConfigError, "cannot open config " + file.string());
    const auto dir = file.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        require(eq != std::string::npos, ErrorKind::ConfigError,
                file.string() + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(std::string_view(body).substr(0, eq));
        std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key == "include") {
            load_key_values(dir / value, out, depth + 1);
            continue;
        }
        if (key == "data" && !value.empty() && std::filesystem::path(value).is_relative())
            value = (dir / value).lexically_normal().string();
        out.emplace_back(std::move(key), std::move(value));
    }
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

} // namespace detail

inline KeyValues load_key_values(const std::filesystem::path& file) {
    KeyValues kv;
    detail::load_key_values(file, kv, 0);
    return kv;
}

inline CellKind parse_cell(const std::string& v) {
    const auto s = detail::lower(v);
    if (s == "gru") return CellKind::GRU;
    if (s == "lstm") return CellKind::LSTM;
    throw Error(ErrorKind::ConfigError, "unknown cell kind '" + v + "'");
}

inline NormMethod parse_norm(const std::string& v) {
    const auto s = detail::lower(v);
    if (s == "minmax" || s == "min-max") return NormMethod::MinMax;
    if (s == "standardization" || s == "standard" || s == "zscore") return NormMethod::Standardization;
    throw Error(ErrorKind::ConfigError, "unknown normalization '" + v + "'");
}

inline Protocol parse_protocol(const std::string& v) {
    const auto s = detail::lower(v);
    if (s == "seen") return Protocol::Seen;
    if (s == "unseen" || s == "unseen-driver") return Protocol::UnseenDriver;
    throw Error(ErrorKind::ConfigError, "unknown protocol '" + v + "'");
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    const auto s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error(ErrorKind::ConfigError, key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        T out;
        if constexpr (std::is_floating_point_v<T>) out = static_cast<T>(std::stod(v, &used));
        else if constexpr (std::is_unsigned_v<T>) out = static_cast<T>(std::stoull(v, &used));
        else out = static_cast<T>(std::stoll(v, &used));
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, key + ": expected a number, got '" + v + "'");
}

inline void apply_preset(ExperimentConfig& cfg, const std::string& name) {
    const auto s = lower(name);
    ModelConfig m;
    if (s == "desk") m = desk_preset();
    else if (s == "paper-large") m = paper_large_preset();
    else throw Error(ErrorKind::ConfigError, "unknown preset '" + name + "'");
    m.cell = cfg.model.cell;
    m.window_length = cfg.model.window_length;
    m.input_features = cfg.model.input_features;
    cfg.model = m;
    cfg.preset = s;
}

} // namespace detail

/// Applies key/value pairs in order. Returns grid axes as well so one file can
/// describe both a single run and a grid.
inline GridSpec parse_grid_config(const KeyValues& kv) {
    GridSpec g;
    ExperimentConfig& c = g.base;
    using detail::parse_bool;
    using detail::parse_number;
    for (const auto& [key, value] : kv) {
        if (key == "preset") detail::apply_preset(c, value);
        else if (key == "cell") c.model.cell = parse_cell(value);
        else if (key == "layers") c.model.num_layers = parse_number<int>(key, value);
        else if (key == "hidden") c.model.hidden_size = parse_number<int>(key, value);
        else if (key == "dropout") c.model.dropout = parse_number<double>(key, value);
        else if (key == "batchnorm") c.model.batchnorm = parse_bool(key, value);
        else if (key == "pooling") {
            const auto s = detail::lower(value);
            require(s == "last" || s == "mean", ErrorKind::ConfigError, "pooling must be last or mean");
            c.model.pooling = s == "last" ? Pooling::LastStep : Pooling::Mean;
        } else if (key == "output_bias") {
            if (detail::lower(value) == "auto") c.model.output_bias_init.reset();
            else c.model.output_bias_init = parse_number<double>(key, value);
        } else if (key == "window") c.features.window_length = parse_number<int>(key, value);
        else if (key == "stride") c.features.stride = parse_number<int>(key, value);
        else if (key == "speed_limit_feature") c.features.include_speed_limit = parse_bool(key, value);
        else if (key == "drowsy") {
            const auto s = detail::lower(value);
            if (s == "non-aggressive" || s == "negative") c.features.drowsy = DrowsyPolicy::NonAggressive;
            else if (s == "exclude") c.features.drowsy = DrowsyPolicy::Exclude;
            else throw Error(ErrorKind::ConfigError, "drowsy must be non-aggressive or exclude");
        } else if (key == "normalization") c.normalization = parse_norm(value);
        else if (key == "protocol") c.protocol = parse_protocol(value);
        else if (key == "holdout") {
            auto d = parse_driver(value);
            require(d.has_value(), ErrorKind::ConfigError, "holdout must be D1..D6");
            c.holdout = *d;
        } else if (key == "split_guard") {
            const auto s = detail::lower(value);
            require(s == "none" || s == "trajectory", ErrorKind::ConfigError, "split_guard must be none or trajectory");
            c.split_guard = s == "none" ? SplitGuard::None : SplitGuard::Trajectory;
        } else if (key == "epochs") c.train.epochs = parse_number<int>(key, value);
        else if (key == "batch_size") c.train.batch_size = parse_number<int>(key, value);
        else if (key == "learning_rate") c.train.learning_rate = parse_number<double>(key, value);
        else if (key == "optimizer") {
            const auto s = detail::lower(value);
            require(s == "adam" || s == "sgd", ErrorKind::ConfigError, "optimizer must be adam or sgd");
            c.train.optimizer = s == "adam" ? OptimizerKind::Adam : OptimizerKind::SGD;
        } else if (key == "adam_beta1") c.train.adam_beta1 = parse_number<double>(key, value);
        else if (key == "adam_beta2") c.train.adam_beta2 = parse_number<double>(key, value);
        else if (key == "adam_epsilon") c.train.adam_epsilon = parse_number<double>(key, value);
        else if (key == "sgd_momentum") c.train.sgd_momentum = parse_number<double>(key, value);
        else if (key == "class_weights") {
            if (detail::lower(value) == "auto") c.train.class_weights.reset();
            else {
                const auto parts = detail::split_list(value);
                require(parts.size() == 2, ErrorKind::ConfigError, "class_weights must be auto or w0,w1");
                c.train.class_weights = ClassWeights{parse_number<double>(key, parts[0]),
                                                     parse_number<double>(key, parts[1])};
            }
        } else if (key == "oversample") c.train.use_oversampling = parse_bool(key, value);
        else if (key == "oversample_validation") c.train.oversample_validation = parse_bool(key, value);
        else if (key == "patience") c.train.early_stop_patience = parse_number<int>(key, value);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "data") {
            if (value.empty() || detail::lower(value) == "synthetic") c.data.root.reset();
            else c.data.root = value;
        } else if (key == "raw_filename") c.data.scan.filename = value;
        else if (key == "strict") c.data.scan.strict = parse_bool(key, value);
        else if (key == "columns") {
            const auto parts = detail::split_list(value);
            require(parts.size() == 7, ErrorKind::ConfigError, "columns needs 7 indices");
            for (std::size_t i = 0; i < 7; ++i) c.data.scan.columns.index[i] = parse_number<std::size_t>(key, parts[i]);
        } else if (key == "synth_seed") c.data.synthetic.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "synth_drivers") c.data.synthetic.drivers = parse_number<int>(key, value);
        else if (key == "synth_trips") c.data.synthetic.trips_per_behaviour = parse_number<int>(key, value);
        else if (key == "synth_len") c.data.synthetic.trip_len_s = parse_number<int>(key, value);
        else if (key == "grid.cells") {
            g.cells.clear();
            for (const auto& s : detail::split_list(value)) g.cells.push_back(parse_cell(s));
        } else if (key == "grid.windows") {
            g.windows.clear();
            for (const auto& s : detail::split_list(value)) g.windows.push_back(parse_number<int>(key, s));
        } else if (key == "grid.normalizations") {
            g.normalizations.clear();
            for (const auto& s : detail::split_list(value)) g.normalizations.push_back(parse_norm(s));
        } else if (key == "grid.protocols") {
            g.protocols.clear();
            for (const auto& s : detail::split_list(value)) g.protocols.push_back(parse_protocol(s));
        } else throw Error(ErrorKind::ConfigError, "unknown key '" + key + "'");
    }
    require(g.cardinality() > 0, ErrorKind::ConfigError, "grid has an empty axis");
    return g;
}

inline ExperimentConfig parse_experiment_config(const KeyValues& kv) { return parse_grid_config(kv).base; }

inline GridSpec load_grid_config(const std::filesystem::path& file) { return parse_grid_config(load_key_values(file)); }

inline ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    return parse_experiment_config(load_key_values(file));
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct ExperimentResult {
    CellKind cell = CellKind::LSTM;
    int window_length = 0;
    NormMethod normalization = NormMethod::Standardization;
    Protocol protocol = Protocol::Seen;
    std::uint64_t seed = 0;
    MetricsReport metrics;
    ConfusionCounts counts;
    double wall_seconds = 0.0;
    DatasetFingerprint fingerprint;
    std::optional<std::string> error;
};

struct ExperimentOutcome {
    ExperimentResult result;
    Checkpoint checkpoint;
    TrainHistory history;
};

inline std::vector<Trajectory> load_trajectories(const DataSource& src, std::vector<std::string>* warnings = nullptr) {
    if (!src.root) {
        const auto& s = src.synthetic;
        return generate_synthetic_dataset(s.seed, s.drivers, s.trips_per_behaviour, s.trip_len_s);
    }
    auto report = scan_dataset(*src.root, src.scan);
    if (warnings) *warnings = std::move(report.warnings);
    return std::move(report.trajectories);
}

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

} // namespace detail

/// Windows the protocol's split, normalizer fitted on the training windows
/// and applied to all three splits.
struct PreparedData {
    SplitBundle bundle;
    NormStats norm;
    std::size_t too_short = 0;
};

inline PreparedData prepare_data(const std::vector<Trajectory>& trajectories, const FeatureOptions& features,
                                 NormMethod normalization, Protocol protocol, DriverId holdout, SplitGuard guard,
                                 std::uint64_t seed) {
    PreparedData out;
    auto set = detail::stage("features", [&] { return build_windows(trajectories, features); });
    out.too_short = set.too_short;
    out.bundle = detail::stage("split", [&] {
        return protocol == Protocol::Seen ? split_seen(set.windows, seed, guard)
                                          : split_unseen(set.windows, holdout, seed);
    });
    detail::stage("normalize", [&] {
        out.norm = fit_normalizer(std::span<const FeatureWindow>(out.bundle.train), normalization);
        normalize_windows(out.bundle.train, out.norm);
        normalize_windows(out.bundle.validation, out.norm);
        normalize_windows(out.bundle.test, out.norm);
        return 0;
    });
    return out;
}

/// data -> features -> split -> normalize -> train -> evaluate on test.
/// Pass `trajectories` to reuse an already loaded dataset.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg,
                                        const std::vector<Trajectory>* trajectories = nullptr,
                                        const EpochCallback& on_epoch = {}) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<Trajectory> loaded;
    if (!trajectories) {
        loaded = detail::stage("data", [&] { return load_trajectories(cfg.data); });
        trajectories = &loaded;
    }

    ExperimentConfig c = cfg;
    c.model.window_length = c.features.window_length;
    c.model.input_features = feature_count(c.features.include_speed_limit);
    c.train.seed = c.seed;

    const auto prepared = prepare_data(*trajectories, c.features, c.normalization, c.protocol, c.holdout,
                                       c.split_guard, c.seed);

    ExperimentOutcome out;
    auto& r = out.result;
    r.cell = c.model.cell;
    r.window_length = c.features.window_length;
    r.normalization = c.normalization;
    r.protocol = c.protocol;
    r.seed = c.seed;
    r.fingerprint = fingerprint(prepared.bundle);

    auto trained = detail::stage("train", [&] { return train_model(prepared.bundle, c.model, c.train, on_epoch); });
    const auto eval = detail::stage("evaluate", [&] {
        return evaluate(trained.params, c.model, prepared.bundle.test, trained.weights);
    });
    r.metrics = eval.report;
    r.counts = eval.counts;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    out.history = std::move(trained.history);
    out.checkpoint.config = c.model;
    out.checkpoint.params = std::move(trained.params);
    PipelineInfo info;
    info.norm = prepared.norm;
    info.features = c.features;
    info.protocol = c.protocol;
    info.split_guard = c.split_guard;
    if (c.protocol == Protocol::UnseenDriver) info.held_out = c.holdout;
    info.seed = c.seed;
    info.weights = trained.weights;
    out.checkpoint.pipeline = std::move(info);
    return out;
}

/// Re-evaluates a checkpoint on the test split of `trajectories` for the given
/// protocol, rebuilding windows with the checkpoint's stored pipeline.
inline ExperimentResult evaluate_checkpoint(const Checkpoint& ck, const std::vector<Trajectory>& trajectories,
                                            Protocol protocol, DriverId holdout) {
    require(ck.pipeline.has_value(), ErrorKind::CheckpointError, "checkpoint carries no pipeline section");
    const auto& p = *ck.pipeline;
    auto set = detail::stage("features", [&] { return build_windows(trajectories, p.features); });
    auto bundle = detail::stage("split", [&] {
        return protocol == Protocol::Seen ? split_seen(set.windows, p.seed, p.split_guard) : split_unseen(set.windows, holdout, p.seed);
    });
    normalize_windows(bundle.test, p.norm);
    const auto eval = detail::stage("evaluate", [&] { return evaluate(ck.params, ck.config, bundle.test, p.weights); });
    ExperimentResult r;
    r.cell = ck.config.cell;
    r.window_length = ck.config.window_length;
    r.normalization = p.norm.method;
    r.protocol = protocol;
    r.seed = p.seed;
    r.metrics = eval.report;
    r.counts = eval.counts;
    r.fingerprint = fingerprint(bundle);
    return r;
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

inline constexpr std::string_view kGridCsvHeader =
    "NN,timestep,normalization,Evaluation,loss,accuracy,precision,recall,F1 Score";

inline std::vector<ExperimentConfig> expand_grid(const GridSpec& g) {
    std::vector<ExperimentConfig> out;
    for (auto cell : g.cells)
        for (auto proto : g.protocols)
            for (int w : g.windows)
                for (auto norm : g.normalizations) {
                    ExperimentConfig c = g.base;
                    c.model.cell = cell;
                    c.protocol = proto;
                    c.features.window_length = w;
                    c.normalization = norm;
                    out.push_back(c);
                }
    return out;
}

inline bool result_order(const ExperimentResult& a, const ExperimentResult& b) {
    return std::tuple(a.cell, a.protocol, a.window_length, a.normalization) <
           std::tuple(b.cell, b.protocol, b.window_length, b.normalization);
}

inline std::string grid_csv_row(const ExperimentResult& r) {
    std::ostringstream os;
    os << to_string(r.cell) << ',' << r.window_length << ',' << to_string(r.normalization) << ','
       << to_string(r.protocol) << ',';
    if (r.error) os << "ERROR,ERROR,ERROR,ERROR,ERROR";
    else os << format_metric_columns(r.metrics);
    return os.str();
}

inline void write_grid_csv(std::ostream& os, std::span<const ExperimentResult> results) {
    os << kGridCsvHeader << '\n';
    for (const auto& r : results) os << grid_csv_row(r) << '\n';
}

/// Split sizes, leakage checks and confusion counts per row.
inline void write_grid_details_csv(std::ostream& os, std::span<const ExperimentResult> results) {
    os << "NN,timestep,normalization,Evaluation,seed,train_neg,train_pos,val_neg,val_pos,test_neg,test_pos,"
          "disjoint,heldout_in_train_val,test_only_heldout,tp,fp,tn,fn,error\n";
    for (const auto& r : results) {
        const auto& f = r.fingerprint;
        std::string err = r.error.value_or("");
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << to_string(r.cell) << ',' << r.window_length << ',' << to_string(r.normalization) << ','
           << to_string(r.protocol) << ',' << r.seed << ',' << f.train[0] << ',' << f.train[1] << ','
           << f.validation[0] << ',' << f.validation[1] << ',' << f.test[0] << ',' << f.test[1] << ','
           << (f.disjoint ? 1 : 0) << ',' << f.held_out_in_train_or_validation << ','
           << (f.test_only_held_out ? 1 : 0) << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn << ','
           << r.counts.fn << ',' << err << '\n';
    }
}

/// Runs every cell, `jobs` at a time. Each cell owns its model and RNG, so
/// results do not depend on `jobs`. A failing cell becomes an error row.
inline std::vector<ExperimentResult> run_grid(const GridSpec& grid, int jobs = 1,
                                              const std::vector<Trajectory>* trajectories = nullptr) {
    require(jobs >= 1, ErrorKind::InvalidArgument, "jobs must be >= 1");
    std::vector<Trajectory> loaded;
    if (!trajectories) {
        loaded = detail::stage("data", [&] { return load_trajectories(grid.base.data); });
        trajectories = &loaded;
    }
    const auto configs = expand_grid(grid);
    std::vector<ExperimentResult> results(configs.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            const auto& c = configs[i];
            try {
                results[i] = run_experiment(c, trajectories).result;
            } catch (const std::exception& e) {
                ExperimentResult r;
                r.cell = c.model.cell;
                r.window_length = c.features.window_length;
                r.normalization = c.normalization;
                r.protocol = c.protocol;
                r.seed = c.seed;
                r.error = e.what();
                results[i] = std::move(r);
            }
        }
    };
    const int threads = std::min<int>(jobs, static_cast<int>(configs.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    std::stable_sort(results.begin(), results.end(), result_order);
    return results;
}

} // namespace drivenet

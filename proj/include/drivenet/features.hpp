#pragma once

// Feature assembly, normalization, overlapped windowing, split protocols and
// class balancing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "drivenet/error.hpp"
#include "drivenet/ingest.hpp"

namespace drivenet {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kBaseFeatures = 8;

/// Column order of an assembled feature series.
enum Feature : int {
    kSpeed = 0,
    kLat,
    kLon,
    kAlt,
    kDeltaSpeed,
    kDeltaLat,
    kDeltaLon,
    kDeltaAlt,
    kSpeedLimitGap, // present only when the speed-limit feature is enabled
};

struct FeatureWindow {
    Matrix values; // window_length x features
    int label = 0;
    DriverId driver = DriverId::D1;
    std::size_t trajectory_id = 0;
    std::size_t start_index = 0;
};

enum class NormMethod { MinMax, Standardization };
enum class Protocol { Seen, UnseenDriver };
enum class DrowsyPolicy { NonAggressive, Exclude };
enum class SplitGuard { None, Trajectory };

inline std::string_view to_string(NormMethod m) { return m == NormMethod::MinMax ? "Min-Max" : "Standardization"; }
inline std::string_view to_string(Protocol p) { return p == Protocol::Seen ? "Seen" : "Unseen"; }

struct NormStats {
    NormMethod method = NormMethod::Standardization;
    RowVector min, max;
    RowVector mean, stddev; // population standard deviation

    Eigen::Index features() const { return min.size(); }
};

struct SplitBundle {
    std::vector<FeatureWindow> train, validation, test;
    Protocol protocol = Protocol::Seen;
    std::uint64_t seed = 0;
    std::optional<DriverId> held_out;
};

struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;

    double of(int label) const { return label == 1 ? positive : negative; }
};

inline int binary_label(Behaviour b) { return b == Behaviour::Aggressive ? 1 : 0; }

/// Per-timestep (speed, lat, lon, alt) differences; the first row is zero.
inline Matrix compute_deltas(const Trajectory& traj) {
    const auto& rec = traj.records;
    require(!rec.empty(), ErrorKind::InvalidArgument, "trajectory has no records");
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(rec.size()), 4);
    for (std::size_t t = 1; t < rec.size(); ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        d(i, 0) = rec[t].speed_kmh - rec[t - 1].speed_kmh;
        d(i, 1) = rec[t].lat_deg - rec[t - 1].lat_deg;
        d(i, 2) = rec[t].lon_deg - rec[t - 1].lon_deg;
        d(i, 3) = rec[t].alt_m - rec[t - 1].alt_m;
    }
    return d;
}

inline int feature_count(bool include_speed_limit) { return kBaseFeatures + (include_speed_limit ? 1 : 0); }

inline Matrix assemble_feature_series(const Trajectory& traj, bool include_speed_limit = false) {
    const Matrix deltas = compute_deltas(traj);
    const auto rows = static_cast<Eigen::Index>(traj.records.size());
    Matrix series(rows, feature_count(include_speed_limit));
    for (Eigen::Index t = 0; t < rows; ++t) {
        const auto& r = traj.records[static_cast<std::size_t>(t)];
        series(t, kSpeed) = r.speed_kmh;
        series(t, kLat) = r.lat_deg;
        series(t, kLon) = r.lon_deg;
        series(t, kAlt) = r.alt_m;
        if (include_speed_limit) series(t, kSpeedLimitGap) = traj.road_speed_limit_kmh - r.speed_kmh;
    }
    series.middleCols(kDeltaSpeed, 4) = deltas;
    return series;
}

namespace detail {

template <typename Visit>
NormStats fit_blocks(Eigen::Index features, NormMethod method, Visit&& visit) {
    NormStats s;
    s.method = method;
    s.min = RowVector::Constant(features, std::numeric_limits<double>::infinity());
    s.max = RowVector::Constant(features, -std::numeric_limits<double>::infinity());
    RowVector sum = RowVector::Zero(features);
    double count = 0.0;
    visit([&](const Matrix& m) {
        require(m.cols() == features, ErrorKind::LayoutMismatch, "feature count differs between blocks");
        s.min = s.min.cwiseMin(m.colwise().minCoeff());
        s.max = s.max.cwiseMax(m.colwise().maxCoeff());
        sum += m.colwise().sum();
        count += static_cast<double>(m.rows());
    });
    require(count > 0.0, ErrorKind::InvalidArgument, "cannot fit a normalizer on zero timesteps");
    s.mean = sum / count;
    RowVector sq = RowVector::Zero(features);
    visit([&](const Matrix& m) { sq += (m.rowwise() - s.mean).array().square().matrix().colwise().sum(); });
    s.stddev = (sq / count).array().sqrt().matrix();
    return s;
}

} // namespace detail

/// Fits per-feature statistics over every timestep of the given series.
inline NormStats fit_normalizer(const Matrix& series, NormMethod method) {
    require(series.rows() > 0, ErrorKind::InvalidArgument, "cannot fit a normalizer on zero timesteps");
    return detail::fit_blocks(series.cols(), method, [&](auto&& f) { f(series); });
}

inline NormStats fit_normalizer(std::span<const FeatureWindow> windows, NormMethod method) {
    require(!windows.empty(), ErrorKind::InvalidArgument, "cannot fit a normalizer on zero windows");
    return detail::fit_blocks(windows.front().values.cols(), method, [&](auto&& f) {
        for (const auto& w : windows) f(w.values);
    });
}

/// x' = (x - min) / (max - min) or (x - mean) / stddev per feature. A feature
/// with zero range maps to 0. Values are not clamped.
inline Matrix apply_normalizer(const Matrix& data, const NormStats& stats) {
    require(data.cols() == stats.features(), ErrorKind::LayoutMismatch,
            "data has " + std::to_string(data.cols()) + " features, stats have " +
                std::to_string(stats.features()));
    Matrix out(data.rows(), data.cols());
    for (Eigen::Index f = 0; f < data.cols(); ++f) {
        double offset, range;
        if (stats.method == NormMethod::MinMax) {
            offset = stats.min(f);
            range = stats.max(f) - stats.min(f);
        } else {
            offset = stats.mean(f);
            range = stats.stddev(f);
        }
        if (range > 0.0) out.col(f) = (data.col(f).array() - offset) / range;
        else out.col(f).setZero();
    }
    return out;
}

inline void normalize_windows(std::vector<FeatureWindow>& windows, const NormStats& stats) {
    for (auto& w : windows) w.values = apply_normalizer(w.values, stats);
}

struct WindowOrigin {
    DriverId driver = DriverId::D1;
    std::size_t trajectory_id = 0;
};

/// Sliding windows of `length` rows every `stride` rows. A series shorter than
/// the window yields nothing and bumps `*too_short` when given.
inline std::vector<FeatureWindow> make_windows(const Matrix& series, int label, int length, int stride,
                                               WindowOrigin origin = {}, std::size_t* too_short = nullptr) {
    require(length >= 1 && stride >= 1, ErrorKind::InvalidArgument, "window length and stride must be >= 1");
    std::vector<FeatureWindow> out;
    const Eigen::Index rows = series.rows();
    if (rows < length) {
        if (too_short) ++*too_short;
        return out;
    }
    out.reserve(static_cast<std::size_t>((rows - length) / stride + 1));
    for (Eigen::Index start = 0; start + length <= rows; start += stride) {
        FeatureWindow w;
        w.values = series.middleRows(start, length);
        w.label = label;
        w.driver = origin.driver;
        w.trajectory_id = origin.trajectory_id;
        w.start_index = static_cast<std::size_t>(start);
        out.push_back(std::move(w));
    }
    return out;
}

struct FeatureOptions {
    int window_length = 120;
    int stride = 1;
    bool include_speed_limit = false;
    DrowsyPolicy drowsy = DrowsyPolicy::NonAggressive;
};

struct WindowSet {
    std::vector<FeatureWindow> windows;
    std::size_t too_short = 0;
};

/// Raw (unnormalized) windows for a whole dataset; trajectory ids are the
/// indices into `trajectories`.
inline WindowSet build_windows(const std::vector<Trajectory>& trajectories, const FeatureOptions& opt) {
    WindowSet set;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& traj = trajectories[i];
        if (opt.drowsy == DrowsyPolicy::Exclude && traj.behaviour == Behaviour::Drowsy) continue;
        if (traj.records.empty()) continue;
        auto ws = make_windows(assemble_feature_series(traj, opt.include_speed_limit), binary_label(traj.behaviour),
                               opt.window_length, opt.stride, {traj.driver, i}, &set.too_short);
        std::move(ws.begin(), ws.end(), std::back_inserter(set.windows));
    }
    return set;
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

inline std::vector<FeatureWindow> gather(const std::vector<FeatureWindow>& src, std::span<const std::size_t> idx) {
    std::vector<FeatureWindow> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(src[i]);
    return out;
}

} // namespace detail

/// Shuffle then 70/15/15 by window count; the remainder goes to test. With
/// SplitGuard::Trajectory whole trajectories are assigned instead, so no two
/// splits share overlapping windows.
inline SplitBundle split_seen(const std::vector<FeatureWindow>& windows, std::uint64_t seed,
                              SplitGuard guard = SplitGuard::None) {
    const std::size_t n = windows.size();
    require(n >= 3, ErrorKind::TooFewWindows, "need at least 3 windows, got " + std::to_string(n));
    std::mt19937_64 rng(seed);
    SplitBundle b;
    b.protocol = Protocol::Seen;
    b.seed = seed;
    const std::size_t n_train = n * 70 / 100;
    const std::size_t n_val = n * 15 / 100;

    if (guard == SplitGuard::None) {
        const auto idx = detail::shuffled_indices(n, rng);
        const std::span<const std::size_t> all(idx);
        b.train = detail::gather(windows, all.subspan(0, n_train));
        b.validation = detail::gather(windows, all.subspan(n_train, n_val));
        b.test = detail::gather(windows, all.subspan(n_train + n_val));
        return b;
    }

    std::map<std::size_t, std::vector<std::size_t>> by_traj;
    for (std::size_t i = 0; i < n; ++i) by_traj[windows[i].trajectory_id].push_back(i);
    std::vector<std::size_t> traj_ids;
    for (const auto& [id, _] : by_traj) traj_ids.push_back(id);
    std::shuffle(traj_ids.begin(), traj_ids.end(), rng);
    for (auto id : traj_ids) {
        auto& dst = b.train.size() < n_train ? b.train : (b.validation.size() < n_val ? b.validation : b.test);
        for (auto i : by_traj[id]) dst.push_back(windows[i]);
    }
    return b;
}

/// All windows of the held-out driver become the test set; the rest are
/// shuffled and split 80/20 into train and validation.
inline SplitBundle split_unseen(const std::vector<FeatureWindow>& windows, DriverId held_out, std::uint64_t seed) {
    std::vector<std::size_t> rest;
    SplitBundle b;
    b.protocol = Protocol::UnseenDriver;
    b.seed = seed;
    b.held_out = held_out;
    std::set<DriverId> drivers;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        drivers.insert(windows[i].driver);
        if (windows[i].driver == held_out) b.test.push_back(windows[i]);
        else rest.push_back(i);
    }
    require(!b.test.empty(), ErrorKind::MissingDriver, "no windows for held-out driver " + to_string(held_out));
    require(drivers.size() >= 2, ErrorKind::MissingDriver, "need windows from at least two drivers");
    std::mt19937_64 rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    const std::size_t n_train = rest.size() * 80 / 100;
    const std::span<const std::size_t> all(rest);
    b.train = detail::gather(windows, all.subspan(0, n_train));
    b.validation = detail::gather(windows, all.subspan(n_train));
    return b;
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const FeatureWindow> windows) {
    std::size_t pos = 0;
    for (const auto& w : windows) pos += (w.label == 1);
    return {windows.size() - pos, pos};
}

/// Duplicates minority windows (sampling with replacement) until both classes
/// have equal counts, then reshuffles.
inline std::vector<FeatureWindow> oversample_minority(const std::vector<FeatureWindow>& windows, std::uint64_t seed) {
    const auto [neg, pos] = class_counts(windows);
    require(neg > 0 && pos > 0, ErrorKind::SingleClass, "oversampling needs both classes present");
    const int minority = pos < neg ? 1 : 0;
    std::vector<std::size_t> minority_idx;
    for (std::size_t i = 0; i < windows.size(); ++i)
        if (windows[i].label == minority) minority_idx.push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<FeatureWindow> out = windows;
    const std::size_t deficit = std::max(neg, pos) - std::min(neg, pos);
    std::uniform_int_distribution<std::size_t> pick(0, minority_idx.size() - 1);
    for (std::size_t k = 0; k < deficit; ++k) out.push_back(windows[minority_idx[pick(rng)]]);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// weight_c = N / (2 N_c)
inline ClassWeights class_weights(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int y : labels) pos += (y == 1);
    const std::size_t n = labels.size();
    const std::size_t neg = n - pos;
    require(pos > 0 && neg > 0, ErrorKind::SingleClass, "class weights need both classes present");
    const double total = static_cast<double>(n);
    return {total / (2.0 * static_cast<double>(neg)), total / (2.0 * static_cast<double>(pos))};
}

inline std::vector<int> labels_of(std::span<const FeatureWindow> windows) {
    std::vector<int> y;
    y.reserve(windows.size());
    for (const auto& w : windows) y.push_back(w.label);
    return y;
}

/// Per-split class counts plus the leakage checks a result row must prove.
struct DatasetFingerprint {
    std::array<std::size_t, 2> train{}, validation{}, test{};
    bool disjoint = true;
    std::size_t held_out_in_train_or_validation = 0;
    bool test_only_held_out = true;
};

inline DatasetFingerprint fingerprint(const SplitBundle& b) {
    DatasetFingerprint fp;
    auto tally = [](std::span<const FeatureWindow> ws, std::array<std::size_t, 2>& c) {
        for (const auto& w : ws) ++c[w.label == 1 ? 1 : 0];
    };
    tally(b.train, fp.train);
    tally(b.validation, fp.validation);
    tally(b.test, fp.test);

    std::map<std::pair<std::size_t, std::size_t>, int> owner;
    auto claim = [&](std::span<const FeatureWindow> ws, int split) {
        for (const auto& w : ws) {
            auto [it, fresh] = owner.emplace(std::make_pair(w.trajectory_id, w.start_index), split);
            if (!fresh && it->second != split) fp.disjoint = false;
        }
    };
    claim(b.train, 0);
    claim(b.validation, 1);
    claim(b.test, 2);

    if (b.held_out) {
        for (const auto* ws : {&b.train, &b.validation})
            for (const auto& w : *ws) fp.held_out_in_train_or_validation += (w.driver == *b.held_out);
        fp.test_only_held_out = !b.test.empty();
        for (const auto& w : b.test) fp.test_only_held_out &= (w.driver == *b.held_out);
    }
    return fp;
}

// Windows file, plain text:
//   drivenet-windows 1
//   <W> <F> <count>
//   <count labels separated by spaces>
//   then per window: "<driver> <trajectory_id> <start_index>" followed by W
//   lines of F values (17 significant digits).
inline void save_windows(const std::filesystem::path& path, std::span<const FeatureWindow> windows) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::IoFailure, "cannot write " + path.string());
    const Eigen::Index rows = windows.empty() ? 0 : windows.front().values.rows();
    const Eigen::Index cols = windows.empty() ? 0 : windows.front().values.cols();
    out << "drivenet-windows 1\n" << rows << ' ' << cols << ' ' << windows.size() << '\n';
    for (std::size_t i = 0; i < windows.size(); ++i) out << (i ? " " : "") << windows[i].label;
    out << '\n';
    out.precision(17);
    for (const auto& w : windows) {
        require(w.values.rows() == rows && w.values.cols() == cols, ErrorKind::LayoutMismatch,
                "windows of differing shape");
        out << to_string(w.driver) << ' ' << w.trajectory_id << ' ' << w.start_index << '\n';
        for (Eigen::Index t = 0; t < rows; ++t) {
            for (Eigen::Index f = 0; f < cols; ++f) out << (f ? " " : "") << w.values(t, f);
            out << '\n';
        }
    }
}

inline std::vector<FeatureWindow> load_windows(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IoFailure, "cannot open " + path.string());
    std::string magic;
    int version = 0;
    Eigen::Index rows = 0, cols = 0;
    std::size_t count = 0;
    in >> magic >> version >> rows >> cols >> count;
    require(in && magic == "drivenet-windows" && version == 1, ErrorKind::IoFailure,
            "not a windows file (v1): " + path.string());
    std::vector<FeatureWindow> out(count);
    for (auto& w : out) in >> w.label;
    for (auto& w : out) {
        std::string driver;
        int label = w.label;
        in >> driver >> w.trajectory_id >> w.start_index;
        auto d = parse_driver(driver);
        require(in && d.has_value(), ErrorKind::IoFailure, "corrupt window header in " + path.string());
        w.driver = *d;
        w.label = label;
        w.values.resize(rows, cols);
        for (Eigen::Index t = 0; t < rows; ++t)
            for (Eigen::Index f = 0; f < cols; ++f) in >> w.values(t, f);
        require(static_cast<bool>(in), ErrorKind::IoFailure, "truncated windows file " + path.string());
    }
    return out;
}

} // namespace drivenet

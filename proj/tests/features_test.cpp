#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "drivenet/features.hpp"
#include "reference_grid.hpp"
#include "test_support.hpp"

using namespace drivenet;
using namespace drivenet::testing;

namespace {

ErrorKind kind_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no drivenet::Error thrown";
    return ErrorKind::InvalidArgument;
}

Trajectory two_point_trip() {
    Trajectory t;
    t.driver = DriverId::D1;
    t.behaviour = Behaviour::Normal;
    t.road = Road::Secondary;
    t.road_length_km = 16;
    t.road_speed_limit_kmh = 90;
    t.records.push_back({0, 47, 23.45, 56.78, 12.56, 1, 1});
    t.records.push_back({1, 50, 29.45, 59.78, 11.50, 1, 1});
    return t;
}

Matrix column(std::span<const double> xs) {
    Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = xs[i];
    return m;
}

std::vector<FeatureWindow> labelled_windows(std::size_t n, std::size_t positives, DriverId driver = DriverId::D1,
                                            std::size_t traj = 0) {
    std::vector<FeatureWindow> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].values = Matrix::Constant(2, 1, static_cast<double>(i));
        out[i].label = i < positives ? 1 : 0;
        out[i].driver = driver;
        out[i].trajectory_id = traj;
        out[i].start_index = i;
    }
    return out;
}

std::set<std::pair<std::size_t, std::size_t>> keys(const std::vector<FeatureWindow>& ws) {
    std::set<std::pair<std::size_t, std::size_t>> s;
    for (const auto& w : ws) s.emplace(w.trajectory_id, w.start_index);
    return s;
}

} // namespace

TEST(Labels, BinaryMapping) {
    EXPECT_EQ(binary_label(Behaviour::Aggressive), 1);
    EXPECT_EQ(binary_label(Behaviour::Normal), 0);
    EXPECT_EQ(binary_label(Behaviour::Drowsy), 0);
}

TEST(Deltas, PositionChangesAtSecondStep) {
    const Matrix d = compute_deltas(two_point_trip());
    EXPECT_TRUE(d.row(0).isZero());
    EXPECT_NEAR(d(1, 1), 6.0, 1e-12);
    EXPECT_NEAR(d(1, 2), 3.0, 1e-12);
    EXPECT_NEAR(d(1, 3), -1.06, 1e-12);
}

TEST(Deltas, ConstantTrajectory) {
    Trajectory t = two_point_trip();
    t.records[1] = t.records[0];
    t.records[1].timestamp_s = 1;
    EXPECT_TRUE(compute_deltas(t).isZero());
}

TEST(FeatureSeries, EightFeatureRow) {
    const Matrix s = assemble_feature_series(two_point_trip());
    ASSERT_EQ(s.cols(), 8);
    const std::array<double, 8> expected{50, 29.45, 59.78, 11.50, 3, 6, 3, -1.06};
    for (int f = 0; f < 8; ++f) EXPECT_NEAR(s(1, f), expected[static_cast<std::size_t>(f)], 1e-12) << f;
}

TEST(FeatureSeries, SpeedLimitGap) {
    const Matrix s = assemble_feature_series(two_point_trip(), true);
    ASSERT_EQ(s.cols(), 9);
    EXPECT_DOUBLE_EQ(s(1, kSpeedLimitGap), 40.0);
}

TEST(FeatureSeries, SingleRecord) {
    Trajectory t = two_point_trip();
    t.records.resize(1);
    const Matrix s = assemble_feature_series(t);
    ASSERT_EQ(s.rows(), 1);
    EXPECT_TRUE(s.rightCols(4).isZero());
}

TEST(Normalizer, MinMaxFitAndApplyMatchPublishedColumn) {
    const Matrix col = column(kScalingColumn);
    const auto stats = fit_normalizer(col, NormMethod::MinMax);
    EXPECT_DOUBLE_EQ(stats.min(0), 5.0);
    EXPECT_DOUBLE_EQ(stats.max(0), 30.0);
    const Matrix out = apply_normalizer(col, stats);
    for (std::size_t i = 0; i < kMinMaxScaled.size(); ++i)
        EXPECT_NEAR(out(static_cast<Eigen::Index>(i), 0), kMinMaxScaled[i], kTwoDecimalTolerance) << i;
}

TEST(Normalizer, StandardizationFitUsesPopulationMoments) {
    // Independent two-line oracle: plain mean and population variance.
    double sum = 0.0;
    for (double x : kScalingColumn) sum += x;
    const double mean = sum / 10.0;
    double ss = 0.0;
    for (double x : kScalingColumn) ss += (x - mean) * (x - mean);
    const double sigma = std::sqrt(ss / 10.0);
    ASSERT_NEAR(mean, 16.8, 1e-12);
    ASSERT_NEAR(sigma, 7.068238818828917, 1e-12);

    const auto stats = fit_normalizer(column(kScalingColumn), NormMethod::Standardization);
    EXPECT_NEAR(stats.mean(0), mean, 1e-12);
    EXPECT_NEAR(stats.stddev(0), sigma, 1e-12);
}

TEST(Normalizer, StandardizationApplyWithPublishedStatistics) {
    NormStats stats;
    stats.method = NormMethod::Standardization;
    stats.min = stats.max = RowVector::Zero(1);
    stats.mean = RowVector::Constant(1, kPublishedMean);
    stats.stddev = RowVector::Constant(1, kPublishedStd);
    const Matrix out = apply_normalizer(column(kScalingColumn), stats);
    for (std::size_t i = 0; i < kStandardized.size(); ++i)
        EXPECT_NEAR(out(static_cast<Eigen::Index>(i), 0), kStandardized[i], kTwoDecimalTolerance) << i;
}

TEST(Normalizer, StandardizedFitDataHasUnitMoments) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(3.0, 5.0);
    Matrix data(500, 4);
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = g(rng);
    const Matrix out = apply_normalizer(data, fit_normalizer(data, NormMethod::Standardization));
    for (Eigen::Index f = 0; f < 4; ++f) {
        const double m = out.col(f).mean();
        const double v = (out.col(f).array() - m).square().mean();
        EXPECT_NEAR(m, 0.0, 1e-9);
        EXPECT_NEAR(v, 1.0, 1e-9);
    }
}

TEST(Normalizer, MinMaxRangeAndNoClamping) {
    Matrix train(3, 1);
    train << 1, 2, 3;
    const auto stats = fit_normalizer(train, NormMethod::MinMax);
    const Matrix in = apply_normalizer(train, stats);
    EXPECT_GE(in.minCoeff(), 0.0);
    EXPECT_LE(in.maxCoeff(), 1.0);
    Matrix outside(2, 1);
    outside << 0, 5;
    const Matrix o = apply_normalizer(outside, stats);
    EXPECT_DOUBLE_EQ(o(0, 0), -0.5);
    EXPECT_DOUBLE_EQ(o(1, 0), 2.0);
}

TEST(Normalizer, ConstantFeatureMapsToZero) {
    Matrix c = Matrix::Constant(3, 1, 3.0);
    const auto mm = fit_normalizer(c, NormMethod::MinMax);
    EXPECT_DOUBLE_EQ(mm.min(0), 3.0);
    EXPECT_DOUBLE_EQ(mm.max(0), 3.0);
    EXPECT_TRUE(apply_normalizer(c, mm).isZero());
    EXPECT_TRUE(apply_normalizer(c, fit_normalizer(c, NormMethod::Standardization)).isZero());
}

TEST(Normalizer, LayoutMismatch) {
    const auto stats = fit_normalizer(Matrix::Ones(2, 3), NormMethod::MinMax);
    EXPECT_EQ(kind_of([&] { apply_normalizer(Matrix::Ones(2, 4), stats); }), ErrorKind::LayoutMismatch);
}

TEST(Normalizer, WindowFitEqualsSeriesFit) {
    std::vector<FeatureWindow> ws(3);
    Matrix all(9, 2);
    for (int k = 0; k < 3; ++k) {
        ws[static_cast<std::size_t>(k)].values = Matrix::Random(3, 2);
        all.middleRows(3 * k, 3) = ws[static_cast<std::size_t>(k)].values;
    }
    const auto a = fit_normalizer(std::span<const FeatureWindow>(ws), NormMethod::Standardization);
    const auto b = fit_normalizer(all, NormMethod::Standardization);
    EXPECT_TRUE(a.mean.isApprox(b.mean, 1e-14));
    EXPECT_TRUE(a.stddev.isApprox(b.stddev, 1e-14));
    EXPECT_EQ(a.min, b.min);
    EXPECT_EQ(a.max, b.max);
}

TEST(Windows, CountExamples) {
    const Matrix s = Matrix::Random(6, 2);
    const auto w = make_windows(s, 0, 3, 1);
    ASSERT_EQ(w.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(w[i].start_index, i);
    EXPECT_EQ(make_windows(Matrix::Zero(120, 8), 1, 120, 1).size(), 1u);
}

TEST(Windows, ShortSeriesCounted) {
    std::size_t short_count = 0;
    EXPECT_TRUE(make_windows(Matrix::Zero(5, 1), 0, 6, 1, {}, &short_count).empty());
    EXPECT_EQ(short_count, 1u);
}

TEST(Windows, MatchesBruteForceSlicing) {
    for (int T = 1; T <= 20; ++T) {
        Matrix s(T, 3);
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<double>(i) * 0.5 - 7.0;
        for (int W = 1; W <= T; ++W) {
            for (int S = 1; S <= 5; ++S) {
                std::vector<std::pair<int, Matrix>> oracle;
                for (int start = 0; start < T; ++start) {
                    if (start % S != 0 || start + W > T) continue;
                    Matrix m(W, 3);
                    for (int r = 0; r < W; ++r)
                        for (int c = 0; c < 3; ++c) m(r, c) = s(start + r, c);
                    oracle.emplace_back(start, m);
                }
                const auto got = make_windows(s, 1, W, S, {DriverId::D2, 7});
                ASSERT_EQ(got.size(), oracle.size()) << "T=" << T << " W=" << W << " S=" << S;
                for (std::size_t k = 0; k < got.size(); ++k) {
                    EXPECT_EQ(got[k].start_index, static_cast<std::size_t>(oracle[k].first));
                    EXPECT_EQ(got[k].values, oracle[k].second);
                    EXPECT_EQ(got[k].label, 1);
                    EXPECT_EQ(got[k].driver, DriverId::D2);
                    EXPECT_EQ(got[k].trajectory_id, 7u);
                }
            }
        }
    }
}

TEST(BuildWindows, DrowsyPolicy) {
    const auto data = generate_synthetic_dataset(1, 1, 1, 30);
    FeatureOptions opt;
    opt.window_length = 10;
    opt.stride = 10;
    const auto all = build_windows(data, opt);
    EXPECT_EQ(all.windows.size(), 9u);
    opt.drowsy = DrowsyPolicy::Exclude;
    const auto no_drowsy = build_windows(data, opt);
    EXPECT_EQ(no_drowsy.windows.size(), 6u);
    const auto [neg, pos] = class_counts(no_drowsy.windows);
    EXPECT_EQ(neg, 3u);
    EXPECT_EQ(pos, 3u);
}

TEST(SplitSeen, Sizes) {
    auto b = split_seen(labelled_windows(100, 30), 1);
    EXPECT_EQ(b.train.size(), 70u);
    EXPECT_EQ(b.validation.size(), 15u);
    EXPECT_EQ(b.test.size(), 15u);
    b = split_seen(labelled_windows(10, 3), 1);
    EXPECT_EQ(b.train.size(), 7u);
    EXPECT_EQ(b.validation.size(), 1u);
    EXPECT_EQ(b.test.size(), 2u);
}

TEST(SplitSeen, DisjointAndComplete) {
    const auto ws = labelled_windows(257, 40);
    const auto b = split_seen(ws, 5);
    const auto tr = keys(b.train), va = keys(b.validation), te = keys(b.test);
    EXPECT_EQ(tr.size() + va.size() + te.size(), ws.size());
    std::set<std::pair<std::size_t, std::size_t>> all;
    all.insert(tr.begin(), tr.end());
    all.insert(va.begin(), va.end());
    all.insert(te.begin(), te.end());
    EXPECT_EQ(all, keys(ws));
    EXPECT_TRUE(fingerprint(b).disjoint);
}

TEST(SplitSeen, Deterministic) {
    const auto ws = labelled_windows(50, 10);
    EXPECT_EQ(keys(split_seen(ws, 3).train), keys(split_seen(ws, 3).train));
    EXPECT_NE(labels_of(split_seen(ws, 3).train), labels_of(split_seen(ws, 4).train));
}

TEST(SplitSeen, TooFewWindows) {
    EXPECT_EQ(kind_of([] { split_seen(labelled_windows(2, 1), 1); }), ErrorKind::TooFewWindows);
}

TEST(SplitSeen, TrajectoryGuardKeepsTrajectoriesWhole) {
    std::vector<FeatureWindow> ws;
    for (std::size_t t = 0; t < 10; ++t) {
        auto part = labelled_windows(10, t % 3 == 0 ? 10 : 0, DriverId::D1, t);
        ws.insert(ws.end(), part.begin(), part.end());
    }
    const auto b = split_seen(ws, 2, SplitGuard::Trajectory);
    auto trajs = [](const std::vector<FeatureWindow>& v) {
        std::set<std::size_t> s;
        for (const auto& w : v) s.insert(w.trajectory_id);
        return s;
    };
    const auto a = trajs(b.train), v = trajs(b.validation), t = trajs(b.test);
    for (auto id : a) EXPECT_FALSE(v.count(id) || t.count(id));
    for (auto id : v) EXPECT_FALSE(t.count(id));
    EXPECT_EQ(b.train.size() + b.validation.size() + b.test.size(), ws.size());
}

TEST(SplitUnseen, SizesAndExclusion) {
    std::vector<FeatureWindow> ws;
    for (int d : {1, 2, 3, 4, 6}) {
        auto part = labelled_windows(100, 20, driver_from_index(d), static_cast<std::size_t>(d));
        ws.insert(ws.end(), part.begin(), part.end());
    }
    auto d5 = labelled_windows(100, 20, DriverId::D5, 5);
    ws.insert(ws.end(), d5.begin(), d5.end());
    const auto b = split_unseen(ws, DriverId::D5, 1);
    EXPECT_EQ(b.train.size(), 400u);
    EXPECT_EQ(b.validation.size(), 100u);
    EXPECT_EQ(b.test.size(), 100u);
    for (const auto* split : {&b.train, &b.validation})
        for (const auto& w : *split) EXPECT_NE(w.driver, DriverId::D5);
    for (const auto& w : b.test) EXPECT_EQ(w.driver, DriverId::D5);
    const auto fp = fingerprint(b);
    EXPECT_EQ(fp.held_out_in_train_or_validation, 0u);
    EXPECT_TRUE(fp.test_only_held_out);
    EXPECT_TRUE(fp.disjoint);
}

TEST(SplitUnseen, MissingDriver) {
    EXPECT_EQ(kind_of([] { split_unseen(labelled_windows(10, 2, DriverId::D1), DriverId::D5, 1); }),
              ErrorKind::MissingDriver);
    EXPECT_EQ(kind_of([] { split_unseen(labelled_windows(10, 2, DriverId::D5), DriverId::D5, 1); }),
              ErrorKind::MissingDriver);
}

TEST(Oversample, EqualizesCounts) {
    const auto out = oversample_minority(labelled_windows(100, 10), 1);
    const auto [neg, pos] = class_counts(out);
    EXPECT_EQ(neg, 90u);
    EXPECT_EQ(pos, 90u);
}

TEST(Oversample, BalancedIsFixedPoint) {
    const auto out = oversample_minority(labelled_windows(20, 10), 1);
    EXPECT_EQ(out.size(), 20u);
}

TEST(Oversample, DeterministicMultiset) {
    const auto ws = labelled_windows(50, 7);
    const auto a = oversample_minority(ws, 9), b = oversample_minority(ws, 9);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].start_index, b[i].start_index);
}

TEST(Oversample, SingleClass) {
    EXPECT_EQ(kind_of([] { oversample_minority(labelled_windows(10, 0), 1); }), ErrorKind::SingleClass);
}

TEST(ClassWeights, Values) {
    std::vector<int> balanced(1000, 0);
    std::fill(balanced.begin(), balanced.begin() + 500, 1);
    const auto w = class_weights(balanced);
    EXPECT_DOUBLE_EQ(w.negative, 1.0);
    EXPECT_DOUBLE_EQ(w.positive, 1.0);

    std::vector<int> skewed(1000, 0);
    std::fill(skewed.begin(), skewed.begin() + 100, 1);
    const auto s = class_weights(skewed);
    EXPECT_NEAR(s.negative, 0.5556, 5e-5);
    EXPECT_NEAR(s.positive, 5.0, 1e-12);
    EXPECT_NEAR(s.negative * 900 + s.positive * 100, 1000.0, 1e-9);
}

TEST(ClassWeights, SingleClass) {
    std::vector<int> ones(5, 1);
    EXPECT_EQ(kind_of([&] { class_weights(ones); }), ErrorKind::SingleClass);
}

TEST(WindowFile, RoundTrip) {
    TempDir dir;
    auto ws = labelled_windows(4, 2, DriverId::D3, 11);
    for (auto& w : ws) w.values = Matrix::Random(5, 3);
    save_windows(dir / "w.txt", ws);
    const auto back = load_windows(dir / "w.txt");
    ASSERT_EQ(back.size(), ws.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
        EXPECT_EQ(back[i].values, ws[i].values);
        EXPECT_EQ(back[i].label, ws[i].label);
        EXPECT_EQ(back[i].driver, ws[i].driver);
        EXPECT_EQ(back[i].trajectory_id, ws[i].trajectory_id);
        EXPECT_EQ(back[i].start_index, ws[i].start_index);
    }
}

TEST(WindowFile, RejectsOtherFiles) {
    TempDir dir;
    write_text(dir / "bad.txt", "hello\n");
    EXPECT_EQ(kind_of([&] { load_windows(dir / "bad.txt"); }), ErrorKind::IoFailure);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "drivenet/metrics.hpp"
#include "reference_grid.hpp"

using namespace drivenet;

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

} // namespace

TEST(Confusion, DirectTally) {
    const std::vector<double> p{0.9, 0.2, 0.7, 0.4};
    const std::vector<int> y{1, 0, 0, 1};
    EXPECT_EQ(confusion_counts(p, y), (ConfusionCounts{1, 1, 1, 1}));
}

TEST(Confusion, AllCorrect) {
    const std::vector<double> p{0.99, 0.01, 0.8};
    const std::vector<int> y{1, 0, 1};
    const auto c = confusion_counts(p, y);
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
}

TEST(Confusion, TieIsPositive) {
    const std::vector<double> p{0.5};
    const std::vector<int> y{1};
    EXPECT_EQ(confusion_counts(p, y).tp, 1u);
}

TEST(Confusion, Errors) {
    const std::vector<double> p{0.5, 0.2};
    const std::vector<int> y{1};
    EXPECT_EQ(kind_of([&] { confusion_counts(p, y); }), ErrorKind::LengthMismatch);
    const std::vector<int> y2{1, 0};
    EXPECT_EQ(kind_of([&] { confusion_counts(p, y2, 1.0); }), ErrorKind::InvalidArgument);
}

TEST(Report, FormulaAndZeroDenominators) {
    const auto r = metrics_report({3, 1, 5, 1}, 0.25);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.8);
    EXPECT_DOUBLE_EQ(r.precision, 0.75);
    EXPECT_DOUBLE_EQ(r.recall, 0.75);
    EXPECT_DOUBLE_EQ(r.f1, 0.75);
    EXPECT_DOUBLE_EQ(r.loss, 0.25);

    const auto none_predicted = metrics_report({0, 0, 5, 3}, 0.0);
    EXPECT_EQ(none_predicted.precision, 0.0);
    EXPECT_EQ(none_predicted.recall, 0.0);
    EXPECT_EQ(none_predicted.f1, 0.0);

    const auto perfect = metrics_report({4, 0, 4, 0}, 0.0);
    EXPECT_EQ(perfect.f1, 1.0);
    EXPECT_EQ(kind_of([] { metrics_report({}, 0.0); }), ErrorKind::EmptyEvaluation);
}

TEST(F1, PublishedExamples) {
    EXPECT_NEAR(f1_score(0.994, 0.997), 0.99549774, 1e-6);
    EXPECT_NEAR(f1_score(0.81, 0.877), 0.842169532, 1e-6);
    EXPECT_NEAR(f1_score(0.588, 0.991), 0.738072198, 1e-6);
    EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(F1, ReferenceGridConsistent) {
    for (const auto& r : drivenet::testing::kReferenceGrid)
        EXPECT_NEAR(f1_score(r.precision, r.recall), r.f1, 1e-6) << r.cell << ' ' << r.window << ' '
                                                                  << r.normalization << ' ' << r.protocol;
}

TEST(Report, BoundsAndPermutationInvariance) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(u(rng) * 40);
        std::vector<double> p(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = u(rng);
            y[i] = u(rng) < 0.3 ? 1 : 0;
        }
        const auto r = metrics_report(confusion_counts(p, y), 0.0);
        for (double m : {r.accuracy, r.precision, r.recall, r.f1}) {
            EXPECT_GE(m, 0.0);
            EXPECT_LE(m, 1.0);
        }
        EXPECT_LE(r.f1, std::max(r.precision, r.recall) + 1e-15);
        EXPECT_LE(r.f1, 2.0 * std::min(r.precision, r.recall) + 1e-15);

        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> p2(n);
        std::vector<int> y2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p2[i] = p[idx[i]];
            y2[i] = y[idx[i]];
        }
        EXPECT_EQ(confusion_counts(p2, y2), confusion_counts(p, y));
    }
}

TEST(Confusion, ShardsSum) {
    const std::vector<double> p{0.9, 0.2, 0.7, 0.4, 0.6};
    const std::vector<int> y{1, 0, 0, 1, 1};
    auto a = confusion_counts(std::span(p).first(2), std::span(y).first(2));
    a += confusion_counts(std::span(p).subspan(2), std::span(y).subspan(2));
    EXPECT_EQ(a, confusion_counts(p, y));
}

TEST(Format, FixedColumns) {
    MetricsReport r{0.0124, 0.996, 0.994, 0.997, 0.99549774};
    EXPECT_EQ(format_metric_columns(r), "0.0124,0.996000,0.994000,0.997000,0.995497740");
}

#pragma once

// Published results of the 24-cell grid (cell, window, normalization,
// protocol, loss, accuracy, precision, recall, F1), transcribed as printed.

#include <array>
#include <string_view>

namespace drivenet::testing {

struct ReferenceRow {
    std::string_view cell;
    int window;
    std::string_view normalization;
    std::string_view protocol;
    double loss, accuracy, precision, recall, f1;
};

inline constexpr std::array<ReferenceRow, 24> kReferenceGrid{{
    {"GRU", 60, "Min-Max", "Seen", 0.5617, 0.776, 0.687, 0.822, 0.748461233},
    {"GRU", 60, "Standardization", "Seen", 0.4212, 0.822, 0.775, 0.789, 0.78193734},
    {"GRU", 120, "Min-Max", "Seen", 1.0759, 0.781, 0.736, 0.714, 0.724833103},
    {"GRU", 120, "Standardization", "Seen", 0.379, 0.867, 0.81, 0.877, 0.842169532},
    {"GRU", 180, "Min-Max", "Seen", 0.8107, 0.736, 0.689, 0.629, 0.657634294},
    {"GRU", 180, "Standardization", "Seen", 0.4329, 0.878, 0.843, 0.857, 0.849942353},
    {"GRU", 60, "Min-Max", "Unseen", 0.2487, 0.896, 0.805, 0.711, 0.755085752},
    {"GRU", 60, "Standardization", "Unseen", 0.3219, 0.846, 0.619, 0.83, 0.709137336},
    {"GRU", 120, "Min-Max", "Unseen", 0.5059, 0.801, 0.533, 0.802, 0.640398502},
    {"GRU", 120, "Standardization", "Unseen", 0.3903, 0.87, 0.643, 0.927, 0.759313376},
    {"GRU", 180, "Min-Max", "Unseen", 0.4403, 0.828, 0.58, 0.789, 0.668546384},
    {"GRU", 180, "Standardization", "Unseen", 0.2088, 0.845, 0.588, 0.991, 0.738072198},
    {"LSTM", 60, "Min-Max", "Seen", 0.3348, 0.822, 0.762, 0.816, 0.788076046},
    {"LSTM", 60, "Standardization", "Seen", 0.2913, 0.858, 0.821, 0.829, 0.824980606},
    {"LSTM", 120, "Min-Max", "Seen", 0.2997, 0.923, 0.963, 0.841, 0.897874723},
    {"LSTM", 120, "Standardization", "Seen", 0.0544, 0.984, 0.973, 0.987, 0.97995},
    {"LSTM", 180, "Min-Max", "Seen", 0.0602, 0.981, 0.974, 0.98, 0.976990788},
    {"LSTM", 180, "Standardization", "Seen", 0.0124, 0.996, 0.994, 0.997, 0.99549774},
    {"LSTM", 60, "Min-Max", "Unseen", 0.4245, 0.837, 0.632, 0.664, 0.647604938},
    {"LSTM", 60, "Standardization", "Unseen", 0.3991, 0.832, 0.619, 0.675, 0.645788253},
    {"LSTM", 120, "Min-Max", "Unseen", 0.7365, 0.86, 0.667, 0.727, 0.695708752},
    {"LSTM", 120, "Standardization", "Unseen", 0.5766, 0.893, 0.764, 0.746, 0.754892715},
    {"LSTM", 180, "Min-Max", "Unseen", 0.4201, 0.903, 0.771, 0.778, 0.774484183},
    {"LSTM", 180, "Standardization", "Unseen", 0.4131, 0.93, 0.855, 0.809, 0.831364183},
}};

// Ten-value column with its published min-max and standardized versions.
inline constexpr std::array<double, 10> kScalingColumn{10, 16, 19, 25, 21, 17, 10, 5, 15, 30};
inline constexpr std::array<double, 10> kMinMaxScaled{0.20, 0.44, 0.56, 0.80, 0.64, 0.48, 0.20, 0.00, 0.40, 1.00};
inline constexpr std::array<double, 10> kStandardized{-0.87, -0.07, 0.34, 1.14, 0.60, 0.07, -0.87, -1.54, -0.20, 1.81};
inline constexpr double kPublishedMean = 16.50;
inline constexpr double kPublishedStd = 7.45;
inline constexpr double kTwoDecimalTolerance = 0.005;

} // namespace drivenet::testing

#pragma once

#include <cstddef>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>

#include "drivenet/error.hpp"

namespace drivenet {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }

    bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
    double loss = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Predicts positive when p >= threshold.
inline ConfusionCounts confusion_counts(std::span<const double> probabilities, std::span<const int> labels,
                                        double threshold = 0.5) {
    require(probabilities.size() == labels.size(), ErrorKind::LengthMismatch,
            "probabilities and labels differ in length");
    require(threshold > 0.0 && threshold < 1.0, ErrorKind::InvalidArgument, "threshold must be in (0,1)");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = probabilities[i] >= threshold;
        const bool actual = labels[i] == 1;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) {
    const double denom = precision + recall;
    return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

inline MetricsReport metrics_report(const ConfusionCounts& c, double mean_loss) {
    require(c.total() > 0, ErrorKind::EmptyEvaluation, "no samples evaluated");
    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    MetricsReport r;
    r.loss = mean_loss;
    r.accuracy = ratio(c.tp + c.tn, c.total());
    r.precision = ratio(c.tp, c.tp + c.fp);
    r.recall = ratio(c.tp, c.tp + c.fn);
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

inline std::string format_report(const MetricsReport& r, const ConfusionCounts* counts = nullptr) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "loss " << r.loss << "  accuracy " << r.accuracy << "  precision "
       << r.precision << "  recall " << r.recall << "  F1 " << r.f1;
    if (counts) os << "  (tp " << counts->tp << ", fp " << counts->fp << ", tn " << counts->tn << ", fn " << counts->fn << ')';
    return os.str();
}

/// The five metric columns of a grid row, fixed-precision so output is byte-stable.
inline std::string format_metric_columns(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << r.loss << ',' << std::setprecision(6) << r.accuracy << ','
       << r.precision << ',' << r.recall << ',' << std::setprecision(9) << r.f1;
    return os.str();
}

} // namespace drivenet

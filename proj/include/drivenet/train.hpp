#pragma once

// Weighted binary cross-entropy training with Adam or momentum SGD, early
// stopping on validation loss, and a finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drivenet/error.hpp"
#include "drivenet/features.hpp"
#include "drivenet/metrics.hpp"
#include "drivenet/rnn.hpp"

namespace drivenet {

inline constexpr double kProbabilityFloor = 1e-12;

/// -w_y [y ln p + (1-y) ln(1-p)], with p clamped to [1e-12, 1-1e-12].
inline double weighted_bce(double p, int y, const ClassWeights& w) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::DomainError, "probability outside [0,1]: " + std::to_string(p));
    p = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
    return -w.of(y) * (y == 1 ? std::log(p) : std::log1p(-p));
}

inline double weighted_bce_mean(std::span<const double> p, std::span<const int> y, const ClassWeights& w) {
    require(p.size() == y.size(), ErrorKind::LengthMismatch, "probabilities and labels differ in length");
    require(!p.empty(), ErrorKind::EmptyEvaluation, "no samples");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += weighted_bce(p[i], y[i], w);
    return sum / static_cast<double>(p.size());
}

/// Mean weighted BCE computed from logits, and its gradient w.r.t. each logit.
/// Same loss as weighted_bce on sigmoid(logit), without saturation.
struct LogitLoss {
    double loss = 0.0;
    Vector d_logits;
};

inline LogitLoss weighted_bce_from_logits(const Vector& logits, std::span<const int> labels, const ClassWeights& w) {
    require(static_cast<std::size_t>(logits.size()) == labels.size(), ErrorKind::LengthMismatch,
            "logits and labels differ in length");
    const double n = static_cast<double>(labels.size());
    LogitLoss out;
    out.d_logits.resize(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double z = logits(i);
        const int y = labels[static_cast<std::size_t>(i)];
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        out.loss += w.of(y) * (softplus - (y == 1 ? z : 0.0));
        out.d_logits(i) = w.of(y) * (sigmoid(z) - static_cast<double>(y)) / n;
    }
    out.loss /= n;
    return out;
}

enum class OptimizerKind { Adam, SGD };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double sgd_momentum = 0.0;
    std::optional<ClassWeights> class_weights; // derived from training labels when unset
    bool use_oversampling = true;
    bool oversample_validation = false;
    int early_stop_patience = 10; // 0 disables early stopping
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
    require(c.epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
    require(c.batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
    require(c.learning_rate > 0.0, ErrorKind::InvalidArgument, "learning_rate must be positive");
    require(c.early_stop_patience >= 0, ErrorKind::InvalidArgument, "patience must be >= 0");
}

/// Moments (Adam) or velocity (SGD) per tensor plus the step counter.
struct OptimizerState {
    std::vector<Matrix> first;
    std::vector<Matrix> second;
    long step = 0;
};

inline OptimizerState make_optimizer_state(std::span<const Matrix* const> params) {
    OptimizerState s;
    for (const auto* p : params) {
        s.first.push_back(Matrix::Zero(p->rows(), p->cols()));
        s.second.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
    return s;
}

/// One update of every tensor. Adam uses bias-corrected moments:
/// p -= lr * m_hat / (sqrt(v_hat) + eps). SGD: v = mu v - lr g; p += v.
inline void optimizer_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                           OptimizerState& state, const TrainConfig& cfg) {
    require(params.size() == grads.size() && params.size() == state.first.size(), ErrorKind::ShapeMismatch,
            "parameter, gradient and optimizer tensor counts differ");
    ++state.step;
    const double lr = cfg.learning_rate;
    const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        const Matrix& g = *grads[k];
        require(p.rows() == g.rows() && p.cols() == g.cols(), ErrorKind::ShapeMismatch,
                "gradient shape differs from parameter shape");
        if (cfg.optimizer == OptimizerKind::Adam) {
            Matrix& m = state.first[k];
            Matrix& v = state.second[k];
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
            p.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + cfg.adam_epsilon);
        } else {
            Matrix& vel = state.first[k];
            vel = cfg.sgd_momentum * vel - lr * g;
            p += vel;
        }
    }
}

inline void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                           const TrainConfig& cfg) {
    auto p = params.trainable();
    auto g = grads.trainable();
    optimizer_step(std::span<Matrix* const>(p), std::span<const Matrix* const>(g), state, cfg);
}

struct Evaluation {
    MetricsReport report;
    ConfusionCounts counts;
    std::vector<double> probabilities;
};

/// Eval-mode pass over `windows` in fixed-size batches.
inline Evaluation evaluate(const ModelParams& params, const ModelConfig& config,
                           std::span<const FeatureWindow> windows, const ClassWeights& weights,
                           int batch_size = 256) {
    require(!windows.empty(), ErrorKind::EmptyEvaluation, "nothing to evaluate");
    Evaluation e;
    e.probabilities.reserve(windows.size());
    double loss_sum = 0.0;
    const auto labels = labels_of(windows);
    for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), windows.size() - start);
        const auto chunk = windows.subspan(start, n);
        const auto trace = model_forward(pack_batch(chunk), params, config, Mode::Eval);
        const auto ll = weighted_bce_from_logits(trace.logits, std::span(labels).subspan(start, n), weights);
        loss_sum += ll.loss * static_cast<double>(n);
        for (Eigen::Index i = 0; i < trace.probabilities.size(); ++i) e.probabilities.push_back(trace.probabilities(i));
    }
    e.counts = confusion_counts(e.probabilities, labels);
    e.report = metrics_report(e.counts, loss_sum / static_cast<double>(windows.size()));
    return e;
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double val_f1 = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    bool stopped_early = false;
};

inline void write_history_csv(std::ostream& os, const TrainHistory& h) {
    os << "epoch,train_loss,val_loss,val_acc,val_f1\n";
    os << std::fixed << std::setprecision(10);
    for (const auto& r : h.epochs)
        os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy << ',' << r.val_f1 << '\n';
}

struct TrainResult {
    ModelParams params;
    TrainHistory history;
    ClassWeights weights;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full training loop. Deterministic for fixed seeds. With patience > 0 the
/// returned params are those of the epoch with the lowest validation loss.
inline TrainResult train_model(const SplitBundle& bundle, const ModelConfig& model, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {}) {
    validate(model);
    validate(cfg);
    require(!bundle.train.empty(), ErrorKind::EmptySplit, "training split is empty");
    require(!bundle.validation.empty(), ErrorKind::EmptySplit, "validation split is empty");
    require(bundle.train.front().values.cols() == model.input_features, ErrorKind::ShapeMismatch,
            "windows carry " + std::to_string(bundle.train.front().values.cols()) + " features, model expects " +
                std::to_string(model.input_features));

    const std::vector<FeatureWindow> train =
        cfg.use_oversampling ? oversample_minority(bundle.train, cfg.seed ^ 0x9e3779b97f4a7c15ULL) : bundle.train;
    const std::vector<FeatureWindow> validation =
        cfg.oversample_validation ? oversample_minority(bundle.validation, cfg.seed ^ 0x7f4a7c159e3779b9ULL)
                                  : bundle.validation;
    const auto train_labels = labels_of(train);
    const ClassWeights weights = cfg.class_weights ? *cfg.class_weights : class_weights(train_labels);
    const auto [neg, pos] = class_counts(train);

    TrainResult result;
    result.weights = weights;
    result.params = init_params(model, cfg.seed, std::max<std::size_t>(pos, 1), std::max<std::size_t>(neg, 1));
    auto state = make_optimizer_state(std::span<const Matrix* const>(result.params.trainable()));

    Rng rng(cfg.seed + 1);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    ModelParams best = result.params;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t n = std::min(bs, order.size() - start);
            if (model.batchnorm && n * static_cast<std::size_t>(model.window_length) < 2) continue;
            std::vector<const FeatureWindow*> chunk;
            std::vector<int> labels;
            for (std::size_t k = start; k < start + n; ++k) {
                chunk.push_back(&train[order[k]]);
                labels.push_back(train[order[k]].label);
            }
            const auto trace = model_forward(pack_batch(std::span<const FeatureWindow* const>(chunk)), result.params,
                                             model, Mode::Train, &rng);
            const auto ll = weighted_bce_from_logits(trace.logits, labels, weights);
            if (!std::isfinite(ll.loss))
                throw Error(ErrorKind::NonFiniteLoss, "training loss became non-finite at epoch " +
                                                          std::to_string(epoch) + ", batch starting at " +
                                                          std::to_string(start));
            const auto grads = model_backward(trace, result.params, model, ll.d_logits);
            optimizer_step(result.params, grads, state, cfg);
            update_running_stats(result.params, trace);
            loss_sum += ll.loss * static_cast<double>(n);
            seen += n;
        }

        const auto val = evaluate(result.params, model, validation, weights);
        require(std::isfinite(val.report.loss), ErrorKind::NonFiniteLoss,
                "validation loss became non-finite at epoch " + std::to_string(epoch));
        EpochRecord rec{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, val.report.loss,
                        val.report.accuracy, val.report.f1};
        result.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (val.report.loss < best_loss) {
            best_loss = val.report.loss;
            result.history.best_epoch = epoch;
            since_best = 0;
            if (cfg.early_stop_patience > 0) best = result.params;
        } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
            result.history.stopped_early = true;
            break;
        }
    }
    if (cfg.early_stop_patience > 0) result.params = std::move(best);
    return result;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t parameters_checked = 0;
    std::size_t worst_tensor = 0;
    Eigen::Index worst_index = 0;
};

/// Compares every analytic gradient entry against central differences
/// (step 1e-5) on a random model and batch. Relative error per entry is
/// |a - n| / max(|a|, |n|, 1e-8). Dropout masks are frozen by reseeding the
/// RNG for every evaluation.
inline GradCheckResult gradient_check(const ModelConfig& config, std::uint64_t seed, int batch_size = 4,
                                      Mode mode = Mode::Train) {
    validate(config);
    require(config.num_layers <= 3 && config.hidden_size <= 8 && config.window_length <= 10 && batch_size >= 1 &&
                batch_size <= 4,
            ErrorKind::InvalidArgument, "gradient check is limited to <=3 layers, hidden <=8, W <=10, batch <=4");
    constexpr double kStep = 1e-5;

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelParams params = init_params(config, seed, 1, 1);
    for (auto& layer : params.layers)
        for (auto& b : layer.biases) b = b.unaryExpr([&](double v) { return v + 0.1 * gauss(rng); });
    for (auto& n : params.norms) {
        n.gamma = n.gamma.unaryExpr([&](double) { return 1.0 + 0.3 * gauss(rng); });
        n.beta = n.beta.unaryExpr([&](double) { return 0.3 * gauss(rng); });
        n.running_mean = n.running_mean.unaryExpr([&](double) { return 0.2 * gauss(rng); });
        n.running_var = n.running_var.unaryExpr([&](double) { return 0.5 + std::abs(gauss(rng)); });
    }
    params.head_bias(0, 0) = 0.1 * gauss(rng);

    Batch batch;
    batch.size = batch_size;
    batch.steps = config.window_length;
    batch.inputs = Matrix(batch.size * batch.steps, config.input_features).unaryExpr([&](double) { return gauss(rng); });
    std::vector<int> labels(static_cast<std::size_t>(batch_size));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    const ClassWeights weights{1.0, 2.0};
    const std::uint64_t mask_seed = seed ^ 0xabcdef12345ULL;

    auto loss_at = [&](const ModelParams& p) {
        Rng mask_rng(mask_seed);
        const auto trace = model_forward(batch, p, config, mode, &mask_rng);
        return weighted_bce_from_logits(trace.logits, labels, weights).loss;
    };

    Rng mask_rng(mask_seed);
    const auto trace = model_forward(batch, params, config, mode, &mask_rng);
    const auto grads = model_backward(trace, params, config, weighted_bce_from_logits(trace.logits, labels, weights).d_logits);

    GradCheckResult res;
    auto tensors = params.trainable();
    auto grad_tensors = grads.trainable();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Matrix& t = *tensors[k];
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + kStep;
            const double up = loss_at(params);
            t.data()[i] = saved - kStep;
            const double down = loss_at(params);
            t.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * kStep);
            const double analytic = grad_tensors[k]->data()[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            ++res.parameters_checked;
            if (rel > res.max_relative_error) {
                res.max_relative_error = rel;
                res.worst_tensor = k;
                res.worst_index = i;
            }
        }
    }
    return res;
}

} // namespace drivenet

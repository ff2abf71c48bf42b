#pragma once

// Stacked recurrent binary classifier built from scratch.
//
// Sequences are stored time-major as one (steps * batch) x channels matrix:
// rows [t * batch, (t + 1) * batch) hold timestep t. Each recurrent layer is
// followed by dropout and then batch normalization over all (batch, time)
// rows of a channel. The head is a dense sigmoid unit on the last timestep
// (or the time mean) of the final layer.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drivenet/error.hpp"
#include "drivenet/features.hpp"

namespace drivenet {

using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class CellKind { GRU, LSTM };
enum class Mode { Train, Eval };
enum class Pooling { LastStep, Mean };

inline std::string_view to_string(CellKind k) { return k == CellKind::GRU ? "GRU" : "LSTM"; }

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct ModelConfig {
    CellKind cell = CellKind::LSTM;
    int num_layers = 7;
    int hidden_size = 32;
    double dropout = 0.7;
    bool batchnorm = true;
    int input_features = kBaseFeatures;
    int window_length = 120;
    Pooling pooling = Pooling::LastStep;
    /// Overrides the class-count initializer of the head bias when set.
    std::optional<double> output_bias_init;

    bool operator==(const ModelConfig&) const = default;
};

/// 2 x 32, the configuration used for tests and laptop runs.
inline ModelConfig desk_preset() {
    ModelConfig c;
    c.num_layers = 2;
    c.hidden_size = 32;
    return c;
}

/// Seven recurrent layers of 360 units with 70% dropout.
inline ModelConfig paper_large_preset() {
    ModelConfig c;
    c.num_layers = 7;
    c.hidden_size = 360;
    c.dropout = 0.7;
    return c;
}

inline void validate(const ModelConfig& c) {
    require(c.num_layers >= 1, ErrorKind::InvalidArgument, "num_layers must be >= 1");
    require(c.hidden_size >= 1, ErrorKind::InvalidArgument, "hidden_size must be >= 1");
    require(c.dropout >= 0.0 && c.dropout < 1.0, ErrorKind::InvalidArgument, "dropout must be in [0,1)");
    require(c.input_features >= 1, ErrorKind::InvalidArgument, "input_features must be >= 1");
    require(c.window_length >= 1, ErrorKind::InvalidArgument, "window_length must be >= 1");
}

inline int gate_count(CellKind k) { return k == CellKind::GRU ? 3 : 4; }

// GRU gate order: update, reset, candidate.
// LSTM gate order: forget, input, output, candidate.
enum GruGate : int { kUpdate = 0, kReset = 1, kGruCandidate = 2 };
enum LstmGate : int { kForget = 0, kInput = 1, kOutput = 2, kLstmCandidate = 3 };

struct RecurrentLayer {
    std::vector<Matrix> input_weights;     // in x hidden, per gate
    std::vector<Matrix> recurrent_weights; // hidden x hidden, per gate
    std::vector<Matrix> biases;            // 1 x hidden, per gate

    Eigen::Index input_size() const { return input_weights.front().rows(); }
    Eigen::Index hidden_size() const { return input_weights.front().cols(); }
};

struct BatchNormStage {
    Matrix gamma, beta;              // 1 x channels, trainable
    Matrix running_mean, running_var; // 1 x channels
};

struct ModelParams {
    std::vector<RecurrentLayer> layers;
    std::vector<BatchNormStage> norms; // empty when batch norm is off
    Matrix head_weight;                // hidden x 1
    Matrix head_bias;                  // 1 x 1

    /// Trainable tensors in a fixed order shared by gradients and optimizer state.
    std::vector<Matrix*> trainable() {
        std::vector<Matrix*> out;
        for (auto& l : layers) {
            for (auto& m : l.input_weights) out.push_back(&m);
            for (auto& m : l.recurrent_weights) out.push_back(&m);
            for (auto& m : l.biases) out.push_back(&m);
        }
        for (auto& n : norms) {
            out.push_back(&n.gamma);
            out.push_back(&n.beta);
        }
        out.push_back(&head_weight);
        out.push_back(&head_bias);
        return out;
    }

    std::vector<const Matrix*> trainable() const {
        std::vector<const Matrix*> out;
        for (auto* m : const_cast<ModelParams*>(this)->trainable()) out.push_back(m);
        return out;
    }

    /// Every persisted tensor: trainable ones followed by batch-norm running stats.
    std::vector<Matrix*> all_tensors() {
        auto out = trainable();
        for (auto& n : norms) {
            out.push_back(&n.running_mean);
            out.push_back(&n.running_var);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* m : trainable()) n += static_cast<std::size_t>(m->size());
        return n;
    }

    bool operator==(const ModelParams& other) const {
        auto a = const_cast<ModelParams*>(this)->all_tensors();
        auto b = const_cast<ModelParams&>(other).all_tensors();
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
        return true;
    }
};

/// Same layout as `p`, every trainable entry zero. Used for gradients and
/// optimizer moments.
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto* m : z.all_tensors()) m->setZero();
    return z;
}

/// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases (LSTM forget
/// bias 1), gamma 1, beta 0, running stats (0, 1) and a head bias of
/// ln(pos / neg) so the untrained model predicts the base rate.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed, std::size_t pos_count,
                               std::size_t neg_count) {
    validate(config);
    require(pos_count > 0 && neg_count > 0, ErrorKind::InvalidArgument, "class counts must be positive");
    Rng rng(seed);
    auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols) {
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
        return m;
    };

    const Eigen::Index hidden = config.hidden_size;
    const int gates = gate_count(config.cell);
    ModelParams p;
    for (int l = 0; l < config.num_layers; ++l) {
        const Eigen::Index in = l == 0 ? config.input_features : hidden;
        RecurrentLayer layer;
        for (int g = 0; g < gates; ++g) {
            layer.input_weights.push_back(uniform(in, hidden));
            layer.recurrent_weights.push_back(uniform(hidden, hidden));
            layer.biases.push_back(Matrix::Zero(1, hidden));
        }
        if (config.cell == CellKind::LSTM) layer.biases[kForget].setOnes();
        p.layers.push_back(std::move(layer));
        if (config.batchnorm) {
            p.norms.push_back({Matrix::Ones(1, hidden), Matrix::Zero(1, hidden), Matrix::Zero(1, hidden),
                               Matrix::Ones(1, hidden)});
        }
    }
    p.head_weight = uniform(hidden, 1);
    p.head_bias = Matrix::Constant(
        1, 1,
        config.output_bias_init.value_or(std::log(static_cast<double>(pos_count) / static_cast<double>(neg_count))));
    return p;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename Derived>
Matrix sigmoid(const Eigen::MatrixBase<Derived>& x) {
    return x.unaryExpr([](double v) { return sigmoid(v); });
}

template <typename Derived>
Matrix tanh(const Eigen::MatrixBase<Derived>& x) {
    return x.array().tanh().matrix();
}

namespace detail {

inline void check_layer_shapes(const RecurrentLayer& layer, int gates, Eigen::Index batch, Eigen::Index in,
                               const Matrix& h_prev) {
    require(static_cast<int>(layer.input_weights.size()) == gates &&
                static_cast<int>(layer.recurrent_weights.size()) == gates &&
                static_cast<int>(layer.biases.size()) == gates,
            ErrorKind::ShapeMismatch, "layer has the wrong number of gates for this cell");
    require(layer.input_size() == in, ErrorKind::ShapeMismatch, "input width does not match layer");
    require(h_prev.rows() == batch && h_prev.cols() == layer.hidden_size(), ErrorKind::ShapeMismatch,
            "previous state has the wrong shape");
}

} // namespace detail

struct GruStep {
    Matrix update, reset, candidate, hidden;
};

/// One GRU step on a batch (rows are samples).
inline GruStep gru_cell(const Matrix& x, const Matrix& h_prev, const RecurrentLayer& layer) {
    detail::check_layer_shapes(layer, 3, x.rows(), x.cols(), h_prev);
    GruStep s;
    s.update = sigmoid((x * layer.input_weights[kUpdate] + h_prev * layer.recurrent_weights[kUpdate]).rowwise() +
                       layer.biases[kUpdate].row(0));
    s.reset = sigmoid((x * layer.input_weights[kReset] + h_prev * layer.recurrent_weights[kReset]).rowwise() +
                      layer.biases[kReset].row(0));
    const Matrix gated = s.reset.cwiseProduct(h_prev);
    s.candidate = tanh((x * layer.input_weights[kGruCandidate] + gated * layer.recurrent_weights[kGruCandidate])
                           .rowwise() +
                       layer.biases[kGruCandidate].row(0));
    s.hidden = h_prev + s.update.cwiseProduct(s.candidate - h_prev);
    return s;
}

struct LstmStep {
    Matrix forget, input, output, candidate, cell, hidden;
};

inline LstmStep lstm_cell(const Matrix& x, const Matrix& h_prev, const Matrix& c_prev, const RecurrentLayer& layer) {
    detail::check_layer_shapes(layer, 4, x.rows(), x.cols(), h_prev);
    require(c_prev.rows() == h_prev.rows() && c_prev.cols() == h_prev.cols(), ErrorKind::ShapeMismatch,
            "cell state has the wrong shape");
    auto affine = [&](int g) -> Matrix {
        return (x * layer.input_weights[g] + h_prev * layer.recurrent_weights[g]).rowwise() + layer.biases[g].row(0);
    };
    LstmStep s;
    s.forget = sigmoid(affine(kForget));
    s.input = sigmoid(affine(kInput));
    s.output = sigmoid(affine(kOutput));
    s.candidate = tanh(affine(kLstmCandidate));
    s.cell = s.forget.cwiseProduct(c_prev) + s.input.cwiseProduct(s.candidate);
    s.hidden = s.output.cwiseProduct(tanh(s.cell));
    return s;
}

struct DropoutResult {
    Matrix output;
    Matrix mask; // entries 0 or 1/(1-rate); empty when dropout is the identity
};

/// Inverted dropout: Train zeroes each entry with probability `rate` and
/// scales survivors by 1/(1-rate); Eval is the identity.
inline DropoutResult dropout(const Matrix& x, double rate, Mode mode, Rng& rng) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::InvalidArgument, "dropout rate must be in [0,1)");
    if (mode == Mode::Eval || rate == 0.0) return {x, Matrix()};
    std::bernoulli_distribution drop(rate);
    const double keep_scale = 1.0 / (1.0 - rate);
    Matrix mask(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) mask(i, j) = drop(rng) ? 0.0 : keep_scale;
    return {x.cwiseProduct(mask), std::move(mask)};
}

struct BatchNormResult {
    Matrix output;
    Matrix normalized;            // x-hat
    RowVector mean, var, inv_std; // statistics actually used
};

/// Per-channel normalization over all rows. Train uses batch statistics
/// (population variance), Eval the running statistics.
inline BatchNormResult batchnorm(const Matrix& x, const BatchNormStage& stage, Mode mode) {
    require(stage.gamma.cols() == x.cols(), ErrorKind::ShapeMismatch, "batch-norm width does not match input");
    BatchNormResult r;
    if (mode == Mode::Train) {
        require(x.rows() >= 2, ErrorKind::DegenerateBatch, "batch norm needs at least 2 rows per channel in Train mode");
        r.mean = x.colwise().mean();
        r.var = (x.rowwise() - r.mean).array().square().colwise().mean().matrix();
    } else {
        r.mean = stage.running_mean.row(0);
        r.var = stage.running_var.row(0);
    }
    r.inv_std = (r.var.array() + kBatchNormEpsilon).rsqrt().matrix();
    r.normalized = ((x.rowwise() - r.mean).array().rowwise() * r.inv_std.array()).matrix();
    r.output = ((r.normalized.array().rowwise() * stage.gamma.row(0).array()).rowwise() + stage.beta.row(0).array())
                   .matrix();
    return r;
}

/// Time-major packing of windows: rows [t*B, (t+1)*B) are timestep t.
struct Batch {
    Matrix inputs;
    Eigen::Index size = 0;
    Eigen::Index steps = 0;
};

inline Batch pack_batch(std::span<const FeatureWindow> windows) {
    require(!windows.empty(), ErrorKind::ShapeMismatch, "empty batch");
    Batch b;
    b.size = static_cast<Eigen::Index>(windows.size());
    b.steps = windows.front().values.rows();
    const Eigen::Index features = windows.front().values.cols();
    b.inputs.resize(b.steps * b.size, features);
    for (Eigen::Index s = 0; s < b.size; ++s) {
        const auto& v = windows[static_cast<std::size_t>(s)].values;
        require(v.rows() == b.steps && v.cols() == features, ErrorKind::ShapeMismatch, "windows of differing shape");
        for (Eigen::Index t = 0; t < b.steps; ++t) b.inputs.row(t * b.size + s) = v.row(t);
    }
    return b;
}

inline std::vector<const FeatureWindow*> as_pointers(std::span<const FeatureWindow> windows) {
    std::vector<const FeatureWindow*> out;
    for (const auto& w : windows) out.push_back(&w);
    return out;
}

inline Batch pack_batch(std::span<const FeatureWindow* const> windows) {
    require(!windows.empty(), ErrorKind::ShapeMismatch, "empty batch");
    Batch b;
    b.size = static_cast<Eigen::Index>(windows.size());
    b.steps = windows.front()->values.rows();
    const Eigen::Index features = windows.front()->values.cols();
    b.inputs.resize(b.steps * b.size, features);
    for (Eigen::Index s = 0; s < b.size; ++s) {
        const auto& v = windows[static_cast<std::size_t>(s)]->values;
        require(v.rows() == b.steps && v.cols() == features, ErrorKind::ShapeMismatch, "windows of differing shape");
        for (Eigen::Index t = 0; t < b.steps; ++t) b.inputs.row(t * b.size + s) = v.row(t);
    }
    return b;
}

struct LayerTrace {
    Matrix input;              // (steps*batch) x in
    std::vector<Matrix> gates; // activated gate values per gate
    Matrix cell;               // LSTM cell states
    Matrix cell_tanh;          // LSTM tanh(cell)
    Matrix hidden;             // recurrent outputs before dropout
    Matrix dropout_mask;
    BatchNormResult norm;      // empty when batch norm is off
    Matrix output;             // what the next layer sees
};

struct ForwardTrace {
    Mode mode = Mode::Eval;
    CellKind cell = CellKind::LSTM;
    Eigen::Index batch = 0;
    Eigen::Index steps = 0;
    std::vector<LayerTrace> layers;
    Matrix pooled; // batch x hidden, head input
    Vector logits;
    Vector probabilities;
};

namespace detail {

inline Matrix shifted_by_one_step(const Matrix& seq, Eigen::Index batch) {
    Matrix prev = Matrix::Zero(seq.rows(), seq.cols());
    if (seq.rows() > batch) prev.bottomRows(seq.rows() - batch) = seq.topRows(seq.rows() - batch);
    return prev;
}

inline void recurrent_forward(const RecurrentLayer& layer, CellKind kind, Eigen::Index batch, Eigen::Index steps,
                              LayerTrace& tr) {
    const int gates = gate_count(kind);
    const Eigen::Index hidden = layer.hidden_size();
    const Eigen::Index rows = batch * steps;

    std::vector<Matrix> proj(static_cast<std::size_t>(gates));
    for (int g = 0; g < gates; ++g) {
        proj[g].noalias() = tr.input * layer.input_weights[g];
        proj[g].rowwise() += layer.biases[g].row(0);
    }
    tr.gates.assign(static_cast<std::size_t>(gates), Matrix(rows, hidden));
    tr.hidden.resize(rows, hidden);
    Matrix h = Matrix::Zero(batch, hidden);

    if (kind == CellKind::GRU) {
        for (Eigen::Index t = 0; t < steps; ++t) {
            const Eigen::Index r0 = t * batch;
            Matrix z = sigmoid(proj[kUpdate].middleRows(r0, batch) + h * layer.recurrent_weights[kUpdate]);
            Matrix r = sigmoid(proj[kReset].middleRows(r0, batch) + h * layer.recurrent_weights[kReset]);
            Matrix c = tanh(proj[kGruCandidate].middleRows(r0, batch) +
                            r.cwiseProduct(h) * layer.recurrent_weights[kGruCandidate]);
            h += z.cwiseProduct(c - h);
            tr.gates[kUpdate].middleRows(r0, batch) = z;
            tr.gates[kReset].middleRows(r0, batch) = r;
            tr.gates[kGruCandidate].middleRows(r0, batch) = c;
            tr.hidden.middleRows(r0, batch) = h;
        }
        return;
    }

    Matrix recurrent(hidden, 4 * hidden);
    for (int g = 0; g < 4; ++g) recurrent.middleCols(g * hidden, hidden) = layer.recurrent_weights[g];
    tr.cell.resize(rows, hidden);
    tr.cell_tanh.resize(rows, hidden);
    Matrix c = Matrix::Zero(batch, hidden);
    Matrix rec(batch, 4 * hidden);
    for (Eigen::Index t = 0; t < steps; ++t) {
        const Eigen::Index r0 = t * batch;
        rec.noalias() = h * recurrent;
        Matrix f = sigmoid(proj[kForget].middleRows(r0, batch) + rec.middleCols(kForget * hidden, hidden));
        Matrix i = sigmoid(proj[kInput].middleRows(r0, batch) + rec.middleCols(kInput * hidden, hidden));
        Matrix o = sigmoid(proj[kOutput].middleRows(r0, batch) + rec.middleCols(kOutput * hidden, hidden));
        Matrix g = tanh(proj[kLstmCandidate].middleRows(r0, batch) + rec.middleCols(kLstmCandidate * hidden, hidden));
        c = f.cwiseProduct(c) + i.cwiseProduct(g);
        Matrix tc = tanh(c);
        h = o.cwiseProduct(tc);
        tr.gates[kForget].middleRows(r0, batch) = f;
        tr.gates[kInput].middleRows(r0, batch) = i;
        tr.gates[kOutput].middleRows(r0, batch) = o;
        tr.gates[kLstmCandidate].middleRows(r0, batch) = g;
        tr.cell.middleRows(r0, batch) = c;
        tr.cell_tanh.middleRows(r0, batch) = tc;
        tr.hidden.middleRows(r0, batch) = h;
    }
}

// Backpropagation through time for one layer. `d_hidden` is the loss
// gradient w.r.t. every recurrent output; fills the layer gradients and
// returns the gradient w.r.t. the layer input.
inline Matrix recurrent_backward(const RecurrentLayer& layer, CellKind kind, Eigen::Index batch, Eigen::Index steps,
                                 const LayerTrace& tr, const Matrix& d_hidden, RecurrentLayer& grad) {
    const int gates = gate_count(kind);
    const Eigen::Index hidden = layer.hidden_size();
    const Eigen::Index rows = batch * steps;
    const Matrix h_prev = shifted_by_one_step(tr.hidden, batch);
    std::vector<Matrix> d_pre(static_cast<std::size_t>(gates), Matrix(rows, hidden));
    Matrix dh_next = Matrix::Zero(batch, hidden);

    if (kind == CellKind::GRU) {
        for (Eigen::Index t = steps - 1; t >= 0; --t) {
            const Eigen::Index r0 = t * batch;
            const auto z = tr.gates[kUpdate].middleRows(r0, batch).array();
            const auto r = tr.gates[kReset].middleRows(r0, batch).array();
            const auto c = tr.gates[kGruCandidate].middleRows(r0, batch).array();
            const auto hp = h_prev.middleRows(r0, batch).array();
            const Matrix dh = d_hidden.middleRows(r0, batch) + dh_next;

            Matrix dhp = (dh.array() * (1.0 - z)).matrix();
            const Matrix dac = (dh.array() * z * (1.0 - c.square())).matrix();
            const Matrix d_gated = dac * layer.recurrent_weights[kGruCandidate].transpose();
            dhp.array() += d_gated.array() * r;
            const Matrix daz = (dh.array() * (c - hp) * z * (1.0 - z)).matrix();
            const Matrix dar = (d_gated.array() * hp * r * (1.0 - r)).matrix();
            dhp.noalias() += daz * layer.recurrent_weights[kUpdate].transpose();
            dhp.noalias() += dar * layer.recurrent_weights[kReset].transpose();

            d_pre[kUpdate].middleRows(r0, batch) = daz;
            d_pre[kReset].middleRows(r0, batch) = dar;
            d_pre[kGruCandidate].middleRows(r0, batch) = dac;
            dh_next = std::move(dhp);
        }
        const Matrix gated_prev = tr.gates[kReset].cwiseProduct(h_prev);
        grad.recurrent_weights[kUpdate].noalias() = h_prev.transpose() * d_pre[kUpdate];
        grad.recurrent_weights[kReset].noalias() = h_prev.transpose() * d_pre[kReset];
        grad.recurrent_weights[kGruCandidate].noalias() = gated_prev.transpose() * d_pre[kGruCandidate];
    } else {
        const Matrix c_prev = shifted_by_one_step(tr.cell, batch);
        Matrix recurrent_t(4 * hidden, hidden);
        for (int g = 0; g < 4; ++g)
            recurrent_t.middleRows(g * hidden, hidden) = layer.recurrent_weights[g].transpose();
        Matrix dc_next = Matrix::Zero(batch, hidden);
        Matrix d_all(batch, 4 * hidden);
        for (Eigen::Index t = steps - 1; t >= 0; --t) {
            const Eigen::Index r0 = t * batch;
            const auto f = tr.gates[kForget].middleRows(r0, batch).array();
            const auto i = tr.gates[kInput].middleRows(r0, batch).array();
            const auto o = tr.gates[kOutput].middleRows(r0, batch).array();
            const auto g = tr.gates[kLstmCandidate].middleRows(r0, batch).array();
            const auto tc = tr.cell_tanh.middleRows(r0, batch).array();
            const auto cp = c_prev.middleRows(r0, batch).array();
            const Matrix dh = d_hidden.middleRows(r0, batch) + dh_next;

            const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * o * (1.0 - tc.square());
            d_all.middleCols(kForget * hidden, hidden) = (dc * cp * f * (1.0 - f)).matrix();
            d_all.middleCols(kInput * hidden, hidden) = (dc * g * i * (1.0 - i)).matrix();
            d_all.middleCols(kOutput * hidden, hidden) = (dh.array() * tc * o * (1.0 - o)).matrix();
            d_all.middleCols(kLstmCandidate * hidden, hidden) = (dc * i * (1.0 - g.square())).matrix();
            for (int k = 0; k < 4; ++k) d_pre[k].middleRows(r0, batch) = d_all.middleCols(k * hidden, hidden);

            dh_next.noalias() = d_all * recurrent_t;
            dc_next = (dc * f).matrix();
        }
        for (int g = 0; g < 4; ++g) grad.recurrent_weights[g].noalias() = h_prev.transpose() * d_pre[g];
    }

    Matrix d_input = Matrix::Zero(rows, layer.input_size());
    for (int g = 0; g < gates; ++g) {
        grad.input_weights[g].noalias() = tr.input.transpose() * d_pre[g];
        grad.biases[g] = d_pre[g].colwise().sum();
        d_input.noalias() += d_pre[g] * layer.input_weights[g].transpose();
    }
    return d_input;
}

} // namespace detail

/// Runs the stacked model. In Train mode dropout masks are drawn from `rng`
/// and batch norm uses batch statistics; running statistics are not touched
/// here (see update_running_stats). Eval mode is a pure function of its inputs.
inline ForwardTrace model_forward(const Batch& batch, const ModelParams& params, const ModelConfig& config, Mode mode,
                                  Rng* rng = nullptr) {
    validate(config);
    require(batch.inputs.cols() == config.input_features, ErrorKind::ShapeMismatch,
            "input has " + std::to_string(batch.inputs.cols()) + " features, model expects " +
                std::to_string(config.input_features));
    require(batch.steps >= 1 && batch.size >= 1 && batch.inputs.rows() == batch.steps * batch.size,
            ErrorKind::ShapeMismatch, "batch tensor shape inconsistent");
    require(static_cast<int>(params.layers.size()) == config.num_layers, ErrorKind::ShapeMismatch,
            "params have a different layer count than the config");
    require(static_cast<int>(params.norms.size()) == (config.batchnorm ? config.num_layers : 0),
            ErrorKind::ShapeMismatch, "batch-norm stages do not match the config");
    const bool needs_rng = mode == Mode::Train && config.dropout > 0.0;
    require(!needs_rng || rng != nullptr, ErrorKind::InvalidArgument, "Train-mode dropout needs an RNG");

    ForwardTrace tr;
    tr.mode = mode;
    tr.cell = config.cell;
    tr.batch = batch.size;
    tr.steps = batch.steps;
    tr.layers.resize(params.layers.size());

    const Matrix* input = &batch.inputs;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lt = tr.layers[l];
        const auto& layer = params.layers[l];
        require(static_cast<int>(layer.input_weights.size()) == gate_count(config.cell) &&
                    layer.input_size() == input->cols(),
                ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " shape mismatch");
        lt.input = *input;
        detail::recurrent_forward(layer, config.cell, batch.size, batch.steps, lt);

        Matrix current;
        if (needs_rng) {
            auto d = dropout(lt.hidden, config.dropout, mode, *rng);
            current = std::move(d.output);
            lt.dropout_mask = std::move(d.mask);
        } else {
            current = lt.hidden;
        }
        if (config.batchnorm) {
            lt.norm = batchnorm(current, params.norms[l], mode);
            lt.output = lt.norm.output;
        } else {
            lt.output = std::move(current);
        }
        input = &lt.output;
    }

    const Matrix& top = tr.layers.back().output;
    if (config.pooling == Pooling::LastStep) {
        tr.pooled = top.bottomRows(batch.size);
    } else {
        tr.pooled = Matrix::Zero(batch.size, top.cols());
        for (Eigen::Index t = 0; t < batch.steps; ++t) tr.pooled += top.middleRows(t * batch.size, batch.size);
        tr.pooled /= static_cast<double>(batch.steps);
    }
    tr.logits = ((tr.pooled * params.head_weight).col(0).array() + params.head_bias(0, 0)).matrix();
    tr.probabilities = tr.logits.unaryExpr([](double v) { return sigmoid(v); });
    return tr;
}

/// Gradients of a scalar loss w.r.t. every trainable parameter, given the
/// loss gradient w.r.t. each sample's head logit.
inline ModelParams model_backward(const ForwardTrace& trace, const ModelParams& params, const ModelConfig& config,
                                  const Vector& d_logits) {
    require(trace.cell == config.cell && static_cast<int>(trace.layers.size()) == config.num_layers &&
                trace.layers.size() == params.layers.size() && trace.pooled.cols() == params.head_weight.rows(),
            ErrorKind::TraceMismatch, "trace was not produced for this model");
    require(d_logits.size() == trace.batch, ErrorKind::TraceMismatch, "upstream gradient length differs from batch");

    ModelParams grad = zeros_like(params);
    const Eigen::Index batch = trace.batch;
    const Eigen::Index steps = trace.steps;

    grad.head_weight = trace.pooled.transpose() * d_logits;
    grad.head_bias(0, 0) = d_logits.sum();
    const Matrix d_pooled = d_logits * params.head_weight.transpose();

    Matrix d_out = Matrix::Zero(batch * steps, params.head_weight.rows());
    if (config.pooling == Pooling::LastStep) {
        d_out.bottomRows(batch) = d_pooled;
    } else {
        for (Eigen::Index t = 0; t < steps; ++t)
            d_out.middleRows(t * batch, batch) = d_pooled / static_cast<double>(steps);
    }

    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& lt = trace.layers[l];
        Matrix d_dropped;
        if (config.batchnorm) {
            const auto& stage = params.norms[l];
            auto& g = grad.norms[l];
            g.gamma = d_out.cwiseProduct(lt.norm.normalized).colwise().sum();
            g.beta = d_out.colwise().sum();
            const Eigen::ArrayXXd d_norm = (d_out.array().rowwise() * stage.gamma.row(0).array());
            if (trace.mode == Mode::Train) {
                const Eigen::ArrayXXd& xh = lt.norm.normalized.array();
                const Eigen::Array<double, 1, Eigen::Dynamic> mean_d = d_norm.colwise().mean();
                const Eigen::Array<double, 1, Eigen::Dynamic> mean_dx = (d_norm * xh).colwise().mean();
                d_dropped = (((d_norm.rowwise() - mean_d) - xh.rowwise() * mean_dx).rowwise() *
                             lt.norm.inv_std.array())
                                .matrix();
            } else {
                d_dropped = (d_norm.rowwise() * lt.norm.inv_std.array()).matrix();
            }
        } else {
            d_dropped = std::move(d_out);
        }
        const Matrix d_hidden = lt.dropout_mask.size() ? d_dropped.cwiseProduct(lt.dropout_mask) : d_dropped;
        d_out = detail::recurrent_backward(params.layers[l], config.cell, batch, steps, lt, d_hidden,
                                           grad.layers[l]);
    }
    return grad;
}

/// Folds a Train-mode trace's batch statistics into the running statistics.
inline void update_running_stats(ModelParams& params, const ForwardTrace& trace,
                                 double momentum = kBatchNormMomentum) {
    if (trace.mode != Mode::Train) return;
    require(params.norms.empty() || params.norms.size() == trace.layers.size(), ErrorKind::TraceMismatch,
            "trace layer count differs from params");
    for (std::size_t l = 0; l < params.norms.size(); ++l) {
        auto& n = params.norms[l];
        n.running_mean = momentum * n.running_mean + (1.0 - momentum) * trace.layers[l].norm.mean;
        n.running_var = momentum * n.running_var + (1.0 - momentum) * trace.layers[l].norm.var;
    }
}

} // namespace drivenet

#pragma once

// Binary model checkpoint, little-endian regardless of host.
//
//   bytes 0..7   magic "DRVNCKPT"
//   u32          format version (1)
//   u8 cell, u32 layers, u32 hidden, f64 dropout, u8 batchnorm,
//   u32 input_features, u32 window_length, u8 pooling,
//   u8 has_bias_override, f64 bias_override
//   u32          tensor count, then per tensor: u64 rows, u64 cols,
//                rows*cols f64 in column-major order (trainable tensors in
//                ModelParams::trainable() order, then running mean/var per
//                batch-norm stage)
//   u8           has_pipeline; when 1:
//                u8 norm method, u32 F, f64 min[F], max[F], mean[F], stddev[F],
//                u32 stride, u8 include_speed_limit, u8 drowsy policy,
//                u8 protocol, u8 split guard, u8 held-out driver (0 = none), u64 seed,
//                f64 negative-class weight, f64 positive-class weight
//
// Loading rejects a wrong magic, any other version, or tensor shapes that do
// not match the stored config.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "drivenet/error.hpp"
#include "drivenet/features.hpp"
#include "drivenet/rnn.hpp"

namespace drivenet {

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'R', 'V', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// What eval needs to rebuild the exact test windows a model was trained for.
struct PipelineInfo {
    NormStats norm;
    FeatureOptions features;
    Protocol protocol = Protocol::Seen;
    SplitGuard split_guard = SplitGuard::None;
    std::optional<DriverId> held_out;
    std::uint64_t seed = 0;
    ClassWeights weights;
};

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::optional<PipelineInfo> pipeline;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    std::array<char, sizeof(T)> bytes;
    is.read(bytes.data(), sizeof(T));
    require(static_cast<bool>(is), ErrorKind::CheckpointError, "checkpoint truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void write_row(std::ostream& os, const RowVector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) write_le<double>(os, v(i));
}

inline RowVector read_row(std::istream& is, Eigen::Index n) {
    RowVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = read_le<double>(is);
    return v;
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    using detail::write_le;
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    write_le<std::uint32_t>(os, kCheckpointVersion);
    const auto& c = ck.config;
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(c.cell));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_layers));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.hidden_size));
    write_le<double>(os, c.dropout);
    write_le<std::uint8_t>(os, c.batchnorm ? 1 : 0);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.input_features));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.window_length));
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(c.pooling));
    write_le<std::uint8_t>(os, c.output_bias_init ? 1 : 0);
    write_le<double>(os, c.output_bias_init.value_or(0.0));

    auto tensors = const_cast<ModelParams&>(ck.params).all_tensors();
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t->rows()));
        write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t->cols()));
        for (Eigen::Index i = 0; i < t->size(); ++i) write_le<double>(os, t->data()[i]);
    }

    write_le<std::uint8_t>(os, ck.pipeline ? 1 : 0);
    if (ck.pipeline) {
        const auto& p = *ck.pipeline;
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.norm.method));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.norm.features()));
        detail::write_row(os, p.norm.min);
        detail::write_row(os, p.norm.max);
        detail::write_row(os, p.norm.mean);
        detail::write_row(os, p.norm.stddev);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.features.stride));
        write_le<std::uint8_t>(os, p.features.include_speed_limit ? 1 : 0);
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.features.drowsy));
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.protocol));
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.split_guard));
        write_le<std::uint8_t>(os, p.held_out ? static_cast<std::uint8_t>(driver_index(*p.held_out)) : 0);
        write_le<std::uint64_t>(os, p.seed);
        write_le<double>(os, p.weights.negative);
        write_le<double>(os, p.weights.positive);
    }
}

inline Checkpoint read_checkpoint(std::istream& is) {
    using detail::read_le;
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    require(static_cast<bool>(is) && magic == kCheckpointMagic, ErrorKind::CheckpointError, "not a drivenet checkpoint");
    const auto version = read_le<std::uint32_t>(is);
    require(version == kCheckpointVersion, ErrorKind::CheckpointError,
            "unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    auto& c = ck.config;
    const auto cell = read_le<std::uint8_t>(is);
    require(cell <= 1, ErrorKind::CheckpointError, "unknown cell kind");
    c.cell = static_cast<CellKind>(cell);
    c.num_layers = static_cast<int>(read_le<std::uint32_t>(is));
    c.hidden_size = static_cast<int>(read_le<std::uint32_t>(is));
    c.dropout = read_le<double>(is);
    c.batchnorm = read_le<std::uint8_t>(is) != 0;
    c.input_features = static_cast<int>(read_le<std::uint32_t>(is));
    c.window_length = static_cast<int>(read_le<std::uint32_t>(is));
    const auto pooling = read_le<std::uint8_t>(is);
    require(pooling <= 1, ErrorKind::CheckpointError, "unknown pooling");
    c.pooling = static_cast<Pooling>(pooling);
    const bool has_override = read_le<std::uint8_t>(is) != 0;
    const double override_value = read_le<double>(is);
    if (has_override) c.output_bias_init = override_value;
    try {
        validate(c);
    } catch (const Error& e) {
        throw Error(ErrorKind::CheckpointError, std::string("invalid stored config: ") + e.what());
    }

    // Shapes come from a freshly initialized model for the stored config.
    ck.params = init_params(c, 0, 1, 1);
    auto tensors = ck.params.all_tensors();
    const auto count = read_le<std::uint32_t>(is);
    require(count == tensors.size(), ErrorKind::CheckpointError,
            "tensor count " + std::to_string(count) + " does not match config (" + std::to_string(tensors.size()) + ")");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const auto rows = read_le<std::uint64_t>(is);
        const auto cols = read_le<std::uint64_t>(is);
        require(rows == static_cast<std::uint64_t>(tensors[k]->rows()) &&
                    cols == static_cast<std::uint64_t>(tensors[k]->cols()),
                ErrorKind::CheckpointError, "tensor " + std::to_string(k) + " shape does not match config");
        for (Eigen::Index i = 0; i < tensors[k]->size(); ++i) tensors[k]->data()[i] = read_le<double>(is);
    }

    if (read_le<std::uint8_t>(is) != 0) {
        PipelineInfo p;
        const auto method = read_le<std::uint8_t>(is);
        require(method <= 1, ErrorKind::CheckpointError, "unknown normalization method");
        p.norm.method = static_cast<NormMethod>(method);
        const auto f = static_cast<Eigen::Index>(read_le<std::uint32_t>(is));
        require(f == c.input_features, ErrorKind::CheckpointError, "normalizer width does not match model input");
        p.norm.min = detail::read_row(is, f);
        p.norm.max = detail::read_row(is, f);
        p.norm.mean = detail::read_row(is, f);
        p.norm.stddev = detail::read_row(is, f);
        p.features.window_length = c.window_length;
        p.features.stride = static_cast<int>(read_le<std::uint32_t>(is));
        p.features.include_speed_limit = read_le<std::uint8_t>(is) != 0;
        const auto drowsy = read_le<std::uint8_t>(is);
        const auto protocol = read_le<std::uint8_t>(is);
        const auto guard = read_le<std::uint8_t>(is);
        const auto held = read_le<std::uint8_t>(is);
        require(drowsy <= 1 && protocol <= 1 && guard <= 1 && held <= kDriverCount, ErrorKind::CheckpointError,
                "corrupt pipeline section");
        p.features.drowsy = static_cast<DrowsyPolicy>(drowsy);
        p.protocol = static_cast<Protocol>(protocol);
        p.split_guard = static_cast<SplitGuard>(guard);
        if (held) p.held_out = driver_from_index(held);
        p.seed = read_le<std::uint64_t>(is);
        p.weights.negative = read_le<double>(is);
        p.weights.positive = read_le<double>(is);
        ck.pipeline = std::move(p);
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::IoFailure, "cannot write " + path.string());
    write_checkpoint(os, ck);
    require(static_cast<bool>(os), ErrorKind::IoFailure, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::IoFailure, "cannot open " + path.string());
    return read_checkpoint(is);
}

} // namespace drivenet

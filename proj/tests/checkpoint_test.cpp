#include <gtest/gtest.h>

#include <sstream>

#include "drivenet/checkpoint.hpp"
#include "test_support.hpp"

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

Checkpoint sample(bool with_pipeline) {
    Checkpoint ck;
    ck.config.cell = CellKind::GRU;
    ck.config.num_layers = 2;
    ck.config.hidden_size = 3;
    ck.config.window_length = 7;
    ck.config.input_features = 9;
    ck.config.dropout = 0.25;
    ck.config.output_bias_init = -0.5;
    ck.params = init_params(ck.config, 3, 1, 2);
    ck.params.norms[1].running_var.setConstant(0.75);
    if (with_pipeline) {
        PipelineInfo p;
        p.norm = fit_normalizer(Matrix::Random(20, 9), NormMethod::MinMax);
        p.features.window_length = 7;
        p.features.stride = 3;
        p.features.include_speed_limit = true;
        p.features.drowsy = DrowsyPolicy::Exclude;
        p.protocol = Protocol::UnseenDriver;
        p.split_guard = SplitGuard::Trajectory;
        p.held_out = DriverId::D4;
        p.seed = 0x1234567890abcdefULL;
        p.weights = {0.6, 3.0};
        ck.pipeline = p;
    }
    return ck;
}

std::string bytes_of(const Checkpoint& ck) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ck);
    return os.str();
}

Checkpoint parse(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    return read_checkpoint(is);
}

} // namespace

TEST(Checkpoint, RoundTripWithoutPipeline) {
    const auto ck = sample(false);
    const auto back = parse(bytes_of(ck));
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.params, ck.params);
    EXPECT_FALSE(back.pipeline.has_value());
}

TEST(Checkpoint, RoundTripWithPipeline) {
    const auto ck = sample(true);
    const auto back = parse(bytes_of(ck));
    ASSERT_TRUE(back.pipeline.has_value());
    const auto& a = *ck.pipeline;
    const auto& b = *back.pipeline;
    EXPECT_EQ(b.norm.method, a.norm.method);
    EXPECT_EQ(b.norm.min, a.norm.min);
    EXPECT_EQ(b.norm.max, a.norm.max);
    EXPECT_EQ(b.norm.mean, a.norm.mean);
    EXPECT_EQ(b.norm.stddev, a.norm.stddev);
    EXPECT_EQ(b.features.stride, 3);
    EXPECT_TRUE(b.features.include_speed_limit);
    EXPECT_EQ(b.features.drowsy, DrowsyPolicy::Exclude);
    EXPECT_EQ(b.protocol, Protocol::UnseenDriver);
    EXPECT_EQ(b.split_guard, SplitGuard::Trajectory);
    EXPECT_EQ(b.held_out, DriverId::D4);
    EXPECT_EQ(b.seed, a.seed);
    EXPECT_EQ(b.weights.negative, 0.6);
    EXPECT_EQ(b.weights.positive, 3.0);
    EXPECT_EQ(bytes_of(back), bytes_of(ck));
}

TEST(Checkpoint, LittleEndianHeader) {
    const auto bytes = bytes_of(sample(false));
    EXPECT_EQ(bytes.substr(0, 8), "DRVNCKPT");
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
    EXPECT_EQ(bytes[9], 0);
    EXPECT_EQ(bytes[10], 0);
    EXPECT_EQ(bytes[11], 0);
}

TEST(Checkpoint, RejectsBadMagic) {
    auto bytes = bytes_of(sample(false));
    bytes[0] = 'X';
    EXPECT_EQ(kind_of([&] { parse(bytes); }), ErrorKind::CheckpointError);
}

TEST(Checkpoint, RejectsOtherVersion) {
    auto bytes = bytes_of(sample(false));
    bytes[8] = 2;
    EXPECT_EQ(kind_of([&] { parse(bytes); }), ErrorKind::CheckpointError);
}

TEST(Checkpoint, RejectsShapeMismatch) {
    // Claim 4 hidden units in the header while the tensors hold 3.
    auto bytes = bytes_of(sample(false));
    const std::size_t hidden_offset = 8 + 4 + 1 + 4;
    bytes[hidden_offset] = 4;
    EXPECT_EQ(kind_of([&] { parse(bytes); }), ErrorKind::CheckpointError);
}

TEST(Checkpoint, RejectsTruncation) {
    const auto bytes = bytes_of(sample(true));
    for (std::size_t cut : {std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_EQ(kind_of([&] { parse(bytes.substr(0, cut)); }), ErrorKind::CheckpointError) << cut;
}

TEST(Checkpoint, FileRoundTrip) {
    drivenet::testing::TempDir dir;
    const auto ck = sample(true);
    save_checkpoint(dir / "m.ckpt", ck);
    EXPECT_EQ(load_checkpoint(dir / "m.ckpt").params, ck.params);
    EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "missing.ckpt"); }), ErrorKind::IoFailure);
}

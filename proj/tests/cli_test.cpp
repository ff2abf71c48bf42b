#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "drivenet/features.hpp"
#include "test_support.hpp"

using drivenet::testing::read_text;
using drivenet::testing::TempDir;
using drivenet::testing::write_text;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string("\"") + DRIVENET_CLI_PATH + "\" " + args + " 2>/dev/null";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string quoted(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

constexpr const char* kQuickConfig =
    "cell = gru\n"
    "layers = 1\n"
    "hidden = 6\n"
    "dropout = 0.2\n"
    "window = 20\n"
    "stride = 10\n"
    "epochs = 2\n"
    "batch_size = 32\n"
    "synth_drivers = 6\n"
    "synth_len = 120\n"
    "grid.windows = 20\n";

} // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run("").exit_code, 1);
    EXPECT_EQ(run("frobnicate").exit_code, 1);
    EXPECT_EQ(run("gradcheck --cell rnn").exit_code, 1);
    EXPECT_EQ(run("--help").exit_code, 0);
}

TEST(Cli, SynthThenIngest) {
    TempDir dir;
    ASSERT_EQ(run("synth --seed 3 --drivers 2 --trips 1 --len 40 --out " + quoted(dir / "data")).exit_code, 0);
    const auto r = run("ingest " + quoted(dir / "data") + " --window 10 --stride 5 --out " + quoted(dir / "w.txt"));
    ASSERT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("trajectories 6, records 240"), std::string::npos) << r.out;
    const auto windows = drivenet::load_windows(dir / "w.txt");
    EXPECT_EQ(windows.size(), 6u * 7u);
}

TEST(Cli, DataErrors) {
    TempDir dir;
    EXPECT_EQ(run("ingest " + quoted(dir / "missing")).exit_code, 2);
    EXPECT_EQ(run("ingest " + quoted(dir.path())).exit_code, 2);
    write_text(dir / "16km-D1-NORMAL-SECONDARY/RAW_GPS.txt", "0 10 40 -3 650 4 8\nbad line\n");
    EXPECT_EQ(run("ingest " + quoted(dir.path())).exit_code, 0);
    EXPECT_EQ(run("ingest --strict " + quoted(dir.path())).exit_code, 2);
}

TEST(Cli, ConfigErrorIsUsage) {
    TempDir dir;
    write_text(dir / "bad.cfg", "no_such_key = 1\n");
    EXPECT_EQ(run("train --config " + quoted(dir / "bad.cfg") + " --checkpoint " + quoted(dir / "m.ckpt")).exit_code,
              1);
}

TEST(Cli, Gradcheck) {
    const auto r = run("gradcheck --cell gru --layers 2");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("max relative error"), std::string::npos);
    EXPECT_EQ(run("gradcheck --cell lstm --layers 2 --batchnorm").exit_code, 0);
    EXPECT_EQ(run("gradcheck --cell lstm --threshold 1e-300").exit_code, 3);
}

TEST(Cli, TrainEvalRepeatable) {
    TempDir dir;
    write_text(dir / "quick.cfg", kQuickConfig);
    const std::string train = "train --config " + quoted(dir / "quick.cfg") + " --synth-seed 2 --quiet --checkpoint ";
    const auto a = run(train + quoted(dir / "a.ckpt"));
    const auto b = run(train + quoted(dir / "b.ckpt"));
    ASSERT_EQ(a.exit_code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(read_text(dir / "a.ckpt"), read_text(dir / "b.ckpt"));
    EXPECT_EQ(read_text(dir / "a.ckpt.history.csv"), read_text(dir / "b.ckpt.history.csv"));

    const std::string eval = "eval --checkpoint " + quoted(dir / "a.ckpt") + " --config " + quoted(dir / "quick.cfg") +
                             " --synth-seed 2 --protocol seen";
    const auto e1 = run(eval);
    const auto e2 = run(eval);
    ASSERT_EQ(e1.exit_code, 0);
    EXPECT_EQ(e1.out, e2.out);
    // The eval row equals the row printed by train.
    EXPECT_EQ(e1.out.substr(0, e1.out.find('\n', e1.out.find('\n') + 1)),
              a.out.substr(0, a.out.find('\n', a.out.find('\n') + 1)));
}

TEST(Cli, GridJobsIdentical) {
    TempDir dir;
    write_text(dir / "quick.cfg", std::string(kQuickConfig) + "epochs = 1\n");
    const std::string grid = "grid --config " + quoted(dir / "quick.cfg") + " --out ";
    ASSERT_EQ(run(grid + quoted(dir / "one.csv") + " --jobs 1").exit_code, 0);
    ASSERT_EQ(run(grid + quoted(dir / "four.csv") + " --jobs 4").exit_code, 0);
    const auto one = read_text(dir / "one.csv");
    EXPECT_EQ(one, read_text(dir / "four.csv"));
    EXPECT_EQ(read_text(dir / "one.details.csv"), read_text(dir / "four.details.csv"));
    EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 1 + 8);
    EXPECT_EQ(one.find("\r"), std::string::npos);
}

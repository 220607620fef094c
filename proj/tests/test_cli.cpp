#include "entmap/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace entmap;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("entmap_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (const char c : s) n += c == '\n';
  return n;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Cli, RateExampleWritesRecordsAndSlope) {
  const fs::path dir = fresh_dir("rate");
  const CliRun r = cli({"run", "rate", "--preset", "fig1-gaussians", "--eps", "1", "--sweep", "64,128,256", "--reps",
                        "5", "--seed", "7", "--n-eval", "100", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string csv = slurp(dir / "rate_records.csv");
  EXPECT_EQ(count_lines(csv), 16u);
  EXPECT_EQ(csv.rfind("experiment,sweep_value,epsilon,d,replication,metric,value\n", 0), 0u);
  EXPECT_NE(r.out.find("slope sq_l2_k1 eps=1: "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("result: PASS"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "rate_summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "rate_eps1.svg"));
  EXPECT_TRUE(fs::exists(dir / "measures.toml"));
}

TEST(Cli, KlGapExample) {
  const fs::path dir = fresh_dir("klgap");
  const CliRun r =
      cli({"run", "kl-gap", "--atoms", "2", "--eps", "1", "--m", "8", "--reps", "2000", "--seed", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err << r.out;
  EXPECT_NE(r.out.find("kl-gap eps=1 m=8: lhs"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("[PASS]"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("[FAIL]"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "kl_gap_records.csv"));
  EXPECT_TRUE(fs::exists(dir / "kl_gap.svg"));
}

TEST(Cli, DivisibilityFailureExitsTwo) {
  const CliRun r = cli({"run", "rate", "--preset", "fig1-gaussians", "--sweep", "100", "--k-rule", "3", "--seed", "1",
                        "--out", fresh_dir("div").string()});
  EXPECT_EQ(r.code, kExitConfigError);
  EXPECT_NE(r.err.find("100"), std::string::npos) << r.err;
}

TEST(Cli, MissingSeedExitsTwo) {
  const CliRun r = cli({"rate", "--preset", "fig1-gaussians", "--sweep", "64", "--out", fresh_dir("seed").string()});
  EXPECT_EQ(r.code, kExitConfigError);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST(Cli, UnknownFlagAndExperiment) {
  EXPECT_EQ(cli({"rate", "--bogus", "1"}).code, kExitConfigError);
  EXPECT_EQ(cli({"run", "nonsense", "--seed", "1"}).code, kExitConfigError);
  EXPECT_EQ(cli({"rate", "--seed", "abc", "--preset", "fig1-gaussians", "--sweep", "8"}).code, kExitConfigError);
}

TEST(Cli, PresetListing) {
  const CliRun r = cli({"presets"});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("fig1-gaussians"), std::string::npos);
  const auto pos = r.out.find("fig3-gmm");
  ASSERT_NE(pos, std::string::npos);
  const auto next = r.out.find('\n', pos);
  const auto note_end = r.out.find('\n', next + 1);
  EXPECT_GT(note_end - next, 8u);
  EXPECT_GE(preset_catalog().size(), 6u);
  std::size_t names = 0;
  for (const auto& p : preset_catalog()) names += r.out.find(p.name) != std::string::npos;
  EXPECT_EQ(names, preset_catalog().size());
}

TEST(Cli, ConfigErrorsAreLinePrecise) {
  const fs::path dir = fresh_dir("cfgerr");
  write_file(dir / "bad.toml", "experiment = \"rate\"\nseed = 3\nreps = \"many\"\n");
  const CliRun r = cli({"run", "--config", (dir / "bad.toml").string()});
  EXPECT_EQ(r.code, kExitConfigError);
  EXPECT_NE(r.err.find("bad.toml:3"), std::string::npos) << r.err;
  write_file(dir / "syntax.toml", "seed = 3\n\n[solver\n");
  const CliRun s = cli({"run", "rate", "--config", (dir / "syntax.toml").string()});
  EXPECT_EQ(s.code, kExitConfigError);
  EXPECT_NE(s.err.find("syntax.toml:3"), std::string::npos) << s.err;
}

TEST(Cli, ConfigFileRunAndFlagsOverride) {
  const fs::path dir = fresh_dir("cfg");
  write_file(dir / "run.toml",
             "experiment = \"rate\"\n"
             "preset = \"fig1-gaussians\"\n"
             "eps = 1\n"
             "sweep = [16, 32]\n"
             "reps = 2\n"
             "n_eval = 20\n"
             "seed = 5\n"
             "out = \"" + (dir / "a").string() + "\"\n");
  const CliRun a = cli({"run", "--config", (dir / "run.toml").string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(count_lines(slurp(dir / "a" / "rate_records.csv")), 5u);
  const CliRun b = cli({"run", "--config", (dir / "run.toml").string(), "--reps", "3", "--out", (dir / "b").string()});
  ASSERT_EQ(b.code, kExitOk) << b.err;
  EXPECT_EQ(count_lines(slurp(dir / "b" / "rate_records.csv")), 7u);
}

TEST(Cli, ByteIdenticalAcrossRunsAndThreads) {
  const fs::path dir = fresh_dir("repro");
  const auto args = [&](const std::string& sub, const std::string& threads) {
    return std::vector<std::string>{"run", "rate", "--preset", "fig1-gaussians", "--sweep", "16,32", "--k-rule", "1,2",
                                    "--reps", "4", "--n-eval", "30", "--seed", "11", "--threads", threads, "--out",
                                    (dir / sub).string()};
  };
  ASSERT_EQ(cli(args("one", "1")).code, kExitOk);
  ASSERT_EQ(cli(args("again", "1")).code, kExitOk);
  ASSERT_EQ(cli(args("eight", "8")).code, kExitOk);
  for (const char* f : {"rate_records.csv", "rate_summary.csv", "measures.toml", "rate_eps1.svg"}) {
    const std::string ref = slurp(dir / "one" / f);
    EXPECT_FALSE(ref.empty()) << f;
    EXPECT_EQ(ref, slurp(dir / "again" / f)) << f;
    EXPECT_EQ(ref, slurp(dir / "eight" / f)) << f;
  }
}

TEST(Cli, MeasuresFileReplaysRandomPreset) {
  const fs::path dir = fresh_dir("replay");
  ASSERT_EQ(cli({"run", "variance", "--preset", "fig2-logconcave", "--eps", "1", "--sweep", "8,16", "--reps", "3",
                 "--n-eval", "20", "--seed", "2", "--no-bound", "--out", (dir / "a").string()})
                .code,
            kExitOk);
  std::string cfg = slurp(dir / "a" / "measures.toml");
  cfg = "experiment = \"variance\"\neps = 1\nsweep = [8, 16]\nreps = 3\nn_eval = 20\nseed = 2\nvariance_bound = false\n" + cfg;
  write_file(dir / "replay.toml", cfg);
  const CliRun r = cli({"run", "--config", (dir / "replay.toml").string(), "--out", (dir / "b").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(dir / "a" / "measures.toml"), slurp(dir / "b" / "measures.toml"));
}

TEST(Cli, ThresholdFailureExitsOne) {
  const CliRun r = cli({"run", "rate", "--preset", "fig1-gaussians", "--sweep", "16,32", "--reps", "2", "--n-eval", "20",
                        "--seed", "3", "--slope-min", "5", "--out", fresh_dir("thr").string()});
  EXPECT_EQ(r.code, kExitThresholdFailed);
  EXPECT_NE(r.out.find("[FAIL]"), std::string::npos);
  EXPECT_NE(r.out.find("result: FAIL"), std::string::npos);
}

TEST(Cli, SolverBudgetExitsThree) {
  const CliRun r = cli({"run", "rate", "--preset", "fig1-gaussians", "--eps", "0.05", "--sweep", "32", "--reps", "2",
                        "--n-eval", "20", "--seed", "3", "--max-iter", "1", "--out", fresh_dir("budget").string()});
  EXPECT_EQ(r.code, kExitBudgetExceeded) << r.err;
}

TEST(Cli, MapEvalWritesPointsAndDumps) {
  const fs::path dir = fresh_dir("mapeval");
  const CliRun r = cli({"run", "map-eval", "--preset", "fig1-gaussians", "--n", "32", "--k-rule", "2", "--n-eval", "10",
                        "--seed", "4", "--dump-potentials", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "map_eval_points.csv")), 11u);
  EXPECT_TRUE(fs::exists(dir / "potentials_eps1.csv"));
  EXPECT_TRUE(fs::exists(dir / "residuals_eps1.csv"));
  EXPECT_EQ(cli({"run", "map-eval", "--preset", "fig1-gaussians", "--n", "33", "--k-rule", "2", "--seed", "4", "--out",
                 dir.string()})
                .code,
            kExitConfigError);
}

#ifdef ENTMAP_CLI_PATH
TEST(Cli, BinaryExitCodes) {
  const std::string bin = ENTMAP_CLI_PATH;
  const fs::path dir = fresh_dir("binary");
  const auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("presets"), 0);
  EXPECT_EQ(status("run rate --preset fig1-gaussians --sweep 100 --k-rule 3 --seed 1 --out " + dir.string()), 2);
  EXPECT_EQ(status("run rate --preset fig1-gaussians --sweep 16 --reps 2 --n-eval 10 --seed 1 --out " + dir.string()), 0);
}
#endif

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const std::string kCli = IFL_CLI_PATH;
const std::string kScenarios = IFL_SCENARIO_DIR;

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "stdout.txt";
  const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2> '" + (dir / "stderr.txt").string() + "'";
  const int raw = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ifl-cli-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string cfg(const std::string& name) { return "--config '" + kScenarios + "/" + name + ".cfg'"; }

}  // namespace

TEST(Cli, RunWritesOutputsAndDiagnoseReadsThem) {
  const auto dir = fresh_dir("run");
  const auto r = cli("run " + cfg("example1-2p") + " --out '" + dir.string() + "'", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(dir / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  const auto d = cli("diagnose --trace '" + (dir / "trace.csv").string() + "'", dir);
  EXPECT_EQ(d.code, 0);
  EXPECT_TRUE(fs::exists(dir / "contraction.csv"));
  EXPECT_TRUE(fs::exists(dir / "payments.csv"));
  EXPECT_NE(d.out.find("\"payments_monotone_in_s\":true"), std::string::npos);
}

TEST(Cli, CertifyExitCodes) {
  const auto dir = fresh_dir("certify");
  EXPECT_EQ(cli("certify " + cfg("example1-upbred") + " --w 0.5,1.5 --s 0,5", dir).code, 0);
  EXPECT_EQ(cli("certify " + cfg("example1-upbred") + " --w 1,2 --s 5,5", dir).code, 3);
  EXPECT_EQ(cli("certify " + cfg("example1-upbred") + " --w 0.5,1.5 --s 0,5 --eps inf", dir).code, 1);
  EXPECT_EQ(cli("certify " + cfg("example1-upbred") + " --w 1,2", dir).code, 1);
}

TEST(Cli, ValidationFailuresExitOne) {
  const auto dir = fresh_dir("validation");
  EXPECT_EQ(cli("run --config '" + (dir / "missing.cfg").string() + "'", dir).code, 1);
  EXPECT_EQ(cli("run " + cfg("example1-2p") + " --set instance.beta=0.01", dir).code, 1);
  EXPECT_EQ(cli("run " + cfg("example1-2p") + " --set beta=1", dir).code, 1);
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
  EXPECT_EQ(cli("diagnose --trace '" + (dir / "missing.csv").string() + "'", dir).code, 2);
}

TEST(Cli, RuntimeErrorExitsTwo) {
  const auto dir = fresh_dir("runtime");
  // Starting both contributions at zero makes the accuracy denominator vanish.
  const auto r = cli("run " + cfg("example1-upbred") + " --set init.s0=0 --out '" + dir.string() + "'", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Cli, BoundsAndSweep) {
  const auto dir = fresh_dir("bounds");
  EXPECT_EQ(cli("bounds " + cfg("coupled-contraction") + " --out '" + dir.string() + "'", dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "bounds.json"));
  EXPECT_EQ(cli("bounds " + cfg("example1-2p") + " --set bounds.source=explicit", dir).code, 3);
  const auto s = cli("sweep " + cfg("quadratic5-2p") + " --axis beta --values 0.6,1 --replicates 2 --set run.T=30 --out '" +
                         dir.string() + "'",
                     dir);
  EXPECT_EQ(s.code, 0);
  EXPECT_TRUE(fs::exists(dir / "sweep_beta.csv"));
  EXPECT_EQ(std::count(s.out.begin(), s.out.end(), '\n'), 5);
}

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "splatnet/splatnet.hpp"

using namespace splatnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr together
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run(const std::string& args) {
  const std::string cmd = quote(SPLATNET_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("splatnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
  }

  fs::path dir_;
};

PointCloud cube_cloud(std::size_t n, double side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, side);
  PointCloud c(n);
  for (const char* name : {"x", "y", "z"}) {
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    c.set_channel(name, std::move(v));
  }
  return c;
}

std::vector<std::size_t> values_of(const std::string& text, const std::string& key) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + ": ", 0) == 0) out.push_back(std::stoul(line.substr(key.size() + 2)));
  }
  return out;
}

const char* kToyConfig =
    "arch = B16-B16-B16-C16-C2\n"
    "lambda0 = 2\n"
    "learning_rate = 0.01\n"
    "max_iterations = 120\n"
    "seed = 3\n"
    "log_interval = 40\n"
    "data_dir = blobs\n"
    "output_dir = run\n";

}  // namespace

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("predict").code, 2);
}

TEST_F(Cli, MissingConfigIsUsageErrorNamingPath) {
  const auto r = run("train --config " + quote(path("absent.cfg")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("absent.cfg"), std::string::npos) << r.output;
}

TEST_F(Cli, NegativeLambdaNamesTheKey) {
  write("bad.cfg", "arch = B8-C2\nlambda0 = -1\ndata_dir = .\n");
  const auto r = run("train --config " + quote(path("bad.cfg")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("lambda0"), std::string::npos) << r.output;
}

TEST_F(Cli, BadArchIsConfigError) {
  write("bad.cfg", "arch = C8\nlambda0 = 1\ndata_dir = .\n");
  const auto r = run("train --config " + quote(path("bad.cfg")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("arch"), std::string::npos) << r.output;
}

TEST_F(Cli, TrainPredictEvalPipeline) {
  ASSERT_EQ(run("synth-blobs --out " + quote(path("blobs")) + " --clouds 12 --points 128 --seed 5").code, 0);
  write("toy.cfg", kToyConfig);
  const auto t = run("train --config " + quote(path("toy.cfg")));
  ASSERT_EQ(t.code, 0) << t.output;
  ASSERT_TRUE(fs::exists(path("run/model.ckpt")));

  const std::string metrics = slurp(path("run/metrics.csv"));
  EXPECT_EQ(metrics.rfind("iteration,loss,accuracy,wall_seconds\n", 0), 0u);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 121);

  const std::string cloud = path("blobs/blobs_0.ply");
  const std::string args = quote(cloud) + " --checkpoint " + quote(path("run/model.ckpt")) + " --out ";
  ASSERT_EQ(run("predict " + args + quote(path("a.ply"))).code, 0);
  ASSERT_EQ(run("predict " + args + quote(path("b.ply"))).code, 0);
  EXPECT_EQ(slurp(path("a.ply")), slurp(path("b.ply")));

  const PointCloud in = load_cloud(cloud);
  const PointCloud out = load_cloud(path("a.ply"));
  ASSERT_EQ(out.size(), in.size());
  EXPECT_EQ(out.channel_names(), in.channel_names());
  std::size_t right = 0;
  for (std::size_t i = 0; i < in.size(); ++i) right += out.labels()[i] == in.labels()[i];
  EXPECT_GE(static_cast<double>(right) / static_cast<double>(in.size()), 0.99);

  ASSERT_EQ(run("predict " + args + quote(path("p.xyz")) + " --probabilities").code, 0);
  const PointCloud probs = load_cloud(path("p.xyz"));
  ASSERT_TRUE(probs.has("prob_0") && probs.has("prob_1"));
  EXPECT_NEAR(probs.channel("prob_0")[0] + probs.channel("prob_1")[0], 1.0, 1e-12);

  const auto e = run("eval " + quote(path("a.ply")) + " " + quote(cloud));
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.output.find("average"), std::string::npos);
}

TEST_F(Cli, ResumeAppendsMetrics) {
  ASSERT_EQ(run("synth-blobs --out " + quote(path("blobs")) + " --clouds 4 --points 64").code, 0);
  write("a.cfg", "arch = B8-C2\nlambda0 = 2\nmax_iterations = 10\ndata_dir = blobs\noutput_dir = run\n");
  write("b.cfg", "arch = B8-C2\nlambda0 = 2\nmax_iterations = 15\ndata_dir = blobs\noutput_dir = run\n");
  ASSERT_EQ(run("train --config " + quote(path("a.cfg"))).code, 0);
  const auto r = run("train --config " + quote(path("b.cfg")) + " --checkpoint " + quote(path("run/model.ckpt")));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string metrics = slurp(path("run/metrics.csv"));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 16);
  EXPECT_EQ(metrics.find("iteration", 1), std::string::npos);
  EXPECT_NE(metrics.find("\n15,"), std::string::npos);
  EXPECT_EQ(load_checkpoint(path("run/model.ckpt")).optimizer->step, 15u);
}

TEST_F(Cli, TrainingIsReproducible) {
  ASSERT_EQ(run("synth-blobs --out " + quote(path("blobs")) + " --clouds 4 --points 64").code, 0);
  write("a.cfg", "arch = B8-B8-C8-C2\nlambda0 = 2\nmax_iterations = 8\nrotate = true\ndata_dir = blobs\n");
  ASSERT_EQ(run("train --config " + quote(path("a.cfg")) + " --seed 4 --out " + quote(path("one"))).code, 0);
  ASSERT_EQ(run("train --config " + quote(path("a.cfg")) + " --seed 4 --out " + quote(path("two"))).code, 0);
  ASSERT_EQ(run("train --config " + quote(path("a.cfg")) + " --seed 5 --out " + quote(path("three"))).code, 0);
  EXPECT_EQ(slurp(path("one/model.ckpt")), slurp(path("two/model.ckpt")));
  EXPECT_NE(slurp(path("one/model.ckpt")), slurp(path("three/model.ckpt")));
}

TEST_F(Cli, FlagOverridesConfig) {
  ASSERT_EQ(run("synth-blobs --out " + quote(path("blobs")) + " --clouds 2 --points 32").code, 0);
  write("a.cfg", "arch = B8-C2\nlambda0 = 2\nmax_iterations = 3\ndata_dir = blobs\noutput_dir = run\n");
  ASSERT_EQ(run("train --config " + quote(path("a.cfg")) + " --out " + quote(path("elsewhere"))).code, 0);
  EXPECT_TRUE(fs::exists(path("elsewhere/model.ckpt")));
  EXPECT_FALSE(fs::exists(path("run")));
}

TEST_F(Cli, PredictChannelMismatchIsConfigError) {
  ModelConfig cfg;
  cfg.arch = "B8-C2";
  cfg.lambda0 = LatticeConfig::isotropic(3, 1.0);
  cfg.feature_channels = {"xyz", "rgb"};
  save_checkpoint(path("m.ckpt"), make_checkpoint(Model::create(cfg, 1)));
  save_cloud(path("c.ply"), cube_cloud(20, 1.0, 1));
  const auto r = run("predict " + quote(path("c.ply")) + " --checkpoint " + quote(path("m.ckpt")) + " --out " +
                     quote(path("o.ply")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("red"), std::string::npos) << r.output;
}

TEST_F(Cli, EvalHandCaseAndIdentity) {
  write("gt.xyz", "# x y z label\n0 0 0 0\n1 0 0 0\n2 0 0 1\n3 0 0 1\n");
  write("pred.xyz", "# x y z label\n0 0 0 0\n1 0 0 1\n2 0 0 1\n3 0 0 1\n");
  const auto hand = run("eval " + quote(path("pred.xyz")) + " " + quote(path("gt.xyz")) + " --out " +
                        quote(path("r.csv")));
  EXPECT_EQ(hand.code, 0);
  EXPECT_NE(hand.output.find("0.5833"), std::string::npos) << hand.output;
  EXPECT_NE(slurp(path("r.csv")).find("average,0.583333"), std::string::npos);

  const auto same = run("eval " + quote(path("gt.xyz")) + " " + quote(path("gt.xyz")));
  EXPECT_EQ(same.code, 0);
  EXPECT_NE(same.output.find("average 1.0000"), std::string::npos) << same.output;
}

TEST_F(Cli, EvalCountMismatchNamesBothCounts) {
  write("gt.xyz", "# x y z label\n0 0 0 0\n1 0 0 0\n2 0 0 1\n");
  write("pred.xyz", "# x y z label\n0 0 0 0\n1 0 0 1\n");
  const auto r = run("eval " + quote(path("pred.xyz")) + " " + quote(path("gt.xyz")));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("2 predictions for 3"), std::string::npos) << r.output;
}

TEST_F(Cli, EvalShapeNetDirectories) {
  for (const char* root : {"pred", "gt"}) {
    fs::create_directories(dir_ / root / "mug");
    fs::create_directories(dir_ / root / "lamp");
  }
  write("gt/mug/a.xyz", "# x y z label\n0 0 0 0\n1 0 0 0\n2 0 0 1\n3 0 0 1\n");
  write("pred/mug/a.xyz", "# x y z label\n0 0 0 0\n1 0 0 1\n2 0 0 1\n3 0 0 1\n");
  write("gt/lamp/b.xyz", "# x y z label\n0 0 0 2\n1 0 0 3\n");
  write("pred/lamp/b.xyz", "# x y z label\n0 0 0 2\n1 0 0 3\n");
  const auto r = run("eval " + quote(path("pred")) + " " + quote(path("gt")) + " --mode shapenet_miou");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("mug              0.5833"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("class_average 0.7917"), std::string::npos) << r.output;
}

TEST_F(Cli, FilterKeepsConstantsAndZeroesFarPoints) {
  PointCloud src = cube_cloud(300, 2.0, 7);
  src.set_channel("value", std::vector<double>(src.size(), 3.25));
  save_cloud(path("src.ply"), src);
  ASSERT_EQ(run("filter " + quote(path("src.ply")) + " " + quote(path("src.ply")) + " --lambda 3 --out " +
                quote(path("o.ply"))).code, 0);
  const PointCloud out = load_cloud(path("o.ply"));
  ASSERT_EQ(out.size(), src.size());
  for (double v : out.channel("value")) EXPECT_NEAR(v, 3.25, 1e-6);

  PointCloud far = cube_cloud(50, 2.0, 8);
  for (double& x : far.channel("x")) x += 1000.0;
  save_cloud(path("far.ply"), far);
  ASSERT_EQ(run("filter " + quote(path("src.ply")) + " " + quote(path("far.ply")) + " --lambda 3 --out " +
                quote(path("f.ply"))).code, 0);
  const PointCloud zeros = load_cloud(path("f.ply"));
  for (double v : zeros.channel("value")) EXPECT_EQ(v, 0.0);
}

TEST_F(Cli, FilterResidualShrinksWithLambda) {
  PointCloud src = cube_cloud(400, 1.0, 11);
  std::vector<double> v(src.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::sin(6.0 * src.channel("x")[i]) + std::cos(4.0 * src.channel("y")[i]) + src.channel("z")[i];
  }
  src.set_channel("value", v);
  save_cloud(path("src.ply"), src);
  double previous = INFINITY;
  for (const char* lambda : {"1", "4", "16", "64"}) {
    ASSERT_EQ(run("filter " + quote(path("src.ply")) + " " + quote(path("src.ply")) + " --lambda " + lambda +
                  " --channels value --out " + quote(path("o.ply"))).code, 0);
    const PointCloud filtered = load_cloud(path("o.ply"));
    const auto out = filtered.channel("value");
    double residual = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) residual += std::abs(out[i] - v[i]);
    residual /= static_cast<double>(v.size());
    EXPECT_LT(residual, previous) << "lambda " << lambda;
    previous = residual;
  }
}

TEST_F(Cli, FilterChannelMismatchIsConfigError) {
  save_cloud(path("src.ply"), cube_cloud(10, 1.0, 1));
  const auto r = run("filter " + quote(path("src.ply")) + " " + quote(path("src.ply")) +
                     " --lambda 1 --channels value --out " + quote(path("o.ply")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("value"), std::string::npos) << r.output;
  EXPECT_EQ(run("filter " + quote(path("src.ply")) + " " + quote(path("src.ply")) + " --lambda 1,2 --out " +
                quote(path("o.ply"))).code, 2);
}

TEST_F(Cli, LatticeStats) {
  write("one.xyz", "# x y z\n0.3 1.7 -2.2\n");
  const auto one = run("lattice-stats " + quote(path("one.xyz")) + " --lambda 1,0.5");
  ASSERT_EQ(one.code, 0) << one.output;
  EXPECT_NE(one.output.find("n: 1\n"), std::string::npos);
  EXPECT_NE(one.output.find("d_l: 3\n"), std::string::npos);
  EXPECT_EQ(values_of(one.output, "V"), (std::vector<std::size_t>{4, 4}));

  save_cloud(path("c.ply"), cube_cloud(500, 10.0, 2));
  const auto many = run("lattice-stats " + quote(path("c.ply")) + " --lambda 8,4,2,1,0.5,0.25");
  ASSERT_EQ(many.code, 0);
  const auto v = values_of(many.output, "V");
  ASSERT_EQ(v.size(), 6u);
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i], v[i - 1]);
  EXPECT_NE(many.output.find("occupancy: "), std::string::npos);
  EXPECT_NE(many.output.find("adjacency_fill: "), std::string::npos);

  write("empty.xyz", "# x y z\n");
  EXPECT_NE(run("lattice-stats " + quote(path("empty.xyz")) + " --lambda 1").code, 0);
}

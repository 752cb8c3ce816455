#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "flashmix/geometry.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  Run r;
  FILE* p = popen((std::string(FLASHMIX_CLI) + " " + args + " 2>&1").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("train").code, 1);
  EXPECT_EQ(cli("--profile huge gen --out x").code, 1);
  EXPECT_EQ(cli("eval --dataset nowhere").code, 1);
}

TEST(Cli, MissingInputExitsTwo) {
  const auto dir = fmtest::scratch_dir("cli_missing");
  EXPECT_EQ(cli("train --buffer '" + (dir / "none.fmbf").string() + "'").code, 2);
}

TEST(Cli, PrintConfigReflectsProfile) {
  const auto r = cli("--profile tiny --print-config");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("m=64"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("l=32"), std::string::npos) << r.out;
}

TEST(Cli, GenTrainEvalPlot) {
  const auto dir = fmtest::scratch_dir("cli_flow");
  const std::string d = "'" + dir.string() + "/";
  const auto g = cli("--profile tiny gen --train-poses 80 --test-poses 12 --out " + d + "ds'");
  ASSERT_EQ(g.code, 0) << g.out;
  EXPECT_NE(g.out.find("train_scans=80"), std::string::npos);
  EXPECT_NE(g.out.find("test_scans=12"), std::string::npos);

  ASSERT_EQ(cli("--profile tiny encode --dataset " + d + "ds' --out " + d + "b.fmbf'").code, 0);
  const auto t = cli("--profile tiny train --epochs 1 --buffer " + d + "b.fmbf' --reg triplet --out " + d + "m.fmck'");
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(fs::exists(dir / "m.fmck.train.csv") || fs::exists(dir / "m.train.csv")) << t.out;

  const auto mismatch = cli("--profile tiny train --epochs 1 --voxel 0.3 --buffer " + d + "b.fmbf' --out " + d + "x.fmck'");
  EXPECT_EQ(mismatch.code, 2) << mismatch.out;

  const auto e = cli("--profile tiny eval --ckpt " + d + "m.fmck' --dataset " + d + "ds' --out " + d + "e.csv'");
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("scans=12"), std::string::npos);
  EXPECT_NE(e.out.find("reloc_rate_pct="), std::string::npos);
  EXPECT_NE(e.out.find("baseline_median_t_err_m="), std::string::npos);

  const auto o = cli("eval --oracle --dataset " + d + "ds' --out " + d + "o.csv'");
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("\nreloc_rate_pct=100\n"), std::string::npos) << o.out;

  const auto p = cli("plot --eval-csv " + d + "e.csv' --gt-poses " + d + "ds/test/poses.txt' --out " + d + "p.svg'");
  ASSERT_EQ(p.code, 0) << p.out;
  std::ifstream is(dir / "p.svg");
  std::stringstream ss;
  ss << is.rdbuf();
  EXPECT_EQ(count(ss.str(), "<circle"), 24U);
  EXPECT_EQ(count(ss.str(), "<polygon class=\"start\""), 1U);
}

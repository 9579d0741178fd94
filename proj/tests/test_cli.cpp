// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(AMFMN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kTinyModel =
    " --image-size 64 --channels 4,4,8,8,16 --visual-dim 16 --word-dim 8 --hidden 8 --joint-dim 6"
    " --low-channels 4 --high-channels 4 --info-channels 3";

}  // namespace

TEST(Cli, ParseErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("margins"), 2);  // --out missing
  EXPECT_EQ(run("margins --out x.csv --gamma abc"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, InputErrorsExitTwo) {
  testutil::TempDir dir("cli_errors");
  EXPECT_EQ(run("train --data " + dir.file("missing") + " --out " + dir.file("m.ckpt")), 2);
  {
    std::ofstream junk(dir.file("junk.ckpt"));
    junk << "not a checkpoint";
  }
  EXPECT_EQ(run("query --ckpt " + dir.file("junk.ckpt") + " --corpus " + dir.path().string() + " --text x"), 2);
  EXPECT_EQ(run("margins --out " + dir.file("m.csv") + " --gamma 1.5"), 2);
  EXPECT_EQ(run("margins --out " + dir.file("m.csv") + " --beta 0"), 2);
}

TEST(Cli, Margins) {
  testutil::TempDir dir("cli_margins");
  ASSERT_EQ(run("margins --gamma 0.5 --beta 4 --samples 3 --out " + dir.file("m.csv")), 0);
  const std::string text = slurp(dir.file("m.csv"));
  EXPECT_EQ(text.rfind("prior,margin\n0,0.5\n0.5,0.4403985389889412", 0), 0u) << text;
  EXPECT_NE(text.find("\n1,0\n"), std::string::npos) << text;
}

TEST(Cli, FixtureTrainEvalQueryLocate) {
  testutil::TempDir dir("cli_flow");
  const std::string data = dir.file("data"), ckpt = dir.file("m.ckpt");
  ASSERT_EQ(run("fixture --seed 3 --images 8 --planted --image-size 64 --out " + data + " --scene " +
                dir.file("scene.ppm")),
            0);
  ASSERT_EQ(run("train --data " + data + " --out " + ckpt + " --epochs 2 --batch 8 --lr 0.01 --split all" +
                kTinyModel),
            0);
  EXPECT_FALSE(slurp(ckpt + ".history.csv").empty());

  ASSERT_EQ(run("eval --data " + data + " --ckpt " + ckpt + " --report " + dir.file("r.json")), 0);
  const auto report = nlohmann::json::parse(slurp(dir.file("r.json")));
  EXPECT_EQ(report["split"], "all");
  EXPECT_EQ(report["images"], 8);
  EXPECT_GE(report["mR"].get<double>(), 0.0);
  EXPECT_FALSE(slurp(dir.file("r.json.csv")).empty());
  EXPECT_EQ(run("eval --data " + data + " --ckpt " + ckpt + " --report " + dir.file("r2.json") + " --variant sim"),
            2);
  EXPECT_EQ(run("eval --data " + data + " --ckpt " + ckpt + " --report " + dir.file("r3.json") + " --mode both"), 2);

  ASSERT_EQ(run("query --ckpt " + ckpt + " --corpus " + data + " --text 'a red tank' --keywords 'red tank,pond'" +
                " --topk 3 --out " + dir.file("q.json")),
            0);
  const auto q = nlohmann::json::parse(slurp(dir.file("q.json")));
  EXPECT_EQ(q["results"].size(), 3u);
  EXPECT_EQ(q["keywords"].size(), 2u);

  ASSERT_EQ(run("locate --ckpt " + ckpt + " --scene " + dir.file("scene.ppm") +
                " --query 'a red tank' --scales 64,128 --out " + dir.file("h.pgm")),
            0);
  EXPECT_FALSE(slurp(dir.file("h.pgm.json")).empty());
  EXPECT_EQ(run("locate --ckpt " + ckpt + " --scene " + dir.file("scene.ppm") +
                " --query x --scales 64,abc --out " + dir.file("h2.pgm")),
            2);
  EXPECT_EQ(run("locate --ckpt " + ckpt + " --scene " + dir.file("scene.ppm") + " --query x --median 4 --out " +
                dir.file("h3.pgm")),
            2);

  ASSERT_EQ(run("diagnose --data " + data + " --sample 10 --out " + dir.file("d.json")), 0);
  const auto d = nlohmann::json::parse(slurp(dir.file("d.json")));
  EXPECT_EQ(d["sampled_captions"], 10);
}

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "rssd/config.hpp"

using namespace rssd;
namespace fs = std::filesystem;

namespace {

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI; stderr is folded into the captured text.
Run cli(const std::string& args) {
  const std::string cmd = std::string(RSSD_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string cfg(const std::string& name) { return std::string(RSSD_SOURCE_DIR) + "/configs/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(ConfigTest, DefaultsAreTheToyLadder) {
  const auto rc = make_run_config({});
  EXPECT_EQ(rc.model.pyramid, PyramidConfig::toy96());
  EXPECT_EQ(rc.model.layout.boxes_per_position, std::vector<std::size_t>(5, 4));
  EXPECT_EQ(rc.data.image_size, 96u);
}

TEST(ConfigTest, CommentsLaterKeysAndPreset) {
  const auto kv = parse("# header\nfusion = conventional   # trailing\n\nsteps = 10\nsteps = 20\npreset = canonical300\n");
  const auto rc = make_run_config(kv);
  EXPECT_EQ(rc.model.fusion, FusionMode::Conventional);
  EXPECT_EQ(rc.train.steps, 20u);
  EXPECT_EQ(rc.model.pyramid, PyramidConfig::canonical300());
  EXPECT_EQ(rc.model.layout, BoxLayout::conventional());
  EXPECT_EQ(rc.data.image_size, 300u);
}

TEST(ConfigTest, StructuredValues) {
  const auto rc = make_run_config(parse(
      "input_size = 64\nlevels = 8x64, 4x64, 2x32\nstem_channels = 8,16,16\nchannel_scale = 1/2\n"
      "boxes = 6\nshared = yes\nmilestones = 5,9\nobjects = 2-4\nsize_weights = 0.5,0.5,0\n"
      "classes = ring,disc\nraw_precision = on\nprecision = double\n"));
  EXPECT_EQ(rc.model.pyramid.levels, (std::vector<LevelSpec>{{8, 64}, {4, 64}, {2, 32}}));
  EXPECT_EQ(rc.model.pyramid.channel_scale, (Rational{1, 2}));
  EXPECT_EQ(rc.model.layout, BoxLayout::shared(6, 3));
  EXPECT_EQ(rc.train.milestones, (std::vector<std::size_t>{5, 9}));
  EXPECT_EQ(rc.data.min_objects, 2u);
  EXPECT_EQ(rc.data.max_objects, 4u);
  EXPECT_EQ(rc.model.class_names, (std::vector<std::string>{"ring", "disc"}));
  EXPECT_TRUE(rc.eval.raw_precision);
  EXPECT_EQ(rc.precision, Precision::Double);
}

TEST(ConfigTest, IssdOverrides) {
  const auto rc = make_run_config(parse("preset = canonical300\nissd_channels = 0:256:1024, 3:128:512\n"));
  ASSERT_EQ(rc.model.pyramid.issd_channels.size(), 2u);
  EXPECT_EQ(rc.model.pyramid.level_channels(3), 512u);
  EXPECT_TRUE(make_run_config(parse("preset = canonical300_issd\nissd_channels = none\n")).model.pyramid.issd_channels.empty());
}

TEST(ConfigTest, ErrorsAreConfigErrors) {
  for (const char* text : {"bogus = 1\n", "steps = ten\n", "shared = maybe\n", "fusion = sideways\n",
                           "preset = vgg\n", "levels = 8-64\n", "boxes = 5\n", "size_weights = 1,0\n",
                           "fusion = conventional\nshared = true\n", "iou_threshold = 1\n", "just words\n",
                           "classes = hexagon\n", "precision = half\n", "top_k = 0\n"}) {
    EXPECT_THROW(make_run_config(parse(text)), ConfigError) << text;
  }
  EXPECT_THROW(read_key_values("/nonexistent/x.cfg"), ConfigError);
}

TEST(ConfigTest, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(std::string(RSSD_SOURCE_DIR) + "/configs")) {
    EXPECT_NO_THROW(make_run_config(read_key_values(entry.path().string()))) << entry.path();
  }
}

TEST(CliTest, BoxesTotalsMatchTheLibrary) {
  const std::vector<std::pair<std::string, std::size_t>> cases{
      {"canonical300.cfg", 8732}, {"canonical300_shared4.cfg", 7760}, {"canonical300_shared6.cfg", 11640}};
  for (const auto& [name, total] : cases) {
    const auto r = cli("boxes --json --config " + cfg(name));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("total").get<std::size_t>(), total);
    const auto rc = make_run_config(read_key_values(cfg(name)));
    EXPECT_EQ(j.at("total").get<std::size_t>(), count_boxes(rc.model.layout, rc.model.pyramid));
  }
  const auto text = cli("boxes --config " + cfg("canonical300.cfg") + " --fusion rainbow");
  EXPECT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("total 8732"), std::string::npos);
}

TEST(CliTest, RainbowShapesHave2816Channels) {
  const auto r = cli("shapes --json --config " + cfg("canonical300.cfg"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.at("rainbow").size(), 6u);
  for (const auto& row : j.at("rainbow")) EXPECT_EQ(row.at("c").get<std::size_t>(), 2816u);
}

TEST(CliTest, ErrorsHaveOnePrefixedLineAndExitCodes) {
  auto r = cli("boxes --no-such-key 3");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.out.rfind("error[config]: ", 0), 0u) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
  r = cli("boxes --config " + cfg("canonical300.cfg") + " --boxes 4,4");
  EXPECT_EQ(r.code, 2);
  r = cli("eval --data /nonexistent/rssd");
  EXPECT_EQ(r.code, 2);
  r = cli("eval --data /nonexistent/rssd --checkpoint /nonexistent/a.ckpt");
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.out.rfind("error[data]: ", 0), 0u) << r.out;
  r = cli("frobnicate");
  EXPECT_NE(r.code, 0);
  r = cli("train");
  EXPECT_EQ(r.code, 2);
}

TEST(CliTest, GenerateTrainEvaluateRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "rssd_cli_test";
  fs::remove_all(dir);
  const std::string d = dir.string();
  const std::string small = " --train-images 16 --test-images 8";
  ASSERT_EQ(cli("gen-data --out " + d + small).code, 0);
  EXPECT_TRUE(fs::exists(dir / "train" / "annotations.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "test" / "images.rt4"));
  const std::string sched = " --steps 3 --batch-size 4 --milestones 2";
  auto r = cli("train --data " + d + "/train --out " + d + "/a.ckpt --log " + d + "/a.csv" + sched);
  ASSERT_EQ(r.code, 0) << r.out;
  r = cli("train --data " + d + "/train --out " + d + "/b.ckpt --log " + d + "/b.csv" + sched);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));

  r = cli("eval --data " + d + "/test --checkpoint " + d + "/a.ckpt --detections-out " + d + "/dets.txt --pr-csv " +
          d + "/pr.csv --report " + d + "/report.txt --score-threshold 0.05");
  ASSERT_EQ(r.code, 0) << r.out;
  r = cli("eval --data " + d + "/test --detections " + d + "/dets.txt --report " + d +
          "/report2.txt --score-threshold 0.05");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir / "report.txt"), slurp(dir / "report2.txt"));
  EXPECT_NE(slurp(dir / "report.txt").find("score>0.050"), std::string::npos);
  r = cli("pr-export --data " + d + "/test --detections " + d + "/dets.txt --out " + d + "/pr2.csv");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir / "pr.csv"), slurp(dir / "pr2.csv"));

  // a model trained on different classes does not fit this dataset
  r = cli("gen-data --out " + d + "/other --classes disc,ring" + small);
  ASSERT_EQ(r.code, 0) << r.out;
  r = cli("eval --data " + d + "/other/test --checkpoint " + d + "/a.ckpt");
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_EQ(r.out.rfind("error[validation]: ", 0), 0u) << r.out;
  fs::remove_all(dir);
}

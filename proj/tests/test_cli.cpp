#include "geoprompt/cli.hpp"
#include "geoprompt/config_json.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace geoprompt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("geoprompt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_json(const fs::path& path, const Json& j) {
  std::ofstream(path) << j.dump();
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough that a few epochs take well under a second.
Json tiny_config() {
  return Json::parse(R"({
    "model": {
      "backbone": {"dim": 16, "depth": 2, "heads": 2, "mlp_ratio": 2, "n_patches": 8, "patch_size": 8,
                   "embed_hidden": 16, "pos_hidden": 16},
      "prompter": {"centers": [16, 4], "neighbors": [8, 4], "widths": [8, 4], "head_hidden": 8},
      "point_prompt": {"count": 6},
      "prompt_tokens": {"count": 2},
      "propagation": {"neighbors": 3}
    },
    "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 0, "lr": 0.002},
    "data": {"per_class": 4, "points": 64, "clutter_points": 8},
    "gradcheck": {"samples": 1, "max_coords": 6}
  })");
}

Json error_of(const Result& r) {
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  return Json::parse(r.err);
}

std::vector<std::string> keys(const Json& j, const std::string& at = "") {
  std::vector<std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    out.push_back(at + "/" + it.key());
    if (it->is_object()) {
      for (auto& k : keys(*it, at + "/" + it.key())) out.push_back(k);
    }
  }
  return out;
}

std::vector<std::string> schema_keys(const Json& s, const std::string& at = "") {
  std::vector<std::string> out;
  for (auto it = s.at("properties").begin(); it != s.at("properties").end(); ++it) {
    out.push_back(at + "/" + it.key());
    if (it->contains("properties")) {
      for (auto& k : schema_keys(*it, at + "/" + it.key())) out.push_back(k);
    }
  }
  return out;
}

}  // namespace

TEST(Cli, UsageErrorsExit64) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  const auto r = run({"pretrain", "--out", "x"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_EQ(error_of(r).at("error"), "usage");
}

TEST(Cli, InvalidConfigExits2WithPointer) {
  const auto dir = scratch("badcfg");
  Json cfg = tiny_config();
  cfg["train"]["lr"] = -1.0;
  auto r = run({"pretrain", "--config", write_json(dir / "a.json", cfg), "--out", (dir / "x.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_EQ(error_of(r).at("pointer"), "/train/lr");

  cfg = tiny_config();
  cfg["model"]["propagation"]["k_nearest"] = 3;
  r = run({"pretrain", "--config", write_json(dir / "b.json", cfg), "--out", (dir / "x.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_EQ(error_of(r).at("pointer"), "/model/propagation/k_nearest");

  std::ofstream(dir / "c.json") << "{ not json";
  r = run({"gradcheck", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_FALSE(fs::exists(dir / "x.ckpt"));
}

TEST(Cli, MissingFilesExit3) {
  const auto dir = scratch("missing");
  auto r = run({"pretrain", "--config", (dir / "nope.json").string(), "--out", (dir / "x.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitMissingFile);
  EXPECT_EQ(error_of(r).at("path"), (dir / "nope.json").string());

  r = run({"adapt", "--config", write_json(dir / "a.json", tiny_config()), "--backbone",
           (dir / "none.ckpt").string(), "--out", (dir / "y.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitMissingFile);
  r = run({"eval", "--ckpt", (dir / "none.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitMissingFile);
}

TEST(Cli, SchemaCoversEveryConfigField) {
  const Json schema = read_json_file(GEOPROMPT_SOURCE_DIR "/docs/config.schema.json");
  const Json defaults = to_json(RunConfig{});
  EXPECT_EQ(schema_keys(schema), keys(defaults));
  // The defaults the schema documents are the ones the parser applies.
  EXPECT_EQ(schema.at("properties").at("train").at("properties").at("lr").at("default"), defaults.at("train").at("lr"));
}

TEST(Cli, GenDataWritesManifestAndClouds) {
  const auto dir = scratch("gen");
  Json spec = tiny_config()["data"];
  spec["classes"] = {"sphere", "cube"};
  const auto r = run({"gen-data", "--spec", write_json(dir / "spec.json", spec), "--out", (dir / "ds").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json manifest = Json::parse(slurp(dir / "ds" / "manifest.json"));
  EXPECT_EQ(manifest.at("samples").size(), 8u);
  for (const auto& s : manifest.at("samples")) EXPECT_TRUE(fs::exists(dir / "ds" / s.at("file").get<std::string>()));

  spec["classes"] = {"dodecahedron"};
  EXPECT_EQ(run({"gen-data", "--spec", write_json(dir / "bad.json", spec), "--out", (dir / "ds2").string()}).code,
            cli::kExitConfig);
}

TEST(Cli, AdaptThenEvalReproducesLoggedMetrics) {
  const auto dir = scratch("pipeline");
  Json pre = tiny_config();
  pre["data"]["classes"] = {"sphere", "cube", "cylinder", "cone"};
  auto r = run({"pretrain", "--config", write_json(dir / "pre.json", pre), "--out", (dir / "bb.ckpt").string(),
                "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;

  const std::string cfg = write_json(dir / "adapt.json", tiny_config());
  const std::string ckpt = (dir / "ad.ckpt").string();
  r = run({"adapt", "--config", cfg, "--backbone", (dir / "bb.ckpt").string(), "--out", ckpt, "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json summary = Json::parse(r.out);
  EXPECT_TRUE(summary.at("frozen_intact").get<bool>());
  EXPECT_LE(summary.at("max_shift").get<double>(), 0.05);

  // The last metrics line is the final test evaluation.
  std::ifstream metrics(ckpt + ".metrics.jsonl");
  std::string line, last;
  while (std::getline(metrics, line)) last = line;
  const Json logged = Json::parse(last);
  ASSERT_EQ(logged.at("split"), "test");

  r = run({"eval", "--ckpt", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json ev = Json::parse(r.out);
  EXPECT_NEAR(ev.at("loss").get<double>(), logged.at("loss").get<double>(), 1e-12);
  EXPECT_NEAR(ev.at("accuracy").get<double>(), logged.at("accuracy").get<double>(), 1e-12);

  // Re-running from the echoed effective config gives the same metrics bytes.
  const std::string again = (dir / "again.ckpt").string();
  r = run({"adapt", "--config", ckpt + ".config.json", "--backbone", (dir / "bb.ckpt").string(), "--out", again,
           "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(again + ".metrics.jsonl"), slurp(ckpt + ".metrics.jsonl"));
  EXPECT_EQ(slurp(again), slurp(ckpt));

  r = run({"inspect", "--ckpt", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("trainable"), std::string::npos);
  std::ifstream csv(ckpt + ".attention.csv");
  std::getline(csv, line);
  EXPECT_EQ(line, "block,query,key,weight");
}

TEST(Cli, AdaptRejectsPretrainMode) {
  const auto dir = scratch("mode");
  Json cfg = tiny_config();
  cfg["train"]["mode"] = "pretrain";
  const auto r = run({"adapt", "--config", write_json(dir / "a.json", cfg), "--backbone", "unused", "--out",
                      (dir / "x.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_EQ(error_of(r).at("pointer"), "/train/mode");
}

TEST(Cli, UntrainedEvalIsNearChance) {
  const auto dir = scratch("chance");
  Json cfg = tiny_config();
  cfg["train"]["epochs"] = 0;
  cfg["data"]["per_class"] = 20;
  const std::string ckpt = (dir / "bb.ckpt").string();
  ASSERT_EQ(run({"pretrain", "--config", write_json(dir / "c.json", cfg), "--out", ckpt}).code, 0);
  const auto r = run({"eval", "--ckpt", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(Json::parse(r.out).at("accuracy").get<double>(), 0.25, 0.15);
}

TEST(Cli, GradcheckPassesOnTinyPipeline) {
  const auto dir = scratch("gradcheck");
  const auto r = run({"gradcheck", "--config", write_json(dir / "g.json", tiny_config())});
  ASSERT_EQ(r.code, 0) << r.err << r.out;
  const Json j = Json::parse(r.out);
  EXPECT_TRUE(j.at("pass").get<bool>());
  EXPECT_LE(j.at("max_relative_error").get<double>(), 1e-4);
  std::set<std::string> groups;
  for (auto it = j.at("groups").begin(); it != j.at("groups").end(); ++it) groups.insert(it.key());
  for (const char* g : {"shift_prompter", "point_prompt", "adapter", "prompt_tokens", "head"})
    EXPECT_TRUE(groups.count(g)) << g;
}

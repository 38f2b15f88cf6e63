// Copyright 2026 The SAGE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sage/pipeline.hpp"

using namespace sage;
namespace fs = std::filesystem;

namespace {

json tiny_doc() {
  return json{
      {"maze", "corridor"},
      {"data", {{"episodes", 10}}},
      {"jepa",
       {{"d_z", 8}, {"hidden", 16}, {"window", 6}, {"k_max", 2},
        {"k_per_batch", 1}, {"heads", 2}, {"steps", 40}, {"batch", 8},
        {"warmup", 4}}},
      {"acpred",
       {{"hidden", 16}, {"window", 5}, {"heads", 2}, {"rollout_h", 2},
        {"steps", 40}, {"batch", 8}, {"warmup", 4}}},
      {"planner",
       {{"horizon", 8}, {"t_train", 10}, {"ddim_steps", 4}, {"hidden", 16},
        {"heads", 2}, {"steps", 40}, {"batch", 8}, {"warmup", 4}}},
      {"invdyn", {{"hidden", 16}, {"steps", 60}}},
      {"critic", {{"hidden", 16}, {"steps", 60}}},
      {"gate", {{"prefix_k", 3}}},
      {"eval",
       {{"episodes", 2}, {"candidates", 6}, {"stress_episodes", 2},
        {"stress_candidates", 8}, {"bootstrap_replicates", 200},
        {"ref_episodes", 20}}},
      {"diag", {{"splits", 2}, {"mlp_steps", 20}, {"corruption_episodes", 4}}},
      {"ablate",
       {{"episodes", 2}, {"k_values", {2.0, 3.0}}, {"keep_values", {1.0}},
        {"lambda_values", {0.0, 0.1}}}},
      {"overhead", {{"warmup", 2}, {"measure", 5}, {"candidates", 6}}}};
}

}  // namespace

TEST_CASE("config: defaults, round trip and hashing") {
  ExperimentConfig def;
  json doc = def.to_json();
  ExperimentConfig back = ExperimentConfig::from_json(doc);
  REQUIRE(back.to_json() == doc);
  REQUIRE(back.hash() == def.hash());

  ExperimentConfig other = ExperimentConfig::from_json(
      json{{"jepa", {{"steps", 123}}}});
  REQUIRE(other.jepa.steps == 123);
  REQUIRE(other.hash() != def.hash());
}

TEST_CASE("config: unknown keys and wrong types are rejected") {
  REQUIRE_THROWS_AS(ExperimentConfig::from_json(json{{"nope", 1}}),
                    ConfigError);
  REQUIRE_THROWS_AS(
      ExperimentConfig::from_json(json{{"jepa", {{"stepz", 10}}}}),
      ConfigError);
  REQUIRE_THROWS_AS(
      ExperimentConfig::from_json(json{{"jepa", {{"steps", "ten"}}}}),
      ConfigError);
  REQUIRE_THROWS_AS(
      ExperimentConfig::from_json(json{{"maze", 4}}), ConfigError);
}

TEST_CASE("config: file loading with --set overrides") {
  fs::path dir = fs::temp_directory_path() / "sage_cfg_test";
  fs::create_directories(dir);
  write_text_file(dir / "c.json", tiny_doc().dump());
  ExperimentConfig cfg = load_config((dir / "c.json").string(),
                                     {"jepa.steps=99", "maze=umaze",
                                      "ablate.k_values=[1,2,3]"});
  REQUIRE(cfg.jepa.steps == 99);
  REQUIRE(cfg.maze == "umaze");
  REQUIRE(cfg.ablate.k_values == std::vector<double>{1, 2, 3});
  REQUIRE_THROWS_AS(load_config("", {"jepa.nope=3"}), ConfigError);
  REQUIRE_THROWS_AS(load_config("", {"badform"}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: stages run, skip when up-to-date, refuse bad inputs") {
  fs::path dir = fs::temp_directory_path() / "sage_pipe_test";
  fs::remove_all(dir);
  ExperimentConfig cfg = ExperimentConfig::from_json(tiny_doc());
  Pipeline pipe(cfg, dir);

  SECTION("missing upstream names the gap") {
    REQUIRE_THROWS_AS(pipe.run_stage("train-jepa"), ConfigError);
  }

  REQUIRE(pipe.run_stage("gen-data") == "run");
  REQUIRE(pipe.run_stage("gen-data") == "up-to-date");
  REQUIRE(pipe.run_stage("train-jepa") == "run");
  REQUIRE(pipe.run_stage("train-jepa") == "up-to-date");

  SECTION("changed input forces a rerun") {
    // Regenerate the data under a different seed: hash changes.
    ExperimentConfig cfg2 = cfg;
    cfg2.seed = cfg.seed + 1;
    Pipeline pipe2(cfg2, dir);
    REQUIRE(pipe2.run_stage("gen-data") == "run");
    REQUIRE(pipe2.run_stage("train-jepa") == "run");
  }

  SECTION("corrupted checkpoint is refused") {
    REQUIRE(pipe.run_stage("train-ac") == "run");
    {
      std::ofstream f(dir / "jepa.ckpt", std::ios::binary);
      f << "SAGE-WRONG0\njunk";
    }
    REQUIRE_THROWS_AS(pipe.run_stage("train-ac", /*force=*/true), IoError);
  }

  SECTION("unknown stage rejected") {
    REQUIRE_THROWS_AS(pipe.run_stage("fold-laundry"), ConfigError);
  }
  fs::remove_all(dir);
}

TEST_CASE("pipeline: full run emits tables, figures and manifests") {
  fs::path dir = fs::temp_directory_path() / "sage_pipe_all";
  fs::remove_all(dir);
  ExperimentConfig cfg = ExperimentConfig::from_json(tiny_doc());
  Pipeline pipe(cfg, dir);
  pipe.run_all();

  for (const char* f :
       {"data.bin", "jepa.ckpt", "ac.ckpt", "planner.ckpt", "critic.ckpt",
        "invdyn.ckpt", "eval.json", "diag.json", "report.json", "report.csv",
        "significance.json", "overhead.json", "discrimination.csv",
        "energy_trace.svg", "bootstrap_violin.svg", "config.json"}) {
    INFO(f);
    REQUIRE(fs::exists(dir / f));
  }

  SECTION("report tables mirror the underlying JSON to full precision") {
    json eval = json::parse(read_text_file(dir / "eval.json"));
    std::string csv = read_text_file(dir / "report.csv");
    std::string expect =
        fmt_full(eval["standard"]["sage_success_rate"].get<double>());
    REQUIRE(csv.find(expect) != std::string::npos);
  }

  SECTION("figures are at least structurally sound SVG") {
    for (const char* f : {"energy_trace.svg", "bootstrap_violin.svg",
                          "overhead.svg", "ablate_K.svg"}) {
      std::string s = read_text_file(dir / f);
      REQUIRE(s.rfind("<?xml", 0) == 0);
      REQUIRE(s.find("<svg") != std::string::npos);
      REQUIRE(s.find("</svg>") != std::string::npos);
    }
  }

  SECTION("manifests carry config hash and artifact hashes") {
    json m = json::parse(read_text_file(dir / "manifest_train-jepa.json"));
    REQUIRE(m["config_hash"] == cfg.hash());
    REQUIRE(m["inputs"].contains("data.bin"));
    REQUIRE(m["outputs"].contains("jepa.ckpt"));
    REQUIRE(m["inputs"]["data.bin"].get<std::string>() ==
            file_hash(dir / "data.bin"));
  }

  SECTION("energy reports stream as JSON lines") {
    std::string lines = read_text_file(dir / "reports.jsonl");
    REQUIRE(!lines.empty());
    std::size_t nl = lines.find('\n');
    json first = json::parse(lines.substr(0, nl));
    REQUIRE(first.contains("energies"));
    REQUIRE(first.contains("kept"));
    REQUIRE(first.contains("selected"));
    REQUIRE(first.contains("baseline_selected"));
  }
  fs::remove_all(dir);
}

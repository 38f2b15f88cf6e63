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

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sage/pipeline.hpp"

namespace {

using namespace sage;

struct GlobalArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;
  bool force = false;
};

ExperimentConfig resolve_config(const GlobalArgs& g) {
  ExperimentConfig cfg = load_config(g.config_file, g.sets);
  if (g.seed_given) cfg.seed = g.seed;
  return cfg;
}

std::filesystem::path resolve_run_dir(const GlobalArgs& g,
                                      const ExperimentConfig& cfg) {
  if (!g.out_dir.empty()) return g.out_dir;
  const char* root = std::getenv("SAGE_OUT_ROOT");
  std::filesystem::path base = root != nullptr ? root : "runs";
  return base / ("seed" + std::to_string(cfg.seed));
}

void add_globals(CLI::App* cmd, GlobalArgs& g) {
  cmd->add_option("--config", g.config_file, "JSON config file");
  cmd->add_option("--set", g.sets, "key=value overrides (dotted paths)");
  cmd->add_option("--seed", g.seed, "global seed")
      ->each([&](const std::string&) { g.seed_given = true; });
  cmd->add_option("--out", g.out_dir,
                  "run directory (default $SAGE_OUT_ROOT/seed<k>)");
  cmd->add_flag("--force", g.force, "rerun even when up-to-date");
}

int run_stage_cmd(const GlobalArgs& g, const std::string& stage) {
  ExperimentConfig cfg = resolve_config(g);
  Pipeline pipe(cfg, resolve_run_dir(g, cfg));
  std::string status = pipe.run_stage(stage, g.force);
  std::printf("%s: %s\n", stage.c_str(), status.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAGE maze pipeline: predictive-state representation training, "
               "action-conditioned energies and gated plan selection"};
  app.require_subcommand(1);

  GlobalArgs g;

  // --- gen-data (direct file mode or stage mode) ---------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate the offline dataset");
  add_globals(gen, g);
  std::string gen_maze;
  std::size_t gen_episodes = 0;
  double gen_noise = -1.0;
  std::string gen_out_file;
  gen->add_option("--maze", gen_maze, "maze name (corridor|umaze|rooms)");
  gen->add_option("--episodes", gen_episodes, "episode count");
  gen->add_option("--noise", gen_noise, "action noise level");
  gen->add_option("--out-file", gen_out_file,
                  "write the dataset to this file instead of the run dir");

  // --- training stages --------------------------------------------------------------
  for (const char* name : {"train-jepa", "train-ac", "train-planner",
                           "train-critic", "train-invdyn", "diagnose",
                           "ablate", "overhead", "significance", "report"}) {
    auto* cmd = app.add_subcommand(name, std::string("run the ") + name +
                                             " stage");
    add_globals(cmd, g);
  }

  // --- sample-pool ---------------------------------------------------------------------
  auto* pool = app.add_subcommand("sample-pool",
                                  "dump a candidate pool at a sampled state");
  add_globals(pool, g);
  std::string pool_generator = "replay";
  std::size_t pool_count = 50;
  std::string pool_out = "pool.bin";
  std::uint64_t pool_state_seed = 1;
  pool->add_option("--generator", pool_generator, "replay|diffusion");
  pool->add_option("--count", pool_count, "candidates");
  pool->add_option("--pool-out", pool_out, "output file");
  pool->add_option("--state-seed", pool_state_seed, "start-state seed");

  // --- evaluate ---------------------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "evaluate", "run gated episodes (stage mode unless flags are given)");
  add_globals(eval, g);
  std::string ev_gate;
  std::size_t ev_k = 0, ev_candidates = 0, ev_episodes = 0;
  double ev_keep = -1.0, ev_lambda = -1.0, ev_noise = -1.0;
  std::string ev_generator, ev_reports;
  eval->add_option("--gate", ev_gate, "on|off");
  eval->add_option("--K", ev_k, "prefix length");
  eval->add_option("--keep", ev_keep, "keep rate in (0,1]");
  eval->add_option("--lambda", ev_lambda, "energy penalty weight");
  eval->add_option("--candidates", ev_candidates, "candidate count C");
  eval->add_option("--episodes", ev_episodes, "episode count");
  eval->add_option("--generator", ev_generator, "diffusion|replay");
  eval->add_option("--noise", ev_noise, "replay state noise");
  eval->add_option("--reports", ev_reports, "energy report JSONL output");

  // --- pipeline -----------------------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "run stages with manifests");
  add_globals(pipe_cmd, g);
  bool pipe_all = false;
  std::string pipe_stage;
  pipe_cmd->add_flag("--all", pipe_all, "run every stage in dependency order");
  pipe_cmd->add_option("--stage", pipe_stage, "run one named stage");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = resolve_config(g);
      if (!gen_maze.empty()) cfg.maze = gen_maze;
      if (gen_episodes > 0) cfg.data.episodes = gen_episodes;
      if (gen_noise >= 0.0) cfg.data.noise = gen_noise;
      if (!gen_out_file.empty()) {
        OfflineDataset ds = generate_dataset(make_maze(cfg.maze),
                                             cfg.gen_config(), cfg.seed);
        save_dataset(gen_out_file, ds);
        std::printf("gen-data: wrote %zu episodes (%zu transitions) to %s\n",
                    ds.trajectories.size(), ds.total_transitions(),
                    gen_out_file.c_str());
        return 0;
      }
      Pipeline pipe(cfg, resolve_run_dir(g, cfg));
      std::printf("gen-data: %s\n", pipe.run_stage("gen-data", g.force).c_str());
      return 0;
    }

    for (const char* name : {"train-jepa", "train-ac", "train-planner",
                             "train-critic", "train-invdyn", "diagnose",
                             "ablate", "overhead", "significance", "report"}) {
      if (app.get_subcommand(name)->parsed()) return run_stage_cmd(g, name);
    }

    if (pool->parsed()) {
      ExperimentConfig cfg = resolve_config(g);
      Pipeline pipe(cfg, resolve_run_dir(g, cfg));
      OfflineDataset ds = pipe.load_data();
      JepaModel jepa = pipe.load_jepa();
      AcModel ac = pipe.load_ac();
      InvDynModel invdyn = pipe.load_invdyn();
      CriticModel critic = pipe.load_critic();
      EnergyModel em(jepa, ac, ds.mu_s, ds.sigma_s);
      MazeSpec maze = make_maze(cfg.maze);
      RngStream rng(pool_state_seed);
      RngStream srng = rng.derive("start");
      Vec4 s_raw = sample_start(maze, srng);
      Vec4 s_norm = ds.normalize(s_raw);
      std::vector<CandidatePlan> plans;
      if (pool_generator == "diffusion") {
        PlannerModel planner = pipe.load_planner();
        plans = ddim_sample(planner, s_norm, pool_count,
                            cfg.planner.ddim_steps, rng.derive("ddim"));
      } else {
        ReplayGenerator replay(ds, cfg.planner.horizon);
        plans = replay.generate(s_norm, pool_count, cfg.eval.replay_noise,
                                rng.derive("replay"));
      }
      infer_actions(invdyn, plans, cfg.gate.prefix_k, rng.derive("invdyn"));
      critic_score(critic, plans);
      for (auto& p : plans) {
        p.energy = em.prefix_energy(p, cfg.gate.prefix_k).first;
      }
      save_pool(pool_out, s_norm, plans, pool_generator);
      std::printf("sample-pool: wrote %zu %s candidates to %s\n", plans.size(),
                  pool_generator.c_str(), pool_out.c_str());
      return 0;
    }

    if (eval->parsed()) {
      bool adhoc = !ev_gate.empty() || ev_k > 0 || ev_keep >= 0.0 ||
                   ev_lambda >= 0.0 || ev_candidates > 0 || ev_episodes > 0 ||
                   !ev_generator.empty() || ev_noise >= 0.0 ||
                   !ev_reports.empty();
      ExperimentConfig cfg = resolve_config(g);
      Pipeline pipe(cfg, resolve_run_dir(g, cfg));
      if (!adhoc) {
        std::printf("evaluate: %s\n", pipe.run_stage("evaluate", g.force).c_str());
        return 0;
      }
      OfflineDataset ds = pipe.load_data();
      JepaModel jepa = pipe.load_jepa();
      AcModel ac = pipe.load_ac();
      InvDynModel invdyn = pipe.load_invdyn();
      CriticModel critic = pipe.load_critic();
      PlannerModel planner;
      bool use_diffusion =
          (ev_generator.empty() ? cfg.eval.generator : ev_generator) ==
          "diffusion";
      if (use_diffusion) planner = pipe.load_planner();
      ReplayGenerator replay(ds, cfg.planner.horizon);
      ds.mu_z = jepa.mu_z;
      ds.sigma_z = jepa.sigma_z;
      EnergyModel em(jepa, ac, ds.mu_s, ds.sigma_s);
      DecisionMachinery mach;
      mach.ds = &ds;
      mach.planner = &planner;
      mach.replay = &replay;
      mach.invdyn = &invdyn;
      mach.critic = &critic;
      mach.energy = &em;

      EpisodeConfig ecfg;
      ecfg.gate_on = ev_gate.empty() ? true : ev_gate == "on";
      ecfg.candidates = ev_candidates > 0 ? ev_candidates : cfg.eval.candidates;
      ecfg.use_diffusion = use_diffusion;
      ecfg.replay_noise = ev_noise >= 0.0 ? ev_noise : cfg.eval.replay_noise;
      ecfg.ddim_steps = cfg.planner.ddim_steps;
      ecfg.gate = cfg.gate_config();
      if (ev_k > 0) ecfg.gate.prefix_k = ev_k;
      if (ev_keep >= 0.0) ecfg.gate.keep_rate = ev_keep;
      if (ev_lambda >= 0.0) ecfg.gate.lambda = ev_lambda;
      ecfg.keep_reports = !ev_reports.empty();
      std::size_t n_ep = ev_episodes > 0 ? ev_episodes : cfg.eval.episodes;
      MazeSpec maze = make_maze(cfg.maze);

      RngStream root(cfg.seed);
      RngStream erng = root.derive("evaluate-cli");
      double success = 0.0;
      std::string report_lines;
      for (std::size_t e = 0; e < n_ep; ++e) {
        EpisodeResult r = gated_episode(maze, mach, ecfg, erng.derive(e));
        success += r.episode_return;
        for (const auto& rep : r.reports) {
          json j = rep.to_json();
          j["episode"] = e;
          report_lines += j.dump() + "\n";
        }
      }
      if (!ev_reports.empty()) write_text_file(ev_reports, report_lines);
      std::printf("evaluate: gate=%s episodes=%zu candidates=%zu "
                  "success_rate=%.4f\n",
                  ecfg.gate_on ? "on" : "off", n_ep, ecfg.candidates,
                  success / static_cast<double>(n_ep));
      return 0;
    }

    if (pipe_cmd->parsed()) {
      ExperimentConfig cfg = resolve_config(g);
      Pipeline pipe(cfg, resolve_run_dir(g, cfg));
      if (pipe_all) {
        pipe.run_all(g.force, [](const std::string& stage,
                                 const std::string& status) {
          std::printf("%s: %s\n", stage.c_str(), status.c_str());
          std::fflush(stdout);
        });
        return 0;
      }
      if (pipe_stage.empty()) {
        std::fprintf(stderr, "pipeline: pass --all or --stage NAME\n");
        return 2;
      }
      std::printf("%s: %s\n", pipe_stage.c_str(),
                  pipe.run_stage(pipe_stage, g.force).c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

// Command-line entry point: gen, train, eval, gradcheck, predict, plot.
//
// Exit codes: 0 success, 1 gradcheck failure or unexpected error,
// 2 non-finite loss/gradient during training, 3 configuration or usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajgraft/checkpoint.hpp"
#include "trajgraft/config.hpp"
#include "trajgraft/dataset_io.hpp"
#include "trajgraft/gradcheck.hpp"
#include "trajgraft/plot.hpp"
#include "trajgraft/scene_synth.hpp"
#include "trajgraft/train.hpp"

namespace fs = std::filesystem;
using namespace trajgraft;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitNonFinite = 2;
constexpr int kExitConfig = 3;

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file of section.key=value lines");
    cmd->add_option("--set", overrides, "Override a config key, e.g. --set model.d_s=32 (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) apply_config_file(c, config_path);
    for (const auto& o : overrides) apply_override(c, o);
    validate(c);
    return c;
  }
};

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << text;
}

// Every output directory receives the resolved configuration.
void echo_config(const fs::path& dir, const RunConfig& cfg) { write_text(dir / "resolved_config.txt", to_config_text(cfg)); }

fs::path parent_or_cwd(const std::string& file) {
  const auto p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

Model load_model(const RunConfig& cfg, const std::string& checkpoint) {
  auto model = make_model(cfg.train.model, cfg.train.seed);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model.params);
  return model;
}

std::vector<Scene> load_split(const std::string& path, const std::string& split) {
  auto scenes = select_split(read_dataset(path), parse_split(split));
  if (scenes.empty()) throw ConfigError("no scenes in split '" + split + "' of '" + path + "'");
  return scenes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajgraft: synthetic multi-agent trajectory forecasting with caption guidance"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene dataset (JSON lines)");
  ConfigOptions gen_cfg;
  std::uint64_t gen_seed = 0;
  std::size_t gen_scenes = 32, gen_agents = 6;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--scenes", gen_scenes, "Number of scenes")->capture_default_str();
  gen->add_option("--agents", gen_agents, "Agents per scene (agent 0 is the ego vehicle)")->capture_default_str();
  gen->add_option("--out", gen_out, "Output .jsonl file")->required();
  gen_cfg.attach(gen);

  // train
  auto* trn = app.add_subcommand("train", "Train a model and write checkpoint + loss curve");
  ConfigOptions trn_cfg;
  std::string trn_data, trn_out, trn_split = "train";
  trn->add_option("--data", trn_data, "Dataset .jsonl")->required();
  trn->add_option("--out", trn_out, "Output directory")->required();
  trn->add_option("--split", trn_split, "Scenes to train on: train, val or all")->capture_default_str();
  trn_cfg.attach(trn);

  // eval
  auto* ev = app.add_subcommand("eval", "Compute ADE/FDE/MR for a checkpoint");
  ConfigOptions ev_cfg;
  std::string ev_data, ev_ckpt, ev_out, ev_split = "val";
  std::vector<std::size_t> ev_ks{1, 6, 10};
  ev->add_option("--data", ev_data, "Dataset .jsonl")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--k", ev_ks, "Mode counts to report")->capture_default_str();
  ev->add_option("--split", ev_split, "Scenes to evaluate: train, val or all")->capture_default_str();
  ev->add_option("--out", ev_out, "Output directory for metrics.csv (stdout only if omitted)");
  ev_cfg.attach(ev);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full loss on a tiny model");
  ConfigOptions gc_cfg;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  std::string gc_out;
  gc->add_option("--seed", gc_seed, "Scene seed")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();
  gc->add_option("--out", gc_out, "Output directory for gradcheck.csv");
  gc_cfg.attach(gc);

  // predict
  auto* pr = app.add_subcommand("predict", "Dump per-agent GMM predictions (JSON lines)");
  ConfigOptions pr_cfg;
  std::string pr_data, pr_ckpt, pr_out, pr_split = "all";
  pr->add_option("--data", pr_data, "Dataset .jsonl")->required();
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  pr->add_option("--out", pr_out, "Output .jsonl file")->required();
  pr->add_option("--split", pr_split, "Scenes to predict: train, val or all")->capture_default_str();
  pr_cfg.attach(pr);

  // plot
  auto* pl = app.add_subcommand("plot", "Render SVG plots of a loss curve or of predicted modes");
  std::string pl_pred, pl_curve, pl_out = ".";
  std::int64_t pl_scene = -1;
  std::size_t pl_agent = 0;
  pl->add_option("--predictions", pl_pred, "Predictions .jsonl from `predict`");
  pl->add_option("--scene", pl_scene, "Scene id to plot from the predictions file");
  pl->add_option("--agent", pl_agent, "Agent index within the scene")->capture_default_str();
  pl->add_option("--curve", pl_curve, "loss_curve.csv from `train`");
  pl->add_option("--out", pl_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitConfig;
  }

  try {
    if (*gen) {
      auto cfg = gen_cfg.resolve();
      if (gen_scenes == 0 || gen_agents == 0) throw ConfigError("--scenes and --agents must be >= 1");
      ensure_dir(fs::path(gen_out).parent_path());
      write_dataset(gen_out, generate_dataset(gen_seed, gen_scenes, gen_agents, cfg.synth));
      echo_config(parent_or_cwd(gen_out), cfg);
      std::cout << "wrote " << gen_scenes << " scenes to " << gen_out << "\n";
    } else if (*trn) {
      auto cfg = trn_cfg.resolve();
      const auto scenes = load_split(trn_data, trn_split);
      const fs::path out(trn_out);
      ensure_dir(out);
      echo_config(out, cfg);
      std::vector<CurveRow> curve;
      const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 10);
      try {
        auto res = train(scenes, cfg.train, [&](std::size_t step, const LossTerms& t) {
          curve.push_back({step, t.traj.item(), t.aux.item(), t.cl.item(), t.total.item()});
          if (step % every == 0 || step + 1 == cfg.train.steps)
            std::cout << "step " << step << " total " << t.total.item() << " traj " << t.traj.item() << " aux "
                      << t.aux.item() << " cl " << t.cl.item() << "\n";
        });
        write_checkpoint((out / "checkpoint.bin").string(), res.checkpoint);
      } catch (const TrainingAborted& e) {
        write_text(out / "loss_curve.csv", curve_csv(curve));
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitNonFinite;
      }
      write_text(out / "loss_curve.csv", curve_csv(curve));
      std::cout << "wrote " << (out / "checkpoint.bin").string() << " and " << (out / "loss_curve.csv").string() << "\n";
    } else if (*ev) {
      auto cfg = ev_cfg.resolve();
      const auto scenes = load_split(ev_data, ev_split);
      const auto model = load_model(cfg, ev_ckpt);
      const auto csv = metrics_csv(evaluate(model, scenes, ev_ks));
      std::cout << csv;
      if (!ev_out.empty()) {
        write_text(fs::path(ev_out) / "metrics.csv", csv);
        echo_config(ev_out, cfg);
      }
    } else if (*gc) {
      RunConfig base = gradcheck_config();
      RunConfig cfg = base;
      if (!gc_cfg.config_path.empty()) apply_config_file(cfg, gc_cfg.config_path);
      for (const auto& o : gc_cfg.overrides) apply_override(cfg, o);
      validate(cfg);
      GradcheckOptions opt;
      opt.tolerance = gc_tol;
      const auto rep = run_gradcheck(cfg, gc_seed, opt);
      std::ostringstream csv;
      csv.precision(17);
      csv << "param,numel,max_rel_err,max_abs_analytic,max_abs_numeric\n";
      for (const auto& p : rep.params)
        csv << p.name << ',' << p.numel << ',' << p.max_rel_err << ',' << p.max_abs_analytic << ',' << p.max_abs_numeric << '\n';
      if (!gc_out.empty()) {
        write_text(fs::path(gc_out) / "gradcheck.csv", csv.str());
        echo_config(gc_out, cfg);
      }
      std::cout << "checked " << rep.n_scalars << " scalars, loss " << rep.loss << "\n"
                << "max rel err " << rep.max_rel_err << " (" << rep.worst_param << "[" << rep.worst_index << "])\n"
                << "dL/db analytic " << rep.b_analytic << " numeric " << rep.b_numeric << "\n"
                << (rep.passed ? "PASS" : "FAIL") << " (tolerance " << gc_tol << ")\n";
      return rep.passed ? kExitOk : kExitFailure;
    } else if (*pr) {
      auto cfg = pr_cfg.resolve();
      const auto scenes = load_split(pr_data, pr_split);
      const auto model = load_model(cfg, pr_ckpt);
      std::vector<PredictedScene> out;
      for (const auto& s : scenes) out.push_back(predicted_scene(s, predict_scene(model, prepare_scene(model, s))));
      ensure_dir(fs::path(pr_out).parent_path());
      write_predictions(pr_out, out);
      echo_config(parent_or_cwd(pr_out), cfg);
      std::cout << "wrote predictions for " << out.size() << " scenes to " << pr_out << "\n";
    } else if (*pl) {
      if (pl_pred.empty() == pl_curve.empty()) throw ConfigError("plot needs exactly one of --predictions or --curve");
      const fs::path out(pl_out);
      ensure_dir(out);
      if (!pl_curve.empty()) {
        std::ifstream is(pl_curve);
        if (!is) throw ConfigError("cannot open '" + pl_curve + "'");
        std::string line;
        std::getline(is, line);
        if (line != "step,l_traj,l_aux,l_cl,total") throw ConfigError("'" + pl_curve + "' is not a loss curve");
        std::vector<CurveRow> rows;
        while (std::getline(is, line)) {
          CurveRow r;
          if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &r.step, &r.l_traj, &r.l_aux, &r.l_cl, &r.total) != 5)
            throw ConfigError("malformed loss curve row '" + line + "'");
          rows.push_back(r);
        }
        write_text(out / "loss_curve.svg", svg_loss_curve(rows));
        std::cout << "wrote " << (out / "loss_curve.svg").string() << "\n";
      } else {
        if (pl_scene < 0) throw ConfigError("plot --predictions needs --scene");
        for (const auto& s : read_predictions(pl_pred)) {
          if (s.scene_id != pl_scene) continue;
          const auto file = out / ("scene_" + std::to_string(pl_scene) + "_agent_" + std::to_string(pl_agent) + ".svg");
          write_text(file, svg_agent_modes(s, pl_agent));
          std::cout << "wrote " << file.string() << "\n";
          return kExitOk;
        }
        throw ConfigError("scene " + std::to_string(pl_scene) + " not found in '" + pl_pred + "'");
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const LookupError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

#pragma once

// Central-difference check of the full training objective against the
// analytic gradient, over every parameter scalar and the NLL bandwidth b.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "trajgraft/model.hpp"
#include "trajgraft/scene_synth.hpp"

namespace trajgraft {

struct GradcheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor). Gradients below the
  // floor are compared absolutely (tolerance * floor = 1e-8), well above the
  // central-difference roundoff eps*|L|/h for losses of order 1e2.
  double floor = 1e-4;
  std::size_t step = 0;  // selects the caption rotation
};

struct ParamGradcheck {
  std::string name;
  std::size_t numel = 0;
  double max_rel_err = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

struct GradcheckReport {
  std::vector<ParamGradcheck> params;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t n_scalars = 0;
  double loss = 0.0;
  double b_analytic = 0.0;
  double b_numeric = 0.0;
  double b_rel_err = 0.0;
  bool passed = false;
};

inline double gradcheck_rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Small model used by the gradient suite: d_s=8, 2 agents, 8x8 grid.
inline RunConfig gradcheck_config() {
  RunConfig c;
  auto& m = c.train.model;
  m.d_s = 8;
  m.d_pe = 4;
  m.d_interact = 8;
  m.hidden = 8;
  m.d_w = 8;
  m.d_v = 4;
  m.H = 2;
  m.O = 2;
  m.M = 3;
  m.T_f = 6;
  m.n_blocks = 2;
  c.synth.T_f = 6;
  c.synth.grid = 8;
  c.synth.extent = 40.0;
  // Keep the guidance term active with a two-agent scene: any caption pair
  // below the threshold becomes a negative.
  c.train.guidance.theta_th = 1.0;
  return c;
}

inline GradcheckReport gradcheck(Model& model, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                                 const GradcheckOptions& opt = {}) {
  const auto prepared = prepare_scenes(model, scenes);
  std::vector<const PreparedScene*> batch;
  for (const auto& p : prepared) batch.push_back(&p);

  auto b = Tensor::scalar(cfg.loss.b, true);
  auto loss_at = [&](double b_value) {
    const auto bv = Tensor::scalar(b_value);
    return compute_loss(model, batch, opt.step, cfg.loss, cfg.guidance, &bv).total.item();
  };

  model.params.zero_grad();
  auto terms = compute_loss(model, batch, opt.step, cfg.loss, cfg.guidance, &b);
  backward(terms.total);

  GradcheckReport rep;
  rep.loss = terms.total.item();
  const double base_b = cfg.loss.b;
  rep.b_analytic = b.grad()[0];
  rep.b_numeric = (loss_at(base_b + opt.h) - loss_at(base_b - opt.h)) / (2.0 * opt.h);
  rep.b_rel_err = gradcheck_rel_err(rep.b_analytic, rep.b_numeric, opt.floor);

  for (auto& [name, p] : model.params) {
    ParamGradcheck pc{name, p.numel(), 0.0, 0.0, 0.0};
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + opt.h;
      const double up = loss_at(base_b);
      w[i] = orig - opt.h;
      const double down = loss_at(base_b);
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double err = gradcheck_rel_err(analytic[i], numeric, opt.floor);
      pc.max_abs_analytic = std::max(pc.max_abs_analytic, std::abs(analytic[i]));
      pc.max_abs_numeric = std::max(pc.max_abs_numeric, std::abs(numeric));
      if (err > pc.max_rel_err) pc.max_rel_err = err;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = name;
        rep.worst_index = i;
      }
      ++rep.n_scalars;
    }
    rep.params.push_back(std::move(pc));
  }
  rep.passed = rep.max_rel_err < opt.tolerance && rep.b_rel_err < opt.tolerance;
  return rep;
}

// Builds the gradcheck model and scene from a run configuration and checks it.
inline GradcheckReport run_gradcheck(const RunConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt = {}) {
  validate(cfg);
  auto model = make_model(cfg.train.model, cfg.train.seed);
  std::vector<Scene> scenes{generate_scene(seed, 0, 2, cfg.synth)};
  return gradcheck(model, scenes, cfg.train, opt);
}

}  // namespace trajgraft

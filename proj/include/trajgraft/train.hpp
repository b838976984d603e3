#pragma once

// Training loop, evaluation and prediction extraction.

#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajgraft/checkpoint.hpp"
#include "trajgraft/config.hpp"
#include "trajgraft/metrics.hpp"
#include "trajgraft/model.hpp"
#include "trajgraft/optimizer.hpp"

namespace trajgraft {

enum class Split { all, train, val };

// Deterministic split: scene_id mod 5 == 0 goes to validation.
inline bool is_validation_scene(const Scene& s) { return ((s.scene_id % 5) + 5) % 5 == 0; }

inline Split parse_split(std::string_view s) {
  if (s == "all") return Split::all;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected all, train or val)");
}

inline std::vector<Scene> select_split(const std::vector<Scene>& scenes, Split split) {
  std::vector<Scene> out;
  for (const auto& s : scenes) {
    if (split == Split::all || (split == Split::val) == is_validation_scene(s)) out.push_back(s);
  }
  return out;
}

struct CurveRow {
  std::size_t step = 0;
  double l_traj = 0.0;
  double l_aux = 0.0;
  double l_cl = 0.0;
  double total = 0.0;
};

inline std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,l_traj,l_aux,l_cl,total\n";
  for (const auto& r : rows) os << r.step << ',' << r.l_traj << ',' << r.l_aux << ',' << r.l_cl << ',' << r.total << '\n';
  return os.str();
}

// Raised when a loss term or gradient turns non-finite.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, std::string term, const std::string& detail)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step) + ": " + detail),
        step_(step),
        term_(std::move(term)) {}
  std::size_t step() const { return step_; }
  const std::string& term() const { return term_; }

 private:
  std::size_t step_;
  std::string term_;
};

struct TrainResult {
  Model model;
  Checkpoint checkpoint;
  std::vector<CurveRow> curve;
};

using StepObserver = std::function<void(std::size_t step, const LossTerms& terms)>;

// Scene order for the step range: a seeded permutation per epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n_scenes, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x65706f6368ULL + epoch));
  for (std::size_t i = n_scenes; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline TrainResult train(const std::vector<Scene>& dataset, const TrainConfig& cfg, const StepObserver& observe = {}) {
  if (dataset.empty()) throw ConfigError("training needs a nonempty dataset");
  RunConfig probe;
  probe.train = cfg;
  validate(probe);
  TrainResult res;
  res.model = make_model(cfg.model, cfg.seed);
  Model& model = res.model;
  const auto prepared = prepare_scenes(model, dataset);
  Optimizer opt(cfg, model.params);
  std::vector<std::size_t> order;
  std::size_t cursor = 0, epoch = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<const PreparedScene*> batch;
    while (batch.size() < std::min(cfg.batch_scenes, prepared.size())) {
      if (cursor == order.size()) {
        order = epoch_order(prepared.size(), cfg.seed, epoch++);
        cursor = 0;
      }
      batch.push_back(&prepared[order[cursor++]]);
    }
    model.params.zero_grad();
    LossTerms terms;
    try {
      terms = compute_loss(model, batch, step, cfg.loss, cfg.guidance);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(step, "loss", e.what());
    }
    try {
      backward(terms.total);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(step, "gradient", e.what());
    }
    for (const auto& [name, p] : model.params) {
      for (double g : p.grad())
        if (!std::isfinite(g)) throw TrainingAborted(step, "gradient", "parameter " + name);
    }
    opt.step();
    res.curve.push_back({step, terms.traj.item(), terms.aux.item(), terms.cl.item(), terms.total.item()});
    if (observe) observe(step, terms);
  }
  res.checkpoint = snapshot(model.params);
  return res;
}

// Main-decoder predictions for every agent of a scene.
inline std::vector<GmmPrediction> predict_scene(const Model& model, const PreparedScene& s) {
  return to_predictions(forward(model, s).prediction, s.rotations);
}

inline MetricReport evaluate(const Model& model, const std::vector<Scene>& dataset, std::span<const std::size_t> ks) {
  for (auto k : ks)
    if (k == 0 || k > model.cfg.M) throw ConfigError("k=" + std::to_string(k) + " outside 1.." + std::to_string(model.cfg.M));
  std::vector<EvalSample> samples;
  for (const auto& scene : dataset) {
    const auto prepared = prepare_scene(model, scene);
    auto preds = predict_scene(model, prepared);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      samples.push_back({std::move(preds[i]), scene.agents[i].future, scene.agents[i].type});
    }
  }
  return evaluate_predictions(samples, ks);
}

// z_scene rows for every agent, scene order then agent order.
inline std::vector<std::vector<double>> scene_embeddings(const Model& model, const std::vector<Scene>& dataset) {
  std::vector<std::vector<double>> out;
  for (const auto& scene : dataset) {
    const auto prepared = prepare_scene(model, scene);
    const auto z = forward(model, prepared).z_scene;
    const std::size_t d = z.dim(1);
    for (std::size_t i = 0; i < z.dim(0); ++i) out.emplace_back(z.data().begin() + i * d, z.data().begin() + (i + 1) * d);
  }
  return out;
}

}  // namespace trajgraft

#pragma once

// Prediction dumps (JSON lines) and static SVG rendering of loss curves and
// per-agent mode fans.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "trajgraft/dataset_io.hpp"
#include "trajgraft/train.hpp"

namespace trajgraft {

struct PredictedAgent {
  AgentType type = AgentType::car;
  Maneuver maneuver = Maneuver::stationary;
  std::vector<Vec2> observed;
  std::vector<Vec2> future;
  std::vector<double> rho;             // [M]
  std::vector<std::vector<Vec2>> mu;   // [M][T_f], ego frame
  std::vector<std::vector<Vec2>> sigma;
};

struct PredictedScene {
  std::int64_t scene_id = 0;
  std::vector<PredictedAgent> agents;
};

inline PredictedScene predicted_scene(const Scene& scene, const std::vector<GmmPrediction>& preds) {
  if (preds.size() != scene.agents.size()) throw DimensionError("one prediction per agent required");
  PredictedScene out{scene.scene_id, {}};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& a = scene.agents[i];
    const auto& p = preds[i];
    PredictedAgent pa{a.type, a.maneuver, a.observed, a.future, p.rho, {}, {}};
    for (std::size_t m = 0; m < p.M; ++m) {
      pa.mu.emplace_back(p.mu.begin() + m * p.T_f, p.mu.begin() + (m + 1) * p.T_f);
      pa.sigma.emplace_back(p.sigma.begin() + m * p.T_f, p.sigma.begin() + (m + 1) * p.T_f);
    }
    out.agents.push_back(std::move(pa));
  }
  return out;
}

inline json predicted_scene_to_json(const PredictedScene& s) {
  json agents = json::array();
  for (const auto& a : s.agents) {
    json mu = json::array(), sigma = json::array();
    for (const auto& m : a.mu) mu.push_back(detail::points_to_json(m));
    for (const auto& m : a.sigma) sigma.push_back(detail::points_to_json(m));
    agents.push_back({{"type", std::string(to_string(a.type))},
                      {"maneuver", std::string(to_string(a.maneuver))},
                      {"observed", detail::points_to_json(a.observed)},
                      {"future", detail::points_to_json(a.future)},
                      {"prediction", {{"rho", a.rho}, {"mu", std::move(mu)}, {"sigma", std::move(sigma)}}}});
  }
  return {{"scene_id", s.scene_id}, {"agents", std::move(agents)}};
}

inline PredictedScene predicted_scene_from_json(const json& j) {
  PredictedScene s;
  s.scene_id = j.at("scene_id").get<std::int64_t>();
  for (const auto& ja : j.at("agents")) {
    PredictedAgent a;
    a.type = parse_agent_type(ja.at("type").get<std::string>());
    a.maneuver = parse_maneuver(ja.at("maneuver").get<std::string>());
    a.observed = detail::points_from_json(ja.at("observed"));
    a.future = detail::points_from_json(ja.at("future"));
    const auto& p = ja.at("prediction");
    a.rho = p.at("rho").get<std::vector<double>>();
    for (const auto& m : p.at("mu")) a.mu.push_back(detail::points_from_json(m));
    for (const auto& m : p.at("sigma")) a.sigma.push_back(detail::points_from_json(m));
    if (a.mu.size() != a.rho.size()) throw DimensionError("prediction mode count mismatch");
    s.agents.push_back(std::move(a));
  }
  return s;
}

inline void write_predictions(const std::string& path, const std::vector<PredictedScene>& scenes) {
  std::vector<json> lines;
  for (const auto& s : scenes) lines.push_back(predicted_scene_to_json(s));
  write_jsonl(path, lines);
}

inline std::vector<PredictedScene> read_predictions(const std::string& path) {
  std::vector<PredictedScene> out;
  for (const auto& j : read_jsonl(path)) {
    try {
      out.push_back(predicted_scene_from_json(j));
    } catch (const json::exception& e) {
      throw ConfigError("'" + path + "': bad prediction record: " + e.what());
    }
  }
  return out;
}

namespace detail {

// Maps data coordinates into an SVG viewport with a margin, y pointing up.
struct SvgFrame {
  double x0, x1, y0, y1;
  double width = 640, height = 480, margin = 40;

  double sx(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
  double sy(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }

  std::string path(const std::vector<Vec2>& pts) const {
    std::ostringstream os;
    os.precision(6);
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i == 0 ? 'M' : 'L') << sx(pts[i].x) << ',' << sy(pts[i].y) << ' ';
    return os.str();
  }
};

inline SvgFrame fit_frame(const std::vector<Vec2>& pts, bool equal_aspect) {
  SvgFrame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (auto p : pts) {
    f.x0 = std::min(f.x0, p.x);
    f.x1 = std::max(f.x1, p.x);
    f.y0 = std::min(f.y0, p.y);
    f.y1 = std::max(f.y1, p.y);
  }
  if (pts.empty()) f.x0 = f.y0 = 0, f.x1 = f.y1 = 1;
  auto widen = [](double& lo, double& hi) {
    if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  };
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  if (equal_aspect) {
    const double span = std::max(f.x1 - f.x0, f.y1 - f.y0);
    const double cx = 0.5 * (f.x0 + f.x1), cy = 0.5 * (f.y0 + f.y1);
    f.x0 = cx - span / 2, f.x1 = cx + span / 2, f.y0 = cy - span / 2, f.y1 = cy + span / 2;
    f.width = f.height = 560;
  }
  return f;
}

inline std::string svg_open(const SvgFrame& f) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" viewBox=\"0 0 " << f.width << ' ' << f.height << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << f.width << "\" height=\"" << f.height << "\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace detail

// Loss terms against step, log10 scale on y. Non-positive values are skipped.
inline std::string svg_loss_curve(const std::vector<CurveRow>& rows) {
  struct Series {
    const char* name;
    const char* color;
    double CurveRow::*field;
  };
  const Series series[] = {{"l_traj", "#1f77b4", &CurveRow::l_traj},
                           {"l_aux", "#ff7f0e", &CurveRow::l_aux},
                           {"l_cl", "#2ca02c", &CurveRow::l_cl},
                           {"total", "#222222", &CurveRow::total}};
  std::vector<std::vector<Vec2>> lines;
  std::vector<Vec2> all;
  for (const auto& s : series) {
    std::vector<Vec2> pts;
    for (const auto& r : rows)
      if (r.*s.field > 0) pts.push_back({static_cast<double>(r.step), std::log10(r.*s.field)});
    all.insert(all.end(), pts.begin(), pts.end());
    lines.push_back(std::move(pts));
  }
  const auto f = detail::fit_frame(all, false);
  std::ostringstream os;
  os << detail::svg_open(f);
  os << "<text x=\"" << f.margin << "\" y=\"20\" font-size=\"14\">loss (log10) vs step</text>\n";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << series[i].color << "\" stroke-width=\"1.5\" points=\"";
    for (auto p : lines[i]) os << f.sx(p.x) << ',' << f.sy(p.y) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << f.width - 110 << "\" y=\"" << 40 + 16 * i << "\" font-size=\"12\" fill=\"" << series[i].color
       << "\">" << series[i].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// One agent's mode fan: exactly M mode <path>s (opacity proportional to rho,
// the most probable mode fully opaque) plus the observed track and the ground
// truth future as two more <path>s. Other agents appear as circles only.
inline std::string svg_agent_modes(const PredictedScene& scene, std::size_t agent) {
  if (agent >= scene.agents.size())
    throw LookupError("scene " + std::to_string(scene.scene_id) + " has no agent " + std::to_string(agent));
  const auto& a = scene.agents[agent];
  std::vector<Vec2> all(a.observed);
  all.insert(all.end(), a.future.begin(), a.future.end());
  for (const auto& m : a.mu) all.insert(all.end(), m.begin(), m.end());
  const auto f = detail::fit_frame(all, true);
  const double rho_max = a.rho.empty() ? 1.0 : *std::max_element(a.rho.begin(), a.rho.end());
  std::ostringstream os;
  os << detail::svg_open(f);
  os << "<text x=\"" << f.margin << "\" y=\"20\" font-size=\"14\">scene " << scene.scene_id << ", agent " << agent << " ("
     << to_string(a.type) << ", " << to_string(a.maneuver) << ")</text>\n";
  for (std::size_t j = 0; j < scene.agents.size(); ++j) {
    if (j == agent || scene.agents[j].observed.empty()) continue;
    const auto p = scene.agents[j].observed.back();
    if (p.x < f.x0 || p.x > f.x1 || p.y < f.y0 || p.y > f.y1) continue;
    os << "<circle cx=\"" << f.sx(p.x) << "\" cy=\"" << f.sy(p.y) << "\" r=\"3\" fill=\"#999999\"/>\n";
  }
  for (std::size_t m = 0; m < a.mu.size(); ++m) {
    std::vector<Vec2> pts{a.observed.back()};
    pts.insert(pts.end(), a.mu[m].begin(), a.mu[m].end());
    os << "<path class=\"mode\" d=\"" << f.path(pts) << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" stroke-opacity=\""
       << (rho_max > 0 ? a.rho[m] / rho_max : 0.0) << "\"/>\n";
  }
  os << "<path class=\"observed\" d=\"" << f.path(a.observed) << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2.5\"/>\n";
  std::vector<Vec2> gt{a.observed.back()};
  gt.insert(gt.end(), a.future.begin(), a.future.end());
  os << "<path class=\"truth\" d=\"" << f.path(gt) << "\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2.5\" stroke-dasharray=\"6,4\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace trajgraft

#pragma once

// JSON-lines dataset files: one scene object per line. Doubles are written in
// shortest round-trip form, so read(write(x)) == x bit for bit.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajgraft/error.hpp"
#include "trajgraft/scene.hpp"

namespace trajgraft {

using json = nlohmann::json;

namespace detail {

inline json points_to_json(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (auto p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<Vec2> points_from_json(const json& j) {
  std::vector<Vec2> pts;
  for (const auto& p : j) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pts;
}

inline json grid_to_json(const Grid& g) { return {{"shape", {g.h, g.w, g.d}}, {"data", g.data}}; }

inline Grid grid_from_json(const json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw DimensionError("grid shape must have three entries");
  Grid g(shape[0], shape[1], shape[2]);
  g.data = j.at("data").get<std::vector<double>>();
  if (g.data.size() != g.h * g.w * g.d) throw DimensionError("grid data length does not match its shape");
  return g;
}

}  // namespace detail

inline json agent_to_json(const Agent& a) {
  return {{"type", std::string(to_string(a.type))},
          {"maneuver", std::string(to_string(a.maneuver))},
          {"heading", {a.heading.x, a.heading.y}},
          {"observed", detail::points_to_json(a.observed)},
          {"future", detail::points_to_json(a.future)},
          {"captions", a.captions}};
}

inline Agent agent_from_json(const json& j) {
  Agent a;
  a.type = parse_agent_type(j.at("type").get<std::string>());
  a.maneuver = parse_maneuver(j.at("maneuver").get<std::string>());
  a.heading = {j.at("heading").at(0).get<double>(), j.at("heading").at(1).get<double>()};
  a.observed = detail::points_from_json(j.at("observed"));
  a.future = detail::points_from_json(j.at("future"));
  const auto caps = j.at("captions").get<std::vector<std::string>>();
  if (caps.size() != 3) throw ContractError("each agent needs exactly three captions");
  std::copy(caps.begin(), caps.end(), a.captions.begin());
  return a;
}

inline json scene_to_json(const Scene& s) {
  json agents = json::array();
  for (const auto& a : s.agents) agents.push_back(agent_to_json(a));
  return {{"scene_id", s.scene_id},       {"ego_index", s.ego_index},
          {"grid_extent", s.grid_extent}, {"agents", std::move(agents)},
          {"bev_image", detail::grid_to_json(s.bev_image)},
          {"bev_map", detail::grid_to_json(s.bev_map)}};
}

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.scene_id = j.at("scene_id").get<std::int64_t>();
  s.ego_index = j.value("ego_index", std::size_t{0});
  s.grid_extent = j.at("grid_extent").get<double>();
  for (const auto& a : j.at("agents")) s.agents.push_back(agent_from_json(a));
  s.bev_image = detail::grid_from_json(j.at("bev_image"));
  s.bev_map = detail::grid_from_json(j.at("bev_map"));
  return s;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& lines) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  for (const auto& l : lines) os << l.dump() << '\n';
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  std::vector<json> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ConfigError("'" + path + "': malformed line " + std::to_string(out.size() + 1) + ": " + e.what());
    }
  }
  return out;
}

inline void write_dataset(const std::string& path, const std::vector<Scene>& scenes) {
  std::vector<json> lines;
  lines.reserve(scenes.size());
  for (const auto& s : scenes) lines.push_back(scene_to_json(s));
  write_jsonl(path, lines);
}

inline std::vector<Scene> read_dataset(const std::string& path) {
  std::vector<Scene> scenes;
  for (const auto& j : read_jsonl(path)) {
    try {
      scenes.push_back(scene_from_json(j));
    } catch (const json::exception& e) {
      throw ConfigError("'" + path + "': bad scene record: " + e.what());
    }
  }
  return scenes;
}

}  // namespace trajgraft

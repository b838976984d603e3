#pragma once

// Scene, agent and BEV grid types shared by every stage of the pipeline.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/tensor.hpp"

namespace trajgraft {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
// z-component of a x b; positive when b is counterclockwise from a.
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

enum class AgentType { car, pedestrian, cyclist, bus };
inline constexpr std::size_t kAgentTypeCount = 4;

enum class Maneuver { stationary, straight, turn_left, turn_right, lane_change_left, lane_change_right };
inline constexpr std::size_t kManeuverCount = 6;

inline constexpr std::array<std::string_view, kAgentTypeCount> kAgentTypeNames = {"car", "pedestrian", "cyclist", "bus"};
inline constexpr std::array<std::string_view, kManeuverCount> kManeuverNames = {
    "stationary", "straight", "turn_left", "turn_right", "lane_change_left", "lane_change_right"};

inline std::string_view to_string(AgentType t) { return kAgentTypeNames[static_cast<std::size_t>(t)]; }
inline std::string_view to_string(Maneuver m) { return kManeuverNames[static_cast<std::size_t>(m)]; }

inline AgentType parse_agent_type(std::string_view s) {
  for (std::size_t i = 0; i < kAgentTypeCount; ++i)
    if (kAgentTypeNames[i] == s) return static_cast<AgentType>(i);
  throw LookupError("unknown agent type '" + std::string(s) + "'");
}

inline Maneuver parse_maneuver(std::string_view s) {
  for (std::size_t i = 0; i < kManeuverCount; ++i)
    if (kManeuverNames[i] == s) return static_cast<Maneuver>(i);
  throw LookupError("unknown maneuver '" + std::string(s) + "'");
}

// h x w x d raster, row-major; row index is y, column index is x.
struct Grid {
  std::size_t h = 0, w = 0, d = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(std::size_t h_, std::size_t w_, std::size_t d_) : h(h_), w(w_), d(d_), data(h_ * w_ * d_, 0.0) {}

  double& at(std::size_t row, std::size_t col, std::size_t ch) { return data[(row * w + col) * d + ch]; }
  double at(std::size_t row, std::size_t col, std::size_t ch) const { return data[(row * w + col) * d + ch]; }

  Tensor to_tensor() const { return Tensor::from({h, w, d}, data); }
  bool operator==(const Grid&) const = default;
};

struct Agent {
  std::vector<Vec2> observed;  // T positions, ego frame, meters
  std::vector<Vec2> future;    // T_f positions
  AgentType type = AgentType::car;
  Vec2 heading{0.0, 1.0};  // unit heading at the current step
  Maneuver maneuver = Maneuver::straight;
  std::array<std::string, 3> captions;

  Vec2 current() const { return observed.back(); }
  bool operator==(const Agent&) const = default;
};

struct Scene {
  std::int64_t scene_id = 0;
  std::vector<Agent> agents;
  Grid bev_image;
  Grid bev_map;
  std::size_t ego_index = 0;
  double grid_extent = 0.0;  // meters covered per side

  bool operator==(const Scene&) const = default;
};

// Continuous grid coordinates (column, row) of an ego-frame point. The square
// [-extent/2, extent/2]^2 maps onto [0, w-1] x [0, h-1].
inline Vec2 ego_world_to_grid(Vec2 p, std::size_t h, std::size_t w, double extent) {
  if (extent <= 0.0) throw ContractError("grid extent must be positive");
  return {(p.x / extent + 0.5) * static_cast<double>(w - 1), (p.y / extent + 0.5) * static_cast<double>(h - 1)};
}

inline Vec2 ego_world_to_grid(Vec2 p, const Scene& scene) {
  return ego_world_to_grid(p, scene.bev_image.h, scene.bev_image.w, scene.grid_extent);
}

inline Vec2 grid_to_ego_world(Vec2 g, std::size_t h, std::size_t w, double extent) {
  return {(g.x / static_cast<double>(w - 1) - 0.5) * extent, (g.y / static_cast<double>(h - 1) - 0.5) * extent};
}

// B = [B_image ; B_map] along the channel axis.
inline Grid compose_bev(const Grid& image, const Grid& map) {
  if (image.h != map.h || image.w != map.w) {
    throw DimensionError("bev image " + std::to_string(image.h) + "x" + std::to_string(image.w) + " vs map " +
                         std::to_string(map.h) + "x" + std::to_string(map.w));
  }
  Grid out(image.h, image.w, image.d + map.d);
  for (std::size_t r = 0; r < image.h; ++r)
    for (std::size_t c = 0; c < image.w; ++c) {
      for (std::size_t k = 0; k < image.d; ++k) out.at(r, c, k) = image.at(r, c, k);
      for (std::size_t k = 0; k < map.d; ++k) out.at(r, c, image.d + k) = map.at(r, c, k);
    }
  return out;
}

inline Grid compose_bev(const Scene& scene) { return compose_bev(scene.bev_image, scene.bev_map); }

}  // namespace trajgraft

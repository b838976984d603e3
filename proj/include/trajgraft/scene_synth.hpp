#pragma once

// Deterministic synthetic driving scenes: kinematic tracks, rule-based
// maneuver labels, templated captions and BEV rasters that stand in for the
// camera and map encoders.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/random.hpp"
#include "trajgraft/scene.hpp"

namespace trajgraft {

struct ManeuverThresholds {
  double eps_stat = 0.5;         // meters of total displacement
  double theta_turn_deg = 30.0;  // signed heading change
  double d_lane = 2.5;           // meters of lateral offset
};

struct SynthConfig {
  std::size_t T = 4;
  std::size_t T_f = 12;
  double dt = 0.5;
  std::size_t grid = 48;    // h = w
  double extent = 120.0;    // meters per side
  double noise = 0.02;      // position noise stddev, meters
  double spawn_radius = 16.0;
  ManeuverThresholds thresholds;
};

// BEV image channels.
inline constexpr std::size_t kBevOccupancy = 0;
inline constexpr std::size_t kBevTrail = 1;
inline constexpr std::size_t kBevLeftSignal = 2;
inline constexpr std::size_t kBevRightSignal = 3;
inline constexpr std::size_t kBevBrake = 4;
inline constexpr std::size_t kBevImageChannels = 5;
// BEV map channels.
inline constexpr std::size_t kMapLanes = 0;
inline constexpr std::size_t kMapCrosswalk = 1;
inline constexpr std::size_t kBevMapChannels = 2;

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

struct Motion {
  Vec2 start;        // position at t = 0
  Vec2 heading{0, 1};  // unit heading during the observed window
  double speed = 1.0;  // m/s
  double dt = 1.0;
  Maneuver maneuver = Maneuver::straight;
  double turn_angle = std::numbers::pi / 2;  // total heading change for turns, radians
  double lane_offset = 3.5;                  // lateral meters for lane changes
};

// Positions at t = 1 .. T + T_f. The first T steps are straight along the
// heading; the maneuver unfolds over the last T_f steps.
inline std::vector<Vec2> kinematic_track(const Motion& m, std::size_t T, std::size_t T_f) {
  std::vector<Vec2> pts;
  pts.reserve(T + T_f);
  const double step = m.speed * m.dt;
  if (m.maneuver == Maneuver::stationary) {
    pts.assign(T + T_f, m.start);
    return pts;
  }
  Vec2 p = m.start;
  for (std::size_t t = 1; t <= T; ++t) {
    p = m.start + (step * static_cast<double>(t)) * m.heading;
    pts.push_back(p);
  }
  const Vec2 anchor = p;
  const Vec2 normal{-m.heading.y, m.heading.x};  // left of heading
  const double omega = m.turn_angle / static_cast<double>(T_f);
  for (std::size_t k = 1; k <= T_f; ++k) {
    switch (m.maneuver) {
      case Maneuver::turn_left:
      case Maneuver::turn_right: {
        const double sign = m.maneuver == Maneuver::turn_left ? 1.0 : -1.0;
        p = p + step * rotate(m.heading, sign * omega * (static_cast<double>(k) - 0.5));
        break;
      }
      case Maneuver::lane_change_left:
      case Maneuver::lane_change_right: {
        const double sign = m.maneuver == Maneuver::lane_change_left ? 1.0 : -1.0;
        const double s = static_cast<double>(k) / static_cast<double>(T_f);
        const double smooth = s * s * (3.0 - 2.0 * s);
        p = anchor + (step * static_cast<double>(k)) * m.heading + (sign * m.lane_offset * smooth) * normal;
        break;
      }
      default:
        p = anchor + (step * static_cast<double>(k)) * m.heading;
        break;
    }
    pts.push_back(p);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Rule-based maneuver labels
// ---------------------------------------------------------------------------

// Rules, in order: total displacement below eps_stat -> stationary; signed
// heading change (initial heading vs. final chord) beyond +-theta_turn ->
// turn; lateral offset of the end point beyond +-d_lane -> lane change;
// otherwise straight. Left is counterclockwise.
inline Maneuver classify_maneuver(std::span<const Vec2> track, Vec2 heading, const ManeuverThresholds& th = {}) {
  if (track.size() < 2) throw ContractError("classify_maneuver needs at least two points");
  const Vec2 first = track.front(), last = track.back();
  const Vec2 disp = last - first;
  if (norm(disp) < th.eps_stat) return Maneuver::stationary;
  const Vec2 chord = last - track[track.size() >= 3 ? track.size() - 3 : 0];
  double dtheta = 0.0;
  if (norm(chord) > 1e-9) dtheta = std::atan2(cross(heading, chord), dot(heading, chord));
  const double limit = th.theta_turn_deg * std::numbers::pi / 180.0;
  if (dtheta > limit) return Maneuver::turn_left;
  if (dtheta < -limit) return Maneuver::turn_right;
  const double lateral = cross(heading, disp) / std::max(norm(heading), 1e-12);
  if (lateral > th.d_lane) return Maneuver::lane_change_left;
  if (lateral < -th.d_lane) return Maneuver::lane_change_right;
  return Maneuver::straight;
}

inline Maneuver classify_maneuver(const Agent& agent, const ManeuverThresholds& th = {}) {
  std::vector<Vec2> track = agent.observed;
  track.insert(track.end(), agent.future.begin(), agent.future.end());
  return classify_maneuver(track, agent.heading, th);
}

// ---------------------------------------------------------------------------
// Captions
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<std::string_view, kManeuverCount> kCaptionCore = {
    "is waiting and standing still",    "is going straight ahead in its lane",
    "is turning left at the junction",  "is turning right at the junction",
    "is changing lanes to the left",    "is changing lanes to the right"};

inline constexpr std::array<std::array<std::string_view, 3>, kManeuverCount> kCaptionRationale = {{
    {"because the road ahead is blocked", "while it yields to crossing traffic", "until the signal turns green"},
    {"because the road ahead is clear", "keeping pace with the traffic flow", "with no obstacle on its path"},
    {"with its left indicator blinking", "to follow its planned route", "after yielding to oncoming traffic"},
    {"with its right indicator blinking", "to follow its planned route", "after checking for crossing pedestrians"},
    {"with its left indicator blinking", "to overtake a slower vehicle", "to prepare for the next exit"},
    {"with its right indicator blinking", "to let faster traffic pass", "to prepare for the next exit"},
}};

inline constexpr std::array<std::string_view, 3> kCaptionOpeners = {"the", "a", "this"};

}  // namespace detail

// Three distinct captions naming the agent type, its action and a rationale.
// Every (type, maneuver) pair draws from the same template pool.
inline std::array<std::string, 3> render_caption(AgentType type, Maneuver maneuver, Rng& rng) {
  const auto m = static_cast<std::size_t>(maneuver);
  std::array<std::size_t, 3> order{0, 1, 2};
  for (std::size_t i = 2; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::array<std::string, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto opener = detail::kCaptionOpeners[rng.below(detail::kCaptionOpeners.size())];
    out[i] = std::string(opener) + " " + std::string(to_string(type)) + " " + std::string(detail::kCaptionCore[m]) +
             " " + std::string(detail::kCaptionRationale[m][order[i]]);
  }
  return out;
}

inline std::array<std::string, 3> render_caption(const Agent& agent, std::uint64_t seed) {
  Rng rng(seed);
  return render_caption(agent.type, agent.maneuver, rng);
}

// ---------------------------------------------------------------------------
// BEV rasters
// ---------------------------------------------------------------------------

namespace detail {

// Adds amplitude * exp(-r^2 / 2 sigma^2) around a grid-space center, within 3 sigma.
inline void splat(Grid& g, std::size_t ch, Vec2 center, double sigma_cells, double amplitude) {
  const double reach = 3.0 * sigma_cells;
  const auto lo_c = static_cast<long>(std::floor(center.x - reach));
  const auto hi_c = static_cast<long>(std::ceil(center.x + reach));
  const auto lo_r = static_cast<long>(std::floor(center.y - reach));
  const auto hi_r = static_cast<long>(std::ceil(center.y + reach));
  for (long r = std::max(lo_r, 0L); r <= std::min(hi_r, static_cast<long>(g.h) - 1); ++r)
    for (long c = std::max(lo_c, 0L); c <= std::min(hi_c, static_cast<long>(g.w) - 1); ++c) {
      const double dx = static_cast<double>(c) - center.x, dy = static_cast<double>(r) - center.y;
      const double r2 = dx * dx + dy * dy;
      if (r2 > reach * reach) continue;
      g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch) += amplitude * std::exp(-r2 / (2 * sigma_cells * sigma_cells));
    }
}

}  // namespace detail

// Occupancy, trail and maneuver-signal channels. The signal channels carry
// the intent cue that the tracks alone do not reveal.
inline Grid rasterize_bev_image(const std::vector<Agent>& agents, std::size_t size, double extent) {
  Grid g(size, size, kBevImageChannels);
  for (const auto& a : agents) {
    const Vec2 now = ego_world_to_grid(a.current(), size, size, extent);
    detail::splat(g, kBevOccupancy, now, 1.0, 1.0);
    for (std::size_t t = 0; t + 1 < a.observed.size(); ++t) {
      detail::splat(g, kBevTrail, ego_world_to_grid(a.observed[t], size, size, extent), 1.0, 0.5);
    }
    switch (a.maneuver) {
      case Maneuver::turn_left: detail::splat(g, kBevLeftSignal, now, 1.5, 1.0); break;
      case Maneuver::lane_change_left: detail::splat(g, kBevLeftSignal, now, 1.5, 0.5); break;
      case Maneuver::turn_right: detail::splat(g, kBevRightSignal, now, 1.5, 1.0); break;
      case Maneuver::lane_change_right: detail::splat(g, kBevRightSignal, now, 1.5, 0.5); break;
      case Maneuver::stationary: detail::splat(g, kBevBrake, now, 1.5, 1.0); break;
      case Maneuver::straight: break;
    }
  }
  return g;
}

// Lane centerlines of a four-lane crossing plus crosswalk patches.
inline Grid rasterize_bev_map(std::size_t size, double extent, double road_shift) {
  Grid g(size, size, kBevMapChannels);
  constexpr std::array<double, 4> lanes = {-5.25, -1.75, 1.75, 5.25};
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const Vec2 p = grid_to_ego_world({static_cast<double>(c), static_cast<double>(r)}, size, size, extent);
      double best = 1e9;
      for (double lane : lanes) {
        best = std::min(best, std::abs(p.x - (lane + road_shift)));
        best = std::min(best, std::abs(p.y - (lane + road_shift)));
      }
      g.at(r, c, kMapLanes) = std::exp(-best * best / 2.0);
      const double ax = std::abs(p.x - road_shift), ay = std::abs(p.y - road_shift);
      const bool crosswalk = (ax <= 8.0 && ay >= 9.0 && ay <= 12.0) || (ay <= 8.0 && ax >= 9.0 && ax <= 12.0);
      g.at(r, c, kMapCrosswalk) = crosswalk ? 1.0 : 0.0;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace detail {

inline double speed_for(AgentType type, Rng& rng) {
  switch (type) {
    case AgentType::car: return rng.uniform(3.0, 6.0);
    case AgentType::bus: return rng.uniform(2.0, 5.0);
    case AgentType::cyclist: return rng.uniform(2.0, 4.0);
    case AgentType::pedestrian: return rng.uniform(0.8, 1.5);
  }
  return 1.0;
}

inline bool inside(const std::vector<Vec2>& pts, double half) {
  return std::all_of(pts.begin(), pts.end(), [half](Vec2 p) { return std::abs(p.x) <= half && std::abs(p.y) <= half; });
}

inline Agent make_agent(const SynthConfig& cfg, Rng& rng, bool ego) {
  const double cell = cfg.extent / static_cast<double>(cfg.grid - 1);
  const double half = cfg.extent / 2.0 - 2.0 * cell;
  for (int attempt = 0;; ++attempt) {
    Agent a;
    a.type = ego ? AgentType::car : static_cast<AgentType>(rng.below(kAgentTypeCount));
    a.maneuver = static_cast<Maneuver>(rng.below(kManeuverCount));
    if (attempt >= 64) a.maneuver = Maneuver::stationary;
    Motion m;
    m.dt = cfg.dt;
    m.maneuver = a.maneuver;
    m.speed = speed_for(a.type, rng);
    m.turn_angle = rng.uniform(60.0, 90.0) * std::numbers::pi / 180.0;
    m.lane_offset = rng.uniform(3.0, 4.0);
    if (ego) {
      m.heading = {0.0, 1.0};
    } else {
      const double base = static_cast<double>(rng.below(4)) * std::numbers::pi / 2.0;
      const double jitter = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
      m.heading = rotate({0.0, 1.0}, base + jitter);
    }
    const Vec2 now = ego ? Vec2{0.0, 0.0}
                         : Vec2{rng.uniform(-cfg.spawn_radius, cfg.spawn_radius),
                                rng.uniform(-cfg.spawn_radius, cfg.spawn_radius)};
    m.start = {0.0, 0.0};
    auto track = kinematic_track(m, cfg.T, cfg.T_f);
    const Vec2 shift = now - track[cfg.T - 1];
    for (auto& p : track) p = p + shift;
    for (std::size_t i = 0; i < track.size(); ++i) {
      if (ego && i == cfg.T - 1) continue;  // ego stays exactly at the origin now
      track[i] = track[i] + Vec2{rng.normal(0.0, cfg.noise), rng.normal(0.0, cfg.noise)};
    }
    if (!inside(track, half) && attempt < 64) continue;
    a.heading = m.heading;
    a.observed.assign(track.begin(), track.begin() + static_cast<std::ptrdiff_t>(cfg.T));
    a.future.assign(track.begin() + static_cast<std::ptrdiff_t>(cfg.T), track.end());
    a.captions = render_caption(a.type, a.maneuver, rng);
    return a;
  }
}

}  // namespace detail

inline Scene generate_scene(std::uint64_t seed, std::int64_t scene_id, std::size_t n_agents, const SynthConfig& cfg) {
  if (n_agents == 0) throw ConfigError("a scene needs at least one agent");
  if (cfg.T < 2 || cfg.T_f < 1) throw ConfigError("need T >= 2 and T_f >= 1");
  if (cfg.grid < 4) throw ConfigError("grid must be at least 4x4");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(scene_id)));
  Scene s;
  s.scene_id = scene_id;
  s.grid_extent = cfg.extent;
  s.ego_index = 0;
  for (std::size_t i = 0; i < n_agents; ++i) s.agents.push_back(detail::make_agent(cfg, rng, i == 0));
  s.bev_image = rasterize_bev_image(s.agents, cfg.grid, cfg.extent);
  s.bev_map = rasterize_bev_map(cfg.grid, cfg.extent, rng.uniform(-2.0, 2.0));
  return s;
}

// Scene ids 0..n_scenes-1, each from its own derived seed.
inline std::vector<Scene> generate_dataset(std::uint64_t seed, std::size_t n_scenes, std::size_t agents_per_scene,
                                           const SynthConfig& cfg = {}) {
  if (n_scenes == 0) throw ConfigError("need at least one scene");
  if (agents_per_scene == 0) throw ConfigError("need at least one agent per scene");
  std::vector<Scene> out;
  out.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) out.push_back(generate_scene(seed, static_cast<std::int64_t>(i), agents_per_scene, cfg));
  return out;
}

}  // namespace trajgraft

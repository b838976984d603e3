#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "trajgraft/dataset_io.hpp"
#include "trajgraft/scene_synth.hpp"
#include "trajgraft/text_guidance.hpp"

using namespace trajgraft;

namespace {

double jaccard(const std::string& a, const std::string& b) {
  const auto ta = tokenize(a), tb = tokenize(b);
  const std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

// Every caption the template pool can produce for (type, maneuver).
std::vector<std::string> caption_pool(AgentType type, Maneuver m) {
  std::set<std::string> pool;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    Rng rng(seed);
    for (auto& c : render_caption(type, m, rng)) pool.insert(c);
  }
  return {pool.begin(), pool.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// generate_dataset
// ---------------------------------------------------------------------------

TEST(GenerateDataset, SameSeedIsBitIdentical) {
  const auto a = generate_dataset(0, 5, 4);
  const auto b = generate_dataset(0, 5, 4);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(scene_to_json(a[i]).dump(), scene_to_json(b[i]).dump());
  EXPECT_NE(generate_dataset(1, 5, 4), a);
}

TEST(GenerateDataset, SceneOrderIndependent) {
  const auto all = generate_dataset(3, 6, 3);
  EXPECT_EQ(generate_scene(3, 4, 3, SynthConfig{}), all[4]);
}

TEST(GenerateDataset, ZeroCountsAreConfigErrors) {
  EXPECT_THROW(generate_dataset(0, 3, 0), ConfigError);
  EXPECT_THROW(generate_dataset(0, 0, 3), ConfigError);
}

TEST(GenerateDataset, StraightNoiselessTrackAdvancesOneMeterPerStep) {
  Motion m;
  m.start = {0, 0};
  m.heading = {0, 1};
  m.speed = 1.0;
  m.dt = 1.0;
  m.maneuver = Maneuver::straight;
  const std::size_t T = 4, T_f = 12;
  const auto track = kinematic_track(m, T, T_f);
  ASSERT_EQ(track.size(), T + T_f);
  for (std::size_t k = 0; k < T_f; ++k) {
    EXPECT_NEAR(track[T + k].x, 0.0, 1e-12);
    EXPECT_NEAR(track[T + k].y, static_cast<double>(T + 1 + k), 1e-12);
  }
}

TEST(GenerateDataset, SceneInvariants) {
  const SynthConfig cfg;
  const auto scenes = generate_dataset(7, 40, 6, cfg);
  std::set<Maneuver> seen;
  for (const auto& s : scenes) {
    ASSERT_EQ(s.agents.size(), 6u);
    EXPECT_EQ(s.ego_index, 0u);
    const auto& ego = s.agents[0];
    EXPECT_EQ(ego.current().x, 0.0);
    EXPECT_EQ(ego.current().y, 0.0);
    EXPECT_EQ(ego.heading.x, 0.0);
    EXPECT_EQ(ego.heading.y, 1.0);
    EXPECT_EQ(s.bev_image.h, cfg.grid);
    EXPECT_EQ(s.bev_image.d, kBevImageChannels);
    EXPECT_EQ(s.bev_map.d, kBevMapChannels);
    for (const auto& a : s.agents) {
      seen.insert(a.maneuver);
      EXPECT_EQ(a.observed.size(), cfg.T);
      EXPECT_EQ(a.future.size(), cfg.T_f);
      EXPECT_NEAR(norm(a.heading), 1.0, 1e-9);
      std::set<std::string> distinct(a.captions.begin(), a.captions.end());
      EXPECT_EQ(distinct.size(), 3u);
      // Every observed and future point lies in the clamp-free grid region.
      for (const auto* track : {&a.observed, &a.future})
        for (auto p : *track) {
          const auto g = ego_world_to_grid(p, s);
          EXPECT_GE(g.x, 0.0);
          EXPECT_GE(g.y, 0.0);
          EXPECT_LE(g.x, static_cast<double>(cfg.grid - 1));
          EXPECT_LE(g.y, static_cast<double>(cfg.grid - 1));
        }
    }
  }
  EXPECT_EQ(seen.size(), kManeuverCount);
}

TEST(GenerateDataset, LabelsMatchTheClassifier) {
  // Default noise (0.02 m) is far below the rule margins: the classifier must
  // recover the generator's intended label for every agent.
  std::size_t stationary = 0, total = 0;
  for (const auto& s : generate_dataset(11, 200, 6)) {
    for (const auto& a : s.agents) {
      EXPECT_EQ(classify_maneuver(a), a.maneuver) << "scene " << s.scene_id;
      stationary += a.maneuver == Maneuver::stationary;
      ++total;
    }
  }
  EXPECT_GT(stationary, 0u);
  EXPECT_EQ(total, 1200u);
}

TEST(GenerateDataset, SignalChannelsEncodeManeuver) {
  const auto s = generate_scene(2, 0, 1, SynthConfig{});
  const auto& a = s.agents[0];
  const auto g = ego_world_to_grid(a.current(), s);
  const auto r = static_cast<std::size_t>(std::lround(g.y)), c = static_cast<std::size_t>(std::lround(g.x));
  const double left = s.bev_image.at(r, c, kBevLeftSignal), right = s.bev_image.at(r, c, kBevRightSignal);
  const double brake = s.bev_image.at(r, c, kBevBrake);
  switch (a.maneuver) {
    case Maneuver::turn_left:
    case Maneuver::lane_change_left: EXPECT_GT(left, 0.0); EXPECT_EQ(right, 0.0); break;
    case Maneuver::turn_right:
    case Maneuver::lane_change_right: EXPECT_GT(right, 0.0); EXPECT_EQ(left, 0.0); break;
    case Maneuver::stationary: EXPECT_GT(brake, 0.0); break;
    case Maneuver::straight: EXPECT_EQ(left + right + brake, 0.0); break;
  }
  EXPECT_GT(s.bev_image.at(r, c, kBevOccupancy), 0.5);
}

// ---------------------------------------------------------------------------
// classify_maneuver
// ---------------------------------------------------------------------------

TEST(ClassifyManeuver, AllZeroDisplacementsAreStationary) {
  const std::vector<Vec2> track(16, Vec2{3, 4});
  EXPECT_EQ(classify_maneuver(track, {0, 1}), Maneuver::stationary);
}

TEST(ClassifyManeuver, CounterclockwiseSweepIsLeftTurn) {
  std::vector<Vec2> track{{0, 0}};
  Vec2 p{0, 0};
  for (int k = 1; k <= 16; ++k) {
    p = p + rotate({0, 1}, std::numbers::pi / 2 * (k - 0.5) / 16);
    track.push_back(p);
  }
  EXPECT_EQ(classify_maneuver(track, {0, 1}), Maneuver::turn_left);
  for (auto& q : track) q.x = -q.x;
  EXPECT_EQ(classify_maneuver(track, {0, 1}), Maneuver::turn_right);
}

TEST(ClassifyManeuver, LateralDriftWithParallelHeadingIsLaneChange) {
  // Heading +y; left is -x. Drift 4 m to the left and end parallel.
  std::vector<Vec2> track;
  for (int k = 0; k <= 16; ++k) {
    const double s = k / 16.0;
    track.push_back({-4.0 * s * s * (3 - 2 * s), 1.5 * k});
  }
  track.push_back(track.back() + Vec2{0, 1.5});
  track.push_back(track.back() + Vec2{0, 1.5});
  EXPECT_EQ(classify_maneuver(track, {0, 1}), Maneuver::lane_change_left);
  for (auto& q : track) q.x = -q.x;
  EXPECT_EQ(classify_maneuver(track, {0, 1}), Maneuver::lane_change_right);
}

TEST(ClassifyManeuver, TooShortTrackIsContractError) {
  const std::vector<Vec2> one{{0, 0}};
  EXPECT_THROW(classify_maneuver(one, {0, 1}), ContractError);
}

// Rule-table oracle: builds a track from (forward, lateral, final heading
// angle) and checks the label against an independent statement of the rules,
// at points straddling every threshold.
TEST(ClassifyManeuver, RuleTableAtThresholdBoundaries) {
  const ManeuverThresholds th;
  const double deg = std::numbers::pi / 180.0;
  auto make_track = [](double forward, double lateral_left, double final_angle) {
    // Straight leg along +y, ending with two chord steps at `final_angle`
    // (counterclockwise) so the end chord carries the final heading.
    std::vector<Vec2> t{{0, 0}};
    const Vec2 end_dir = rotate({0, 1}, final_angle);
    const Vec2 last = {-lateral_left, forward};
    const Vec2 before = last - 0.4 * end_dir;
    const Vec2 before2 = last - 0.8 * end_dir;
    t.push_back(0.5 * before2);
    t.push_back(before2);
    t.push_back(before);
    t.push_back(last);
    return t;
  };
  auto oracle = [&](double forward, double lateral_left, double final_angle) {
    if (std::hypot(forward, lateral_left) < th.eps_stat) return Maneuver::stationary;
    if (final_angle > th.theta_turn_deg * deg) return Maneuver::turn_left;
    if (final_angle < -th.theta_turn_deg * deg) return Maneuver::turn_right;
    if (lateral_left > th.d_lane) return Maneuver::lane_change_left;
    if (lateral_left < -th.d_lane) return Maneuver::lane_change_right;
    return Maneuver::straight;
  };
  const double eps = 1e-3;
  const std::vector<double> forwards{0.0, 0.3, th.eps_stat - eps, th.eps_stat + eps, 5.0, 20.0};
  const std::vector<double> laterals{-(th.d_lane + eps), -(th.d_lane - eps), 0.0, th.d_lane - eps, th.d_lane + eps};
  const std::vector<double> angles{-(th.theta_turn_deg + 0.1) * deg, -(th.theta_turn_deg - 0.1) * deg, 0.0,
                                   (th.theta_turn_deg - 0.1) * deg, (th.theta_turn_deg + 0.1) * deg};
  std::size_t checked = 0;
  for (double f : forwards)
    for (double l : laterals)
      for (double a : angles) {
        if (std::hypot(f, l) < 2.0 && std::hypot(f, l) >= th.eps_stat) continue;  // chord geometry degenerate
        const auto track = make_track(f, l, a);
        if (std::hypot(f, l) < th.eps_stat) {
          // Stationary decisions only depend on net displacement.
          std::vector<Vec2> still{{0, 0}, {-l * 0.5, f * 0.5}, {-l, f}};
          EXPECT_EQ(classify_maneuver(still, {0, 1}, th), Maneuver::stationary);
          ++checked;
          continue;
        }
        EXPECT_EQ(classify_maneuver(track, {0, 1}, th), oracle(f, l, a)) << "f=" << f << " l=" << l << " a=" << a / deg;
        ++checked;
      }
  EXPECT_GT(checked, 60u);
}

// ---------------------------------------------------------------------------
// render_caption
// ---------------------------------------------------------------------------

TEST(RenderCaption, PedestrianStationaryMentionsTypeAndWaiting) {
  Rng rng(0);
  for (const auto& c : render_caption(AgentType::pedestrian, Maneuver::stationary, rng)) {
    const auto t = tokenize(c);
    EXPECT_NE(std::find(t.begin(), t.end(), "pedestrian"), t.end()) << c;
    EXPECT_NE(std::find(t.begin(), t.end(), "waiting"), t.end()) << c;
  }
}

TEST(RenderCaption, ThreeDistinctCaptionsPerAgent) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto caps = render_caption(static_cast<AgentType>(seed % 4), static_cast<Maneuver>(seed % 6), rng);
    EXPECT_NE(caps[0], caps[1]);
    EXPECT_NE(caps[0], caps[2]);
    EXPECT_NE(caps[1], caps[2]);
  }
}

TEST(RenderCaption, LeftTurningCarsOverlapByEnumeration) {
  const auto pool = caption_pool(AgentType::car, Maneuver::turn_left);
  EXPECT_EQ(pool.size(), 9u);  // 3 openers x 3 rationales
  double worst = 1.0;
  for (const auto& a : pool)
    for (const auto& b : pool) worst = std::min(worst, jaccard(a, b));
  EXPECT_GE(worst, 0.3);
}

TEST(RenderCaption, SameManeuverOverlapExceedsCrossManeuver) {
  double same = 0, cross = 0;
  std::size_t n_same = 0, n_cross = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> pools;
  for (std::size_t m = 0; m < kManeuverCount; ++m) pools.push_back({m, caption_pool(AgentType::car, static_cast<Maneuver>(m))});
  for (const auto& [ma, pa] : pools)
    for (const auto& [mb, pb] : pools)
      for (const auto& a : pa)
        for (const auto& b : pb) {
          if (ma == mb) {
            same += jaccard(a, b);
            ++n_same;
          } else {
            cross += jaccard(a, b);
            ++n_cross;
          }
        }
  EXPECT_GT(same / n_same, cross / n_cross);
}

// ---------------------------------------------------------------------------
// compose_bev / coordinates
// ---------------------------------------------------------------------------

TEST(ComposeBev, ConcatenatesChannels) {
  Grid image(4, 5, 2), map(4, 5, 1);
  Rng rng(1);
  for (auto& v : image.data) v = rng.uniform();
  for (auto& v : map.data) v = rng.uniform();
  const auto b = compose_bev(image, map);
  EXPECT_EQ(b.d, 3u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(b.at(r, c, 0), image.at(r, c, 0));
      EXPECT_EQ(b.at(r, c, 1), image.at(r, c, 1));
      EXPECT_EQ(b.at(r, c, 2), map.at(r, c, 0));
    }
}

TEST(ComposeBev, ZeroMapGivesZeroTrailingChannels) {
  Grid image(4, 4, 2), map(4, 4, 3);
  for (auto& v : image.data) v = 1.5;
  const auto b = compose_bev(image, map);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t k = 2; k < 5; ++k) EXPECT_EQ(b.at(r, c, k), 0.0);
}

TEST(ComposeBev, SpatialMismatchThrows) { EXPECT_THROW(compose_bev(Grid(4, 4, 1), Grid(4, 5, 1)), DimensionError); }

TEST(EgoWorldToGrid, CenterCornerAndRoundTrip) {
  const std::size_t h = 9, w = 13;
  const double extent = 40;
  const auto c = ego_world_to_grid({0, 0}, h, w, extent);
  EXPECT_DOUBLE_EQ(c.x, (w - 1) / 2.0);
  EXPECT_DOUBLE_EQ(c.y, (h - 1) / 2.0);
  const auto lo = ego_world_to_grid({-extent / 2, -extent / 2}, h, w, extent);
  EXPECT_DOUBLE_EQ(lo.x, 0.0);
  EXPECT_DOUBLE_EQ(lo.y, 0.0);
  const auto hi = ego_world_to_grid({extent / 2, extent / 2}, h, w, extent);
  EXPECT_DOUBLE_EQ(hi.x, w - 1.0);
  EXPECT_DOUBLE_EQ(hi.y, h - 1.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const Vec2 g{rng.uniform(0, w - 1.0), rng.uniform(0, h - 1.0)};
    const auto back = ego_world_to_grid(grid_to_ego_world(g, h, w, extent), h, w, extent);
    EXPECT_NEAR(back.x, g.x, 1e-9);
    EXPECT_NEAR(back.y, g.y, 1e-9);
  }
}

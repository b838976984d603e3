#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "test_support.hpp"
#include "trajgraft/visual_semantic.hpp"

using namespace trajgraft;
using Vec = std::vector<double>;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_s = 6;
  c.d_v = 3;
  c.H = 2;
  c.O = 3;
  c.T_f = 4;
  c.M = 3;
  c.hidden = 8;
  return c;
}

struct Fixture {
  ModelConfig cfg;
  ParameterSet params;
  DeformableParams block;
  DecoderParams aux;

  explicit Fixture(std::uint64_t seed, ModelConfig c = small_config()) : cfg(c) {
    Rng rng(seed);
    ParamFactory pf(params, rng);
    block = make_deformable_params(pf, cfg, "block");
    aux = make_decoder_params(pf, cfg, "aux");
  }

  // The sampling heads start at zero; give them random values so offsets and
  // weights are exercised.
  void randomize(const std::string& prefix, std::uint64_t seed, double amp) {
    Rng rng(seed);
    for (auto& [name, t] : params)
      if (name.rfind(prefix, 0) == 0)
        for (auto& v : t.mutable_data()) v = rng.uniform(-amp, amp);
  }
  void zero(const std::string& prefix) {
    for (auto& [name, t] : params)
      if (name.rfind(prefix, 0) == 0)
        for (auto& v : t.mutable_data()) v = 0.0;
  }
};

Tensor random_reference(Rng& rng, std::size_t n, std::size_t T_f, double extent) {
  return trajgraft::testing::random_tensor(rng, {n, T_f, 2}, -0.6 * extent, 0.6 * extent, false);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const std::vector<Rotation> kRotations{make_rotation({0, 1}), make_rotation({1, 0}), make_rotation({0.6, -0.8})};
const std::vector<Vec2> kCurrent{{0, 0}, {3, -2}, {-5, 4}};

}  // namespace

// ---------------------------------------------------------------------------
// deformable_attend
// ---------------------------------------------------------------------------

TEST(DeformableAttend, ZeroHeadProjectionIsIdentity) {
  Fixture f(1);
  f.randomize("block.offset", 2, 1.0);
  f.zero("block.head_proj");
  Rng rng(3);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  auto grid = trajgraft::testing::random_tensor(rng, {8, 8, 7}, -1, 1, false);
  const auto out = deformable_attend(z, random_reference(rng, 3, 4, 40), grid, 40, f.block);
  EXPECT_EQ(max_abs_diff(out, z), 0.0);
}

TEST(DeformableAttend, UniformGridIgnoresWhereItSamples) {
  Fixture f(4);
  f.randomize("block.offset", 5, 3.0);
  f.randomize("block.weight", 6, 2.0);
  Rng rng(7);
  auto z = trajgraft::testing::random_tensor(rng, {2, 6}, -1, 1, false);
  Vec cell{0.3, -1.2, 0.5, 2.0, 0.1, -0.7, 1.1};
  std::vector<double> g;
  for (int k = 0; k < 8 * 8; ++k) g.insert(g.end(), cell.begin(), cell.end());
  auto grid = Tensor::from({8, 8, 7}, g);
  const auto out = deformable_attend(z, random_reference(rng, 2, 4, 40), grid, 40, f.block);
  // Weights sum to one per head, so every head pools exactly `cell`.
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      double expect = z[i * 6 + j];
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t k = 0; k < 3; ++k) {
          double v = 0;
          for (std::size_t c = 0; c < 7; ++c) v += cell[c] * f.block.sample_proj[h][c * 3 + k];
          expect += v * f.block.head_proj[h][k * 6 + j];
        }
      EXPECT_NEAR(out[i * 6 + j], expect, 1e-12);
    }
  }
}

TEST(DeformableAttend, MatchesTripleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Fixture f(100 + seed);
    f.randomize("block.offset", 200 + seed, 4.0);
    f.randomize("block.weight", 300 + seed, 2.0);
    Rng rng(400 + seed);
    auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
    auto grid = trajgraft::testing::random_tensor(rng, {9, 7, 7}, -1, 1, false);
    auto ref = random_reference(rng, 3, 4, 30);
    const auto out = deformable_attend(z, ref, grid, 30, f.block);
    const auto expect = oracle::deformable_attend(z, ref, grid, 30, f.block);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        EXPECT_LT(trajgraft::testing::rel_err(out[i * 6 + j], expect[i][j], 1e-12), 1e-10);
  }
}

TEST(DeformableAttend, OnlySampledCellsMatter) {
  // Zero offsets and the reference at the grid centre: a far corner cell is
  // never touched, the centre cells are.
  Fixture f(8);
  Rng rng(9);
  auto z = trajgraft::testing::random_tensor(rng, {1, 6}, -1, 1, false);
  auto grid = trajgraft::testing::random_tensor(rng, {9, 9, 7}, -1, 1, false);
  auto ref = Tensor::zeros({1, 4, 2});
  const auto base = deformable_attend(z, ref, grid, 40, f.block);
  auto corner = grid.detach();
  corner.mutable_data()[0] += 5.0;
  EXPECT_EQ(max_abs_diff(deformable_attend(z, ref, corner, 40, f.block), base), 0.0);
  auto centre = grid.detach();
  centre.mutable_data()[(4 * 9 + 4) * 7] += 5.0;
  EXPECT_GT(max_abs_diff(deformable_attend(z, ref, centre, 40, f.block), base), 1e-6);
}

TEST(DeformableAttend, GradientsReachReferenceOffsetsAndGrid) {
  Fixture f(10);
  f.randomize("block.offset", 11, 0.7);
  f.randomize("block.weight", 12, 1.0);
  Rng rng(13);
  auto z = trajgraft::testing::random_tensor(rng, {2, 6}, -1, 1);
  auto grid = trajgraft::testing::random_tensor(rng, {6, 6, 7}, -1, 1);
  // Keep samples strictly inside the grid and off the lattice lines.
  auto ref = trajgraft::testing::random_tensor(rng, {2, 4, 2}, -8.3, 8.3);
  const auto r = trajgraft::testing::compare_gradients(
      [&](std::vector<Tensor>& in) {
        return trajgraft::testing::weighted_sum(deformable_attend(in[0], in[1], in[2], 40, f.block), 14);
      },
      {z, ref, grid, f.params.at("block.offset.weight"), f.params.at("block.weight.weight")});
  EXPECT_LT(r.max_rel_err, 1e-5);
  double ref_grad = 0;
  for (double g : ref.grad()) ref_grad += std::abs(g);
  EXPECT_GT(ref_grad, 0.0);
}

TEST(DeformableAttend, ShapeErrors) {
  Fixture f(15);
  auto z = Tensor::zeros({2, 6});
  auto grid = Tensor::zeros({8, 8, 7});
  EXPECT_THROW(deformable_attend(z, Tensor::zeros({2, 3, 2}), grid, 40, f.block), DimensionError);
  EXPECT_THROW(deformable_attend(z, Tensor::zeros({2, 4, 2}), Tensor::zeros({8, 8, 5}), 40, f.block), DimensionError);
  EXPECT_THROW(deformable_attend(z, Tensor::zeros({2, 4, 2}), Tensor::zeros({64, 7}), 40, f.block), DimensionError);
}

// ---------------------------------------------------------------------------
// predict_reference
// ---------------------------------------------------------------------------

TEST(PredictReference, ZeroDecoderAnchorsAtCurrentPosition) {
  Fixture f(16);
  f.zero("aux");
  Rng rng(17);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  const auto r = predict_reference(z, kRotations, kCurrent, f.aux);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.mode[i], 0u);  // uniform rho: lowest index wins
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(r.points[(i * 4 + t) * 2], kCurrent[i].x);
      EXPECT_EQ(r.points[(i * 4 + t) * 2 + 1], kCurrent[i].y);
    }
  }
}

TEST(PredictReference, SingleModeIsThatMode) {
  ModelConfig c = small_config();
  c.M = 1;
  Fixture f(18, c);
  Rng rng(19);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  const auto r = predict_reference(z, kRotations, kCurrent, f.aux);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(r.points[(i * 4 + t) * 2], r.gmm.mu_x[i * 4 + t]);
      EXPECT_EQ(r.points[(i * 4 + t) * 2 + 1], r.gmm.mu_y[i * 4 + t]);
    }
}

TEST(PredictReference, PicksHighestProbabilityMode) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture f(20 + seed);
    Rng rng(30 + seed);
    auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -2, 2, false);
    const auto r = predict_reference(z, kRotations, kCurrent, f.aux);
    const auto preds = to_predictions(r.gmm, kRotations);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto best = std::max_element(preds[i].rho.begin(), preds[i].rho.end()) - preds[i].rho.begin();
      ASSERT_EQ(r.mode[i], static_cast<std::size_t>(best));
      for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_EQ(r.points[(i * 4 + t) * 2], preds[i].mean(best, t).x);
        EXPECT_EQ(r.points[(i * 4 + t) * 2 + 1], preds[i].mean(best, t).y);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// refine_blocks
// ---------------------------------------------------------------------------

TEST(RefineBlocks, SingleBlockIsReferenceThenAttend) {
  Fixture f(40);
  f.randomize("block.offset", 41, 1.0);
  Rng rng(42);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  auto grid = trajgraft::testing::random_tensor(rng, {8, 8, 7}, -1, 1, false);
  const DeformableParams blocks[] = {f.block};
  const auto res = refine_blocks(z, grid, 40, kRotations, kCurrent, f.aux, blocks);
  const auto ref = predict_reference(z, kRotations, kCurrent, f.aux);
  const auto expect = deformable_attend(z, ref.points, grid, 40, f.block);
  ASSERT_EQ(res.aux.size(), 1u);
  EXPECT_EQ(max_abs_diff(res.references[0], ref.points), 0.0);
  EXPECT_EQ(max_abs_diff(res.z_scene, expect), 0.0);
}

TEST(RefineBlocks, ZeroProjectionsKeepEmbeddingAndReference) {
  Fixture f(43);
  f.zero("block.head_proj");
  Rng rng(44);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  auto grid = trajgraft::testing::random_tensor(rng, {8, 8, 7}, -1, 1, false);
  const DeformableParams blocks[] = {f.block, f.block, f.block};
  const auto res = refine_blocks(z, grid, 40, kRotations, kCurrent, f.aux, blocks);
  EXPECT_EQ(max_abs_diff(res.z_scene, z), 0.0);
  for (std::size_t b = 1; b < 3; ++b) EXPECT_EQ(max_abs_diff(res.references[b], res.references[0]), 0.0);
}

TEST(RefineBlocks, TwoBlocksReplayManually) {
  ModelConfig c = small_config();
  Fixture f(45, c);
  ParameterSet extra;
  Rng prng(46);
  ParamFactory pf(extra, prng);
  auto second = make_deformable_params(pf, c, "second");
  f.randomize("block.offset", 47, 1.0);
  Rng rng(48);
  auto z = trajgraft::testing::random_tensor(rng, {3, 6}, -1, 1, false);
  auto grid = trajgraft::testing::random_tensor(rng, {8, 8, 7}, -1, 1, false);
  const DeformableParams blocks[] = {f.block, second};
  const auto res = refine_blocks(z, grid, 40, kRotations, kCurrent, f.aux, blocks);
  auto r1 = predict_reference(z, kRotations, kCurrent, f.aux);
  auto z1 = deformable_attend(z, r1.points, grid, 40, f.block);
  auto r2 = predict_reference(z1, kRotations, kCurrent, f.aux);
  auto z2 = deformable_attend(z1, r2.points, grid, 40, second);
  EXPECT_EQ(max_abs_diff(res.references[1], r2.points), 0.0);
  EXPECT_EQ(max_abs_diff(res.z_scene, z2), 0.0);
  EXPECT_GT(max_abs_diff(res.references[1], res.references[0]), 0.0);
}

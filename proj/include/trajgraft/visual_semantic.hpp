#pragma once

// Deformable cross-attention from agent embeddings into the composite BEV
// grid, with reference points refined by an auxiliary trajectory decoder.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"
#include "trajgraft/trajectory_decoder.hpp"

namespace trajgraft {

struct DeformableParams {
  Linear offset_net;            // d_s -> H * T_f * O * 2, grid units
  Linear weight_net;            // d_s -> H * T_f * O logits
  std::vector<Tensor> sample_proj;  // per head W'_h: [C, d_v]
  std::vector<Tensor> head_proj;    // per head W_h: [d_v, d_s]
  std::size_t H = 1, O = 1, T_f = 1;

  std::size_t samples_per_agent() const { return H * T_f * O; }
};

inline DeformableParams make_deformable_params(ParamFactory& pf, const ModelConfig& cfg, const std::string& prefix) {
  DeformableParams p;
  p.H = cfg.H;
  p.O = cfg.O;
  p.T_f = cfg.T_f;
  const std::size_t S = cfg.H * cfg.T_f * cfg.O;
  p.offset_net = pf.linear(prefix + ".offset", cfg.d_s, S * 2, Init::zeros);
  p.weight_net = pf.linear(prefix + ".weight", cfg.d_s, S, Init::zeros);
  const std::size_t C = cfg.d_bev + cfg.d_map;
  for (std::size_t h = 0; h < cfg.H; ++h) {
    p.sample_proj.push_back(pf.normal(prefix + ".sample_proj." + std::to_string(h), {C, cfg.d_v}, 1.0 / std::sqrt(double(C))));
    p.head_proj.push_back(pf.normal(prefix + ".head_proj." + std::to_string(h), {cfg.d_v, cfg.d_s}, 1.0 / std::sqrt(double(cfg.d_v))));
  }
  return p;
}

// Ego-frame meters -> continuous grid coordinates, as a differentiable affine map.
inline Tensor ego_to_grid_points(const Tensor& points, std::size_t h, std::size_t w, double extent) {
  const double sx = static_cast<double>(w - 1) / extent, sy = static_cast<double>(h - 1) / extent;
  return add(mul(points, Tensor::from({2}, {sx, sy})),
             Tensor::from({2}, {static_cast<double>(w - 1) / 2.0, static_cast<double>(h - 1) / 2.0}));
}

// z_scene = z + sum_h W_h [ sum_{t,o} alpha_hto W'_h B(u_t + du_hto) ]
// with alpha normalized jointly over the T_f * O samples of each head.
// z[n, d_s], reference[n, T_f, 2] in ego meters, grid[h, w, C].
inline Tensor deformable_attend(const Tensor& z, const Tensor& reference, const Tensor& grid, double extent,
                                const DeformableParams& p) {
  const std::size_t n = z.dim(0), H = p.H, T_f = p.T_f, O = p.O;
  if (reference.shape() != Shape{n, T_f, 2}) {
    throw DimensionError("deformable_attend: reference " + shape_str(reference.shape()) + ", expected [" +
                         std::to_string(n) + "x" + std::to_string(T_f) + "x2]");
  }
  if (grid.rank() != 3) throw DimensionError("deformable_attend: grid must be [h, w, C]");
  const std::size_t C = grid.dim(2), K = T_f * O;
  if (p.sample_proj.front().dim(0) != C) throw DimensionError("deformable_attend: grid channels do not match W'");
  auto base = reshape(ego_to_grid_points(reference, grid.dim(0), grid.dim(1), extent), {n, 1, T_f, 1, 2});
  auto offsets = reshape(p.offset_net(z), {n, H, T_f, O, 2});
  auto points = reshape(add(base, offsets), {n * H * K, 2});
  auto sampled = reshape(bilinear_sample(grid, points), {n * H, K, C});
  auto alpha = softmax(reshape(p.weight_net(z), {n * H, 1, K}), 2);
  auto pooled = reshape(bmm(alpha, sampled), {n, H, C});
  Tensor out = z;
  for (std::size_t h = 0; h < H; ++h) {
    auto head = reshape(slice(pooled, 1, h, h + 1), {n, C});
    out = add(out, matmul(matmul(head, p.sample_proj[h]), p.head_proj[h]));
  }
  return out;
}

struct ReferencePrediction {
  Tensor points;  // [n, T_f, 2], ego meters
  GmmTensors gmm;
  std::vector<std::size_t> mode;  // selected (highest-rho) mode per agent
};

// Auxiliary decode; the reference is the highest-rho mode's means (lowest
// index wins ties).
inline ReferencePrediction predict_reference(const Tensor& z, std::span<const Rotation> rotations,
                                             std::span<const Vec2> current, const DecoderParams& aux) {
  ReferencePrediction r;
  r.gmm = decode(transform_feature(z, rotations, aux.transform), rotations, current, aux);
  const std::size_t n = z.dim(0), M = aux.M, T_f = aux.T_f;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < M; ++m)
      if (r.gmm.log_rho[i * M + m] > r.gmm.log_rho[i * M + best]) best = m;
    r.mode.push_back(best);
    rows.push_back(i * M + best);
  }
  auto px = reshape(gather_rows(reshape(r.gmm.mu_x, {n * M, T_f}), rows), {n, T_f, 1});
  auto py = reshape(gather_rows(reshape(r.gmm.mu_y, {n * M, T_f}), rows), {n, T_f, 1});
  r.points = concat({px, py}, 2);
  return r;
}

struct RefinementResult {
  Tensor z_scene;
  std::vector<GmmTensors> aux;
  std::vector<Tensor> references;
};

// n_blocks rounds of (predict reference, deformable attend).
inline RefinementResult refine_blocks(const Tensor& z_interact, const Tensor& grid, double extent,
                                      std::span<const Rotation> rotations, std::span<const Vec2> current,
                                      const DecoderParams& aux, std::span<const DeformableParams> blocks) {
  RefinementResult res;
  Tensor z = z_interact;
  for (const auto& block : blocks) {
    auto ref = predict_reference(z, rotations, current, aux);
    z = deformable_attend(z, ref.points, grid, extent, block);
    res.aux.push_back(std::move(ref.gmm));
    res.references.push_back(std::move(ref.points));
  }
  res.z_scene = z;
  return res;
}

}  // namespace trajgraft

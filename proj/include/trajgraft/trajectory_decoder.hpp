#pragma once

// Rotation standardization, GMM trajectory head and trajectory losses.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"
#include "trajgraft/scene.hpp"

namespace trajgraft {

inline constexpr double kSigmaMin = 1e-3;

// Row-major 2x2 rotation taking an agent's heading onto +y.
struct Rotation {
  std::array<double, 4> m{1.0, 0.0, 0.0, 1.0};

  Vec2 apply(Vec2 v) const { return {m[0] * v.x + m[1] * v.y, m[2] * v.x + m[3] * v.y}; }
  Vec2 apply_transposed(Vec2 v) const { return {m[0] * v.x + m[2] * v.y, m[1] * v.x + m[3] * v.y}; }
  double det() const { return m[0] * m[3] - m[1] * m[2]; }
};

inline Rotation make_rotation(Vec2 heading) {
  const double n = norm(heading);
  if (n == 0.0) throw ContractError("make_rotation: zero heading");
  if (std::abs(n - 1.0) > 1e-6) throw ContractError("make_rotation: heading is not unit length");
  // R h = (0, 1): rows are (hy, -hx) and (hx, hy).
  return Rotation{{heading.y, -heading.x, heading.x, heading.y}};
}

struct DecoderParams {
  Mlp transform;   // [z ; vec(R)] -> d_s
  Mlp rho_head;    // d_s -> M
  Mlp step_head;   // d_s -> M * T_f * 2 per-step displacements, aligned frame
  Mlp sigma_head;  // d_s -> M * T_f * 2 log std-devs
  std::size_t M = 1;
  std::size_t T_f = 1;
};

inline DecoderParams make_decoder_params(ParamFactory& pf, const ModelConfig& cfg, const std::string& prefix) {
  DecoderParams p;
  const auto d = cfg.d_s, h = cfg.hidden;
  p.M = cfg.M;
  p.T_f = cfg.T_f;
  p.transform = pf.mlp(prefix + ".transform", {d + 4, h, d});
  p.rho_head = pf.mlp(prefix + ".rho", {d, h, cfg.M});
  p.step_head = pf.mlp(prefix + ".step", {d, h, cfg.M * cfg.T_f * 2});
  p.sigma_head = pf.mlp(prefix + ".sigma", {d, h, cfg.M * cfg.T_f * 2});
  return p;
}

// z_aligned = MLP([z ; vec(R)]) + z for z[n, d_s].
inline Tensor transform_feature(const Tensor& z, std::span<const Rotation> rotations, const Mlp& transform) {
  if (z.rank() != 2 || z.dim(0) != rotations.size()) throw DimensionError("transform_feature: one rotation per agent required");
  std::vector<double> flat;
  flat.reserve(rotations.size() * 4);
  for (const auto& r : rotations) flat.insert(flat.end(), r.m.begin(), r.m.end());
  auto input = concat({z, Tensor::from({rotations.size(), 4}, std::move(flat))}, 1);
  return add(transform(input), z);
}

// GMM head output for n agents, still attached to the graph.
struct GmmTensors {
  Tensor log_rho;  // [n, M]
  Tensor mu_x;     // [n, M * T_f], ego frame, (m, t) order
  Tensor mu_y;     // [n, M * T_f]
  Tensor sigma;    // [n, M * T_f * 2], aligned-frame axes
  std::size_t M = 0;
  std::size_t T_f = 0;

  std::size_t agents() const { return log_rho.dim(0); }
};

// Cumulative sum along the last axis via an upper-triangular ones matrix.
inline Tensor cumulative_steps(const Tensor& steps, std::size_t T_f) {
  std::vector<double> upper(T_f * T_f, 0.0);
  for (std::size_t s = 0; s < T_f; ++s)
    for (std::size_t t = s; t < T_f; ++t) upper[s * T_f + t] = 1.0;
  return matmul(steps, Tensor::from({T_f, T_f}, std::move(upper)));
}

// Mode probabilities, cumulative-displacement means mapped back to the ego
// frame (R^T then + p^T) and floored std-devs.
inline GmmTensors decode(const Tensor& z_aligned, std::span<const Rotation> rotations, std::span<const Vec2> current,
                         const DecoderParams& p) {
  const std::size_t n = z_aligned.dim(0), M = p.M, T_f = p.T_f;
  if (rotations.size() != n || current.size() != n) throw DimensionError("decode: per-agent rotation and position required");
  GmmTensors g;
  g.M = M;
  g.T_f = T_f;
  g.log_rho = log_softmax(p.rho_head(z_aligned), 1);
  auto steps = reshape(p.step_head(z_aligned), {n * M * T_f, 2});
  auto ax = reshape(cumulative_steps(reshape(slice(steps, 1, 0, 1), {n * M, T_f}), T_f), {n, M * T_f});
  auto ay = reshape(cumulative_steps(reshape(slice(steps, 1, 1, 2), {n * M, T_f}), T_f), {n, M * T_f});
  std::vector<double> r00(n), r01(n), r10(n), r11(n), px(n), py(n);
  for (std::size_t i = 0; i < n; ++i) {
    r00[i] = rotations[i].m[0];
    r01[i] = rotations[i].m[1];
    r10[i] = rotations[i].m[2];
    r11[i] = rotations[i].m[3];
    px[i] = current[i].x;
    py[i] = current[i].y;
  }
  auto col = [n](std::vector<double> v) { return Tensor::from({n, 1}, std::move(v)); };
  // ego = R^T aligned + p
  g.mu_x = add(add(mul(ax, col(r00)), mul(ay, col(r10))), col(px));
  g.mu_y = add(add(mul(ax, col(r01)), mul(ay, col(r11))), col(py));
  g.sigma = clamp_min(exp(p.sigma_head(z_aligned)), kSigmaMin);
  return g;
}

// Detached per-agent view of a GMM prediction.
struct GmmPrediction {
  std::size_t M = 0, T_f = 0;
  std::vector<double> rho;   // [M]
  std::vector<Vec2> mu;      // [M * T_f], ego frame
  std::vector<Vec2> sigma;   // [M * T_f], aligned-frame axes
  Rotation rotation;         // ego -> aligned

  Vec2 mean(std::size_t m, std::size_t t) const { return mu[m * T_f + t]; }
  Vec2 stddev(std::size_t m, std::size_t t) const { return sigma[m * T_f + t]; }
};

inline std::vector<GmmPrediction> to_predictions(const GmmTensors& g, std::span<const Rotation> rotations) {
  const std::size_t n = g.agents(), M = g.M, T_f = g.T_f;
  std::vector<GmmPrediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = out[i];
    p.M = M;
    p.T_f = T_f;
    p.rotation = rotations[i];
    for (std::size_t m = 0; m < M; ++m) p.rho.push_back(std::exp(g.log_rho[i * M + m]));
    for (std::size_t k = 0; k < M * T_f; ++k) {
      p.mu.push_back({g.mu_x[i * M * T_f + k], g.mu_y[i * M * T_f + k]});
      p.sigma.push_back({g.sigma[(i * M * T_f + k) * 2], g.sigma[(i * M * T_f + k) * 2 + 1]});
    }
  }
  return out;
}

// log sum_m rho_m prod_t N(u_t; mu_m^t, diag(sigma^2)), residuals taken in the
// aligned frame so the per-axis std-devs apply.
inline double gmm_log_density(const GmmPrediction& pred, std::span<const Vec2> u) {
  if (u.size() != pred.T_f) throw DimensionError("gmm_density: trajectory length mismatch");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  std::vector<double> terms(pred.M);
  for (std::size_t m = 0; m < pred.M; ++m) {
    double lp = std::log(pred.rho[m]);
    for (std::size_t t = 0; t < pred.T_f; ++t) {
      const Vec2 r = pred.rotation.apply(u[t] - pred.mean(m, t));
      const Vec2 s = pred.stddev(m, t);
      lp += -0.5 * (r.x * r.x) / (s.x * s.x) - std::log(s.x) - 0.5 * log2pi;
      lp += -0.5 * (r.y * r.y) / (s.y * s.y) - std::log(s.y) - 0.5 * log2pi;
    }
    terms[m] = lp;
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc);
}

inline double gmm_density(const GmmPrediction& pred, std::span<const Vec2> u) { return std::exp(gmm_log_density(pred, u)); }

// -(1/N) sum_i log sum_m rho_im / sqrt(2 b^2) exp(-E_im / (2 b^2)), E = summed
// squared error over T_f x 2. With `literal` the exponent is -E/2.
// `future` holds ground truth [n, T_f, 2]; `b` is a scalar tensor.
inline Tensor traj_nll(const GmmTensors& g, const Tensor& future, const Tensor& b, bool literal) {
  const std::size_t n = g.agents(), M = g.M, T_f = g.T_f;
  if (n == 0) throw ContractError("traj_nll needs at least one agent");
  if (future.shape() != Shape{n, T_f, 2}) {
    throw DimensionError("traj_nll: ground truth " + shape_str(future.shape()) + " vs prediction for " +
                         std::to_string(n) + " agents, T_f=" + std::to_string(T_f));
  }
  if (b.numel() != 1) throw DimensionError("traj_nll: b must be a scalar");
  auto yx = reshape(slice(future, 2, 0, 1), {n, 1, T_f});
  auto yy = reshape(slice(future, 2, 1, 2), {n, 1, T_f});
  auto ex = square(sub(reshape(g.mu_x, {n, M, T_f}), yx));
  auto ey = square(sub(reshape(g.mu_y, {n, M, T_f}), yy));
  auto sse = reshape(sum(add(ex, ey), 2), {n, M});
  auto b2 = square(reshape(b, {}));
  auto log_norm = scale(log(scale(b2, 2.0)), 0.5);  // log sqrt(2 b^2)
  auto exponent = literal ? scale(sse, 0.5) : div(sse, scale(b2, 2.0));
  auto terms = sub(sub(g.log_rho, exponent), log_norm);
  return neg(mean(logsumexp(terms, 1)));
}

inline Tensor future_tensor(std::span<const Agent* const> agents, std::size_t T_f) {
  std::vector<double> v;
  v.reserve(agents.size() * T_f * 2);
  for (const Agent* a : agents) {
    if (a->future.size() != T_f) throw DimensionError("agent future length does not match T_f");
    for (auto q : a->future) {
      v.push_back(q.x);
      v.push_back(q.y);
    }
  }
  return Tensor::from({agents.size(), T_f, 2}, std::move(v));
}

// L = L_traj + lambda_aux * mean(L_aux) + lambda_cl * L_cl
inline Tensor total_loss(const Tensor& main_nll, std::span<const Tensor> aux_nlls, const Tensor& guidance,
                         const LossConfig& cfg) {
  Tensor total = main_nll;
  if (!aux_nlls.empty()) {
    Tensor aux = aux_nlls.front();
    for (std::size_t i = 1; i < aux_nlls.size(); ++i) aux = add(aux, aux_nlls[i]);
    total = add(total, scale(aux, cfg.lambda_aux / static_cast<double>(aux_nlls.size())));
  }
  return add(total, scale(guidance, cfg.lambda_cl));
}

}  // namespace trajgraft

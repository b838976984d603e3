#pragma once

// Naive-loop reference implementations used by the unit tests and the
// acceptance binary. None of them touch the tape; each recomputes its
// quantity from scalars with plain loops, often in extended precision.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "trajgraft/metrics.hpp"
#include "trajgraft/text_guidance.hpp"
#include "trajgraft/trajectory_decoder.hpp"
#include "trajgraft/visual_semantic.hpp"

namespace trajgraft::oracle {

using Vec = std::vector<double>;

inline Vec linear(const Linear& l, const Vec& x) {
  const std::size_t in = l.in_features(), out = l.out_features();
  Vec y(out);
  for (std::size_t j = 0; j < out; ++j) {
    long double acc = l.bias.defined() ? l.bias[j] : 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += static_cast<long double>(x[i]) * l.weight[i * out + j];
    y[j] = static_cast<double>(acc);
  }
  return y;
}

// softmax(q k^T * s) v, row by row. q[n,d], k[m,d], v[m,e].
inline std::vector<Vec> attention(const Tensor& q, const Tensor& k, const Tensor& v, double s) {
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1), e = v.dim(1);
  std::vector<Vec> out(n, Vec(e, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<long double> w(m);
    long double mx = -INFINITY, total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      long double acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<long double>(q[i * d + c]) * k[j * d + c];
      w[j] = acc * s;
      mx = std::max(mx, w[j]);
    }
    for (auto& x : w) total += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < e; ++c) {
      long double acc = 0;
      for (std::size_t j = 0; j < m; ++j) acc += w[j] / total * v[j * e + c];
      out[i][c] = static_cast<double>(acc);
    }
  }
  return out;
}

// Border-clamped bilinear lookup, x = column, y = row.
inline Vec bilinear(const Tensor& grid, double x, double y) {
  const std::size_t h = grid.dim(0), w = grid.dim(1), C = grid.dim(2);
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(std::floor(x)), w - 2);
  const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(std::floor(y)), h - 2);
  const double fx = x - double(x0), fy = y - double(y0);
  Vec out(C);
  for (std::size_t c = 0; c < C; ++c) {
    auto g = [&](std::size_t r, std::size_t q) { return grid[(r * w + q) * C + c]; };
    out[c] = (1 - fx) * (1 - fy) * g(y0, x0) + fx * (1 - fy) * g(y0, x0 + 1) + (1 - fx) * fy * g(y0 + 1, x0) +
             fx * fy * g(y0 + 1, x0 + 1);
  }
  return out;
}

// Triple loop over heads, future steps and offsets for every agent.
inline std::vector<Vec> deformable_attend(const Tensor& z, const Tensor& ref, const Tensor& grid, double extent,
                                          const DeformableParams& p) {
  const std::size_t n = z.dim(0), d = z.dim(1), C = grid.dim(2), gh = grid.dim(0), gw = grid.dim(1);
  const std::size_t dv = p.sample_proj[0].dim(1);
  std::vector<Vec> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec zi(z.data().begin() + i * d, z.data().begin() + (i + 1) * d);
    const Vec off = linear(p.offset_net, zi), logit = linear(p.weight_net, zi);
    std::vector<long double> acc(zi.begin(), zi.end());
    for (std::size_t h = 0; h < p.H; ++h) {
      long double mx = -INFINITY, total = 0;
      for (std::size_t s = h * p.T_f * p.O; s < (h + 1) * p.T_f * p.O; ++s) mx = std::max<long double>(mx, logit[s]);
      for (std::size_t s = h * p.T_f * p.O; s < (h + 1) * p.T_f * p.O; ++s) total += std::exp(logit[s] - mx);
      std::vector<long double> pooled(C, 0.0);
      for (std::size_t t = 0; t < p.T_f; ++t) {
        const double rx = ref[(i * p.T_f + t) * 2], ry = ref[(i * p.T_f + t) * 2 + 1];
        const double ux = rx * double(gw - 1) / extent + double(gw - 1) / 2;
        const double uy = ry * double(gh - 1) / extent + double(gh - 1) / 2;
        for (std::size_t o = 0; o < p.O; ++o) {
          const std::size_t s = (h * p.T_f + t) * p.O + o;
          const long double alpha = std::exp(logit[s] - mx) / total;
          const Vec b = bilinear(grid, ux + off[2 * s], uy + off[2 * s + 1]);
          for (std::size_t c = 0; c < C; ++c) pooled[c] += alpha * b[c];
        }
      }
      std::vector<long double> v(dv, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < dv; ++k) v[k] += pooled[c] * p.sample_proj[h][c * dv + k];
      for (std::size_t k = 0; k < dv; ++k)
        for (std::size_t j = 0; j < d; ++j) acc[j] += v[k] * p.head_proj[h][k * d + j];
    }
    out[i].assign(acc.begin(), acc.end());
  }
  return out;
}

// Mixture density with each component written as a full 2x2 covariance in
// the ego frame: Sigma = R^T diag(sx^2, sy^2) R.
inline long double gmm_density(const GmmPrediction& p, const std::vector<Vec2>& u) {
  const auto& r = p.rotation.m;
  long double total = 0;
  for (std::size_t m = 0; m < p.M; ++m) {
    long double prod = p.rho[m];
    for (std::size_t t = 0; t < p.T_f; ++t) {
      const long double vx = p.stddev(m, t).x * p.stddev(m, t).x, vy = p.stddev(m, t).y * p.stddev(m, t).y;
      // Sigma = R^T D R, with R = [[a, b], [c, d]].
      const long double a = r[0], b = r[1], c = r[2], d = r[3];
      const long double s00 = a * a * vx + c * c * vy, s01 = a * b * vx + c * d * vy, s11 = b * b * vx + d * d * vy;
      const long double det = s00 * s11 - s01 * s01;
      const long double dx = u[t].x - p.mean(m, t).x, dy = u[t].y - p.mean(m, t).y;
      const long double q = (s11 * dx * dx - 2 * s01 * dx * dy + s00 * dy * dy) / det;
      prod *= std::exp(-0.5L * q) / (2 * std::numbers::pi_v<long double> * std::sqrt(det));
    }
    total += prod;
  }
  return total;
}

// -(1/N) sum_i log sum_m rho_im / sqrt(2 b^2) exp(-E_im / (2 b^2)) (or -E/2).
inline long double traj_nll(const std::vector<GmmPrediction>& preds, const std::vector<std::vector<Vec2>>& truth,
                            double b, bool literal) {
  long double total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    std::vector<long double> terms;
    for (std::size_t m = 0; m < p.M; ++m) {
      long double sse = 0;
      for (std::size_t t = 0; t < p.T_f; ++t) {
        const long double dx = p.mean(m, t).x - truth[i][t].x, dy = p.mean(m, t).y - truth[i][t].y;
        sse += dx * dx + dy * dy;
      }
      const long double bb = static_cast<long double>(b) * b;
      const long double expo = literal ? sse / 2 : sse / (2 * bb);
      terms.push_back(std::log(static_cast<long double>(p.rho[m])) - expo - 0.5L * std::log(2 * bb));
    }
    const long double mx = *std::max_element(terms.begin(), terms.end());
    long double acc = 0;
    for (auto t : terms) acc += std::exp(t - mx);
    total += mx + std::log(acc);
  }
  return -total / static_cast<long double>(preds.size());
}

inline long double cosine(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < d; ++c) {
    ab += static_cast<long double>(a[i * d + c]) * b[j * d + c];
    aa += static_cast<long double>(a[i * d + c]) * a[i * d + c];
    bb += static_cast<long double>(b[j * d + c]) * b[j * d + c];
  }
  return ab / std::sqrt(aa * bb);
}

// Repeated selection of the least similar remaining candidate (lowest index
// on ties) from those passing the threshold.
inline std::vector<std::size_t> mine(std::size_t anchor, const std::vector<double>& sims, const GuidanceConfig& cfg) {
  const bool filter = cfg.variant != GuidanceVariant::C_no_refine;
  const bool rank = cfg.variant != GuidanceVariant::D_no_topk;
  std::vector<bool> pool(sims.size(), false);
  for (std::size_t j = 0; j < sims.size(); ++j) pool[j] = j != anchor && (!filter || sims[j] < cfg.theta_th);
  std::vector<std::size_t> out;
  if (!rank) {
    for (std::size_t j = 0; j < sims.size(); ++j)
      if (pool[j]) out.push_back(j);
    return out;
  }
  while (out.size() < cfg.k) {
    std::size_t best = sims.size();
    for (std::size_t j = 0; j < sims.size(); ++j)
      if (pool[j] && (best == sims.size() || sims[j] < sims[best])) best = j;
    if (best == sims.size()) break;
    out.push_back(best);
    pool[best] = false;
  }
  return out;
}

struct GuidanceOracle {
  long double loss = 0;
  std::vector<std::vector<std::size_t>> negatives;
};

inline GuidanceOracle guidance_loss(const Tensor& z, const Tensor& sent, const GuidanceConfig& cfg) {
  const std::size_t n = z.dim(0);
  GuidanceOracle r;
  std::vector<std::vector<long double>> L(n, std::vector<long double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) L[i][j] = cosine(z, i, sent, j) / cfg.tau;
  // Variant A always keeps the positive in its denominator.
  const bool literal = cfg.literal_denominator && cfg.variant != GuidanceVariant::A_clip_symmetric;
  auto nce = [&](long double pos, const std::vector<long double>& negs) {
    long double mx = literal ? -INFINITY : pos;
    for (auto v : negs) mx = std::max(mx, v);
    long double acc = literal ? 0 : std::exp(pos - mx);
    for (auto v : negs) acc += std::exp(v - mx);
    return mx + std::log(acc) - pos;
  };
  if (cfg.variant == GuidanceVariant::A_clip_symmetric) {
    long double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<long double> row, col;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) {
          row.push_back(L[i][j]);
          col.push_back(L[j][i]);
        }
      total += nce(L[i][i], row) + nce(L[i][i], col);
    }
    r.loss = total / (2.0L * n);
    return r;
  }
  long double total = 0;
  std::size_t count = 0;
  // Mining is checked for exact agreement, so it runs on the library's own
  // double-precision similarity values rather than re-rounded ones.
  const auto all_sims = sentence_similarities(sent);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> sims(all_sims.begin() + i * n, all_sims.begin() + (i + 1) * n);
    auto neg = mine(i, sims, cfg);
    r.negatives.push_back(neg);
    if (neg.empty()) continue;
    std::vector<long double> a2t, t2a;
    for (auto j : neg) {
      a2t.push_back(L[i][j]);
      t2a.push_back(L[j][i]);
    }
    long double term = nce(L[i][i], a2t);
    if (cfg.variant == GuidanceVariant::B_ours_symmetric) term = 0.5L * (term + nce(L[i][i], t2a));
    total += term;
    ++count;
  }
  r.loss = count ? total / count : 0;
  return r;
}

// Mode m is in the top k when fewer than k modes beat it (higher rho, or
// equal rho at a lower index).
inline bool in_top_k(const std::vector<double>& rho, std::size_t m, std::size_t k) {
  std::size_t better = 0;
  for (std::size_t j = 0; j < rho.size(); ++j)
    if (rho[j] > rho[m] || (rho[j] == rho[m] && j < m)) ++better;
  return better < k;
}

struct MetricOracle {
  double ade = 0, fde = 0, mr = 0;
};

inline MetricOracle evaluate(const std::vector<EvalSample>& samples, std::size_t k) {
  MetricOracle o;
  for (const auto& s : samples) {
    const auto& p = s.prediction;
    double ade = INFINITY, fde = INFINITY;
    for (std::size_t m = 0; m < p.M; ++m) {
      if (!in_top_k(p.rho, m, k)) continue;
      double total = 0;
      for (std::size_t t = 0; t < p.T_f; ++t)
        total += std::hypot(p.mean(m, t).x - s.truth[t].x, p.mean(m, t).y - s.truth[t].y);
      ade = std::min(ade, total / static_cast<double>(p.T_f));
      const std::size_t t = p.T_f - 1;
      fde = std::min(fde, std::hypot(p.mean(m, t).x - s.truth[t].x, p.mean(m, t).y - s.truth[t].y));
    }
    o.ade += ade;
    o.fde += fde;
    o.mr += fde > 2.0 ? 1 : 0;
  }
  const double n = static_cast<double>(samples.size());
  o.ade /= n;
  o.fde /= n;
  o.mr /= n;
  return o;
}

// Random detached GMM prediction with rho on the simplex.
inline GmmPrediction random_prediction(Rng& rng, std::size_t M, std::size_t T_f, double spread = 5.0) {
  GmmPrediction p;
  p.M = M;
  p.T_f = T_f;
  const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
  p.rotation = make_rotation({std::cos(angle), std::sin(angle)});
  double total = 0;
  for (std::size_t m = 0; m < M; ++m) total += p.rho.emplace_back(rng.uniform(0.05, 1.0));
  for (auto& r : p.rho) r /= total;
  for (std::size_t k = 0; k < M * T_f; ++k) {
    p.mu.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread)});
    p.sigma.push_back({rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)});
  }
  return p;
}

}  // namespace trajgraft::oracle

#pragma once

// Per-agent state encoder: displacement/type/position embedding per step,
// temporal self-attention with a learnable summary token, then one shared
// ego-frame cross-attention round between agents.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"
#include "trajgraft/scene.hpp"

namespace trajgraft {

struct TemporalLayer {
  Linear query, key, value;
  Mlp ffn;  // residual feed-forward
};

struct InteractionLayer {
  Linear query, key, value;  // d_s -> d_interact
  Linear out;                // d_interact -> d_s
};

struct EncoderParams {
  Mlp f_geometric;    // 2 -> d_s
  Tensor f_type;      // [types, d_s]
  Mlp f_pe;           // d_pe -> d_s
  Tensor positional;  // [T + 1, d_pe], last row is the summary slot
  Tensor summary;     // [d_s]
  std::vector<TemporalLayer> temporal;
  Mlp f_loc;  // 2 -> d_s
  std::vector<InteractionLayer> interaction;
  std::size_t heads = 1;
  double coord_scale = 1.0;

  std::size_t d_s() const { return summary.numel(); }
  std::size_t horizon() const { return positional.dim(0) - 1; }
};

inline EncoderParams make_encoder_params(ParamFactory& pf, const ModelConfig& cfg, const std::string& prefix = "encoder") {
  EncoderParams p;
  const auto d = cfg.d_s;
  p.f_geometric = pf.mlp(prefix + ".f_geometric", {2, d, d});
  p.f_type = pf.normal(prefix + ".f_type", {kAgentTypeCount, d}, 0.5);
  p.f_pe = pf.mlp(prefix + ".f_pe", {cfg.d_pe, d, d});
  p.positional = pf.normal(prefix + ".positional", {cfg.T + 1, cfg.d_pe}, 1.0);
  p.summary = pf.normal(prefix + ".summary", {d}, 0.5);
  for (std::size_t l = 0; l < cfg.temporal_layers; ++l) {
    const auto lp = prefix + ".temporal." + std::to_string(l);
    TemporalLayer layer;
    layer.query = pf.linear(lp + ".q", d, d, Init::uniform_fan_in, false);
    layer.key = pf.linear(lp + ".k", d, d, Init::uniform_fan_in, false);
    layer.value = pf.linear(lp + ".v", d, d, Init::uniform_fan_in, false);
    layer.ffn = pf.mlp(lp + ".ffn", {d, 2 * d, d});
    p.temporal.push_back(std::move(layer));
  }
  p.f_loc = pf.mlp(prefix + ".f_loc", {2, d, d});
  for (std::size_t l = 0; l < cfg.interact_layers; ++l) {
    const auto lp = prefix + ".interact." + std::to_string(l);
    InteractionLayer layer;
    layer.query = pf.linear(lp + ".q", d, cfg.d_interact, Init::uniform_fan_in, false);
    layer.key = pf.linear(lp + ".k", d, cfg.d_interact, Init::uniform_fan_in, false);
    layer.value = pf.linear(lp + ".v", d, cfg.d_interact, Init::uniform_fan_in, false);
    layer.out = pf.linear(lp + ".out", cfg.d_interact, d, Init::uniform_fan_in, false);
    p.interaction.push_back(std::move(layer));
  }
  p.heads = cfg.interact_heads;
  p.coord_scale = cfg.coord_scale;
  return p;
}

// s^t = f_geometric(p^t - p^{t-1}) + f_type(a) + f_PE(e^t) for every agent;
// returns [n, T, d_s]. The first displacement is zero.
inline Tensor encode_states(const EncoderParams& p, std::span<const Agent* const> agents) {
  const std::size_t n = agents.size();
  const std::size_t T = p.horizon();
  std::vector<double> disp;
  disp.reserve(n * T * 2);
  std::vector<std::size_t> types;
  for (const Agent* a : agents) {
    if (a->observed.size() != T) {
      throw DimensionError("agent has " + std::to_string(a->observed.size()) + " observed steps, encoder expects " +
                           std::to_string(T));
    }
    const auto type = static_cast<std::size_t>(a->type);
    if (type >= kAgentTypeCount) throw LookupError("unknown agent type");
    types.push_back(type);
    for (std::size_t t = 0; t < T; ++t) {
      const Vec2 d = t == 0 ? Vec2{} : a->observed[t] - a->observed[t - 1];
      disp.push_back(d.x);
      disp.push_back(d.y);
    }
  }
  const auto d_s = p.d_s();
  auto geo = reshape(p.f_geometric(Tensor::from({n * T, 2}, std::move(disp))), {n, T, d_s});
  auto type = reshape(gather_rows(p.f_type, types), {n, 1, d_s});
  auto pe = p.f_pe(slice(p.positional, 0, 0, T));
  return add(add(geo, type), pe);
}

inline Tensor encode_states(const EncoderParams& p, const Agent& agent) {
  const Agent* one[] = {&agent};
  return reshape(encode_states(p, std::span<const Agent* const>(one)), {p.horizon(), p.d_s()});
}

// Self-attention over [s^1..s^T, summary]; returns the summary slot, [n, d_s].
inline Tensor temporal_encode(const EncoderParams& p, const Tensor& states) {
  if (states.rank() != 3 || states.dim(1) == 0) throw ContractError("temporal_encode needs a nonempty [n, T, d_s] sequence");
  const std::size_t n = states.dim(0), T = states.dim(1), d = states.dim(2);
  if (T != p.horizon() || d != p.d_s()) throw DimensionError("temporal_encode: sequence " + shape_str(states.shape()) + " does not match parameters");
  auto token = add(reshape(p.summary, {1, d}), p.f_pe(slice(p.positional, 0, T, T + 1)));
  auto tokens = add(Tensor::zeros({n, 1, d}), token);
  auto x = concat({states, tokens}, 1);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (const auto& layer : p.temporal) {
    auto q = layer.query(x), k = layer.key(x), v = layer.value(x);
    auto attn = softmax(scale(bmm(q, transpose(k)), s), 2);
    x = add(x, bmm(attn, v));
    x = add(x, layer.ffn(x));
  }
  return reshape(slice(x, 1, T, T + 1), {n, d});
}

// z_i = s'_i + f_loc(p_i^T), then cross-attention among all agents with a
// residual connection, computed once in the ego frame. Returns [n, d_s].
inline Tensor interact(const EncoderParams& p, const Tensor& embeddings, std::span<const Vec2> positions) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != positions.size()) {
    throw DimensionError("interact: " + std::to_string(positions.size()) + " positions for embeddings " +
                         shape_str(embeddings.shape()));
  }
  const std::size_t n = positions.size();
  std::vector<double> loc;
  loc.reserve(2 * n);
  for (auto q : positions) {
    loc.push_back(q.x / p.coord_scale);
    loc.push_back(q.y / p.coord_scale);
  }
  auto z = add(embeddings, p.f_loc(Tensor::from({n, 2}, std::move(loc))));
  for (const auto& layer : p.interaction) {
    auto q = layer.query(z), k = layer.key(z), v = layer.value(z);
    const std::size_t di = q.dim(1), dh = di / p.heads;
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < p.heads; ++h) {
      heads.push_back(attention(slice(q, 1, h * dh, (h + 1) * dh), slice(k, 1, h * dh, (h + 1) * dh),
                                slice(v, 1, h * dh, (h + 1) * dh), 1.0 / std::sqrt(static_cast<double>(dh))));
    }
    auto merged = p.heads == 1 ? heads.front() : concat(heads, 1);
    z = add(z, layer.out(merged));
  }
  return z;
}

}  // namespace trajgraft

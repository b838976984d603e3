#pragma once

// End-to-end model: state encoder -> refinement blocks over the BEV grid ->
// transformation + GMM decoder, plus the caption guidance branch.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"
#include "trajgraft/scene.hpp"
#include "trajgraft/state_encoder.hpp"
#include "trajgraft/text_guidance.hpp"
#include "trajgraft/trajectory_decoder.hpp"
#include "trajgraft/visual_semantic.hpp"

namespace trajgraft {

struct Model {
  ModelConfig cfg;
  ParameterSet params;
  EncoderParams encoder;
  std::vector<DeformableParams> blocks;
  DecoderParams aux_decoder;
  DecoderParams decoder;
  PoolingParams pooling;
  WordEmbeddingTable words{1, 0};

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
};

inline Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  RunConfig probe;
  probe.train.model = cfg;
  validate(probe);
  Model m;
  m.cfg = cfg;
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  ParamFactory pf(m.params, rng);
  m.encoder = make_encoder_params(pf, cfg, "encoder");
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) m.blocks.push_back(make_deformable_params(pf, cfg, "scene.block" + std::to_string(b)));
  m.aux_decoder = make_decoder_params(pf, cfg, "aux_decoder");
  m.decoder = make_decoder_params(pf, cfg, "decoder");
  m.pooling = make_pooling_params(pf, cfg, "guidance");
  m.words = WordEmbeddingTable(cfg.d_w, cfg.word_seed);
  return m;
}

// Per-scene inputs converted once: grid tensor, rotations, targets and
// caption word matrices.
struct PreparedScene {
  const Scene* scene = nullptr;
  std::vector<const Agent*> agents;
  Tensor grid;
  double extent = 0.0;
  std::vector<Rotation> rotations;
  std::vector<Vec2> current;
  Tensor future;  // [n, T_f, 2]
  std::vector<std::array<Tensor, 3>> caption_words;
};

inline void check_compatible(const ModelConfig& cfg, const Scene& s) {
  if (s.agents.empty()) throw ConfigError("scene " + std::to_string(s.scene_id) + " has no agents");
  if (s.bev_image.d != cfg.d_bev || s.bev_map.d != cfg.d_map) {
    throw ConfigError("scene " + std::to_string(s.scene_id) + " has BEV depth " + std::to_string(s.bev_image.d) + "+" +
                      std::to_string(s.bev_map.d) + ", model expects " + std::to_string(cfg.d_bev) + "+" +
                      std::to_string(cfg.d_map));
  }
  for (const auto& a : s.agents) {
    if (a.observed.size() != cfg.T || a.future.size() != cfg.T_f) {
      throw ConfigError("scene " + std::to_string(s.scene_id) + " track lengths " + std::to_string(a.observed.size()) +
                        "/" + std::to_string(a.future.size()) + " do not match model T/T_f " + std::to_string(cfg.T) +
                        "/" + std::to_string(cfg.T_f));
    }
  }
}

inline PreparedScene prepare_scene(const Model& model, const Scene& s) {
  check_compatible(model.cfg, s);
  PreparedScene p;
  p.scene = &s;
  for (const auto& a : s.agents) {
    p.agents.push_back(&a);
    p.rotations.push_back(make_rotation(a.heading));
    p.current.push_back(a.current());
    p.caption_words.push_back({model.words.embed_caption(a.captions[0]), model.words.embed_caption(a.captions[1]),
                               model.words.embed_caption(a.captions[2])});
  }
  p.grid = compose_bev(s).to_tensor();
  p.extent = s.grid_extent;
  p.future = future_tensor(p.agents, model.cfg.T_f);
  return p;
}

inline std::vector<PreparedScene> prepare_scenes(const Model& model, const std::vector<Scene>& scenes) {
  std::vector<PreparedScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_scene(model, s));
  return out;
}

struct ForwardResult {
  Tensor z_interact;
  Tensor z_scene;
  Tensor z_aligned;
  GmmTensors prediction;
  std::vector<GmmTensors> aux;
  std::vector<Tensor> references;
};

inline ForwardResult forward(const Model& model, const PreparedScene& s) {
  ForwardResult r;
  auto states = encode_states(model.encoder, s.agents);
  auto temporal = temporal_encode(model.encoder, states);
  r.z_interact = interact(model.encoder, temporal, s.current);
  auto refined = refine_blocks(r.z_interact, s.grid, s.extent, s.rotations, s.current, model.aux_decoder, model.blocks);
  r.z_scene = refined.z_scene;
  r.aux = std::move(refined.aux);
  r.references = std::move(refined.references);
  r.z_aligned = transform_feature(r.z_scene, s.rotations, model.decoder.transform);
  r.prediction = decode(r.z_aligned, s.rotations, s.current, model.decoder);
  return r;
}

// Caption used for agent `agent_index` at a training step.
inline std::size_t caption_index(std::size_t step, std::size_t agent_index) { return (step + agent_index) % 3; }

// Sentence embeddings [n, d_s] for a scene at a given step.
inline Tensor scene_sentences(const Model& model, const PreparedScene& s, std::size_t step) {
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    rows.push_back(pool_sentence(s.caption_words[i][caption_index(step, i)], model.pooling));
  }
  return concat(rows, 0);
}

struct LossTerms {
  Tensor traj;
  Tensor aux;
  Tensor cl;
  Tensor total;
  std::vector<std::vector<std::vector<std::size_t>>> negatives;  // per mining group, per anchor
  std::vector<std::vector<double>> similarities;                  // per mining group, caption cosine [n*n]
};

// Eq-7 style objective averaged over the scenes of one step.
inline LossTerms compute_loss(const Model& model, std::span<const PreparedScene* const> batch, std::size_t step,
                              const LossConfig& loss_cfg, const GuidanceConfig& guide_cfg,
                              const Tensor* b_override = nullptr) {
  if (batch.empty()) throw ContractError("compute_loss needs at least one scene");
  const Tensor b = b_override ? *b_override : Tensor::scalar(loss_cfg.b);
  std::vector<Tensor> traj, aux, cl, z_all, t_all;
  for (const PreparedScene* s : batch) {
    auto fwd = forward(model, *s);
    traj.push_back(reshape(traj_nll(fwd.prediction, s->future, b, loss_cfg.literal_exponent), {1}));
    std::vector<Tensor> block_terms;
    for (const auto& g : fwd.aux) block_terms.push_back(reshape(traj_nll(g, s->future, b, loss_cfg.literal_exponent), {1}));
    aux.push_back(reshape(mean(concat(block_terms, 0)), {1}));
    z_all.push_back(fwd.z_scene);
    t_all.push_back(scene_sentences(model, *s, step));
  }
  LossTerms out;
  if (guide_cfg.cross_scene) {
    auto sentences = concat(t_all, 0);
    auto g = guidance_loss(concat(z_all, 0), sentences, guide_cfg);
    out.cl = g.loss;
    out.similarities.push_back(sentence_similarities(sentences));
    out.negatives.push_back(std::move(g.negatives));
  } else {
    for (std::size_t k = 0; k < batch.size(); ++k) {
      auto g = guidance_loss(z_all[k], t_all[k], guide_cfg);
      cl.push_back(reshape(g.loss, {1}));
      out.negatives.push_back(std::move(g.negatives));
      out.similarities.push_back(sentence_similarities(t_all[k]));
    }
    out.cl = mean(concat(cl, 0));
  }
  out.traj = mean(concat(traj, 0));
  out.aux = mean(concat(aux, 0));
  const std::array<Tensor, 1> aux_terms{out.aux};
  out.total = total_loss(out.traj, aux_terms, out.cl, loss_cfg);
  return out;
}

}  // namespace trajgraft

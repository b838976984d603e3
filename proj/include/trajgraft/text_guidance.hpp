#pragma once

// Caption-driven contrastive guidance: frozen word vectors, attention pooling
// into sentence embeddings, threshold/top-k negative mining and the InfoNCE
// family of losses (variants A-E).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"
#include "trajgraft/random.hpp"

namespace trajgraft {

// Lowercase, split on anything that is not a letter or digit.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Token -> unit vector, seeded from a hash of the token. Frozen.
class WordEmbeddingTable {
 public:
  WordEmbeddingTable(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

  std::size_t dim() const { return dim_; }

  std::vector<double> embed(std::string_view token) const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char c : token) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    Rng rng(mix_seed(seed_, h));
    std::vector<double> v(dim_);
    double ss = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      ss += x * x;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& x : v) x *= inv;
    return v;
  }

  // [tokens, dim] for a caption.
  Tensor embed_caption(std::string_view caption) const {
    const auto tokens = tokenize(caption);
    if (tokens.empty()) throw ContractError("caption has no tokens");
    std::vector<double> data;
    data.reserve(tokens.size() * dim_);
    for (const auto& t : tokens) {
      auto v = embed(t);
      data.insert(data.end(), v.begin(), v.end());
    }
    return Tensor::from({tokens.size(), dim_}, std::move(data));
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct PoolingParams {
  Tensor query;    // [d_w]
  Linear key;      // d_w -> d_w
  Linear project;  // d_w -> d_s
};

inline PoolingParams make_pooling_params(ParamFactory& pf, const ModelConfig& cfg, const std::string& prefix = "guidance") {
  PoolingParams p;
  p.query = pf.normal(prefix + ".query", {cfg.d_w}, 1.0 / std::sqrt(double(cfg.d_w)));
  p.key = pf.linear(prefix + ".key", cfg.d_w, cfg.d_w, Init::uniform_fan_in, false);
  p.project = pf.linear(prefix + ".project", cfg.d_w, cfg.d_s, Init::uniform_fan_in, false);
  return p;
}

// A learned query attends over the word vectors; the weighted sum is projected
// to the agent embedding width. words[L, d_w] -> [1, d_s].
inline Tensor pool_sentence(const Tensor& words, const PoolingParams& p) {
  if (words.rank() != 2 || words.dim(0) == 0) throw ContractError("pool_sentence needs at least one word");
  const std::size_t d_w = words.dim(1);
  auto scores = scale(matmul(p.key(words), reshape(p.query, {d_w, 1})), 1.0 / std::sqrt(static_cast<double>(d_w)));
  auto alpha = softmax(scores, 0);
  return p.project(matmul(transpose(alpha), words));
}

inline Tensor pool_sentence(std::string_view caption, const WordEmbeddingTable& table, const PoolingParams& p) {
  return pool_sentence(table.embed_caption(caption), p);
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw ContractError("cosine_sim of a zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

// Negatives for `anchor` given its similarity to every sentence in the batch
// (the anchor's own entry is ignored). Candidates below theta_th, sorted by
// similarity ascending with index tie-break, truncated to k. Variant C skips
// the threshold; variant D skips the sort and the cap.
inline std::vector<std::size_t> mine_negatives(std::size_t anchor, std::span<const double> sims,
                                               const GuidanceConfig& cfg) {
  if (anchor >= sims.size()) throw ContractError("mine_negatives: anchor outside batch");
  const bool filter = cfg.variant != GuidanceVariant::C_no_refine;
  const bool rank_and_cap = cfg.variant != GuidanceVariant::D_no_topk;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (j == anchor) continue;
    if (filter && !(sims[j] < cfg.theta_th)) continue;
    out.push_back(j);
  }
  if (rank_and_cap) {
    std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) { return sims[a] < sims[b]; });
    if (out.size() > cfg.k) out.resize(cfg.k);
  }
  return out;
}

// Pairwise sentence cosine similarities [n, n] from detached values.
inline std::vector<double> sentence_similarities(const Tensor& sentences) {
  const std::size_t n = sentences.dim(0), d = sentences.dim(1);
  std::vector<double> sims(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sims[i * n + j] = cosine_sim(sentences.data().subspan(i * d, d), sentences.data().subspan(j * d, d));
  return sims;
}

inline std::vector<std::vector<std::size_t>> mine_all_negatives(const Tensor& sentences, const GuidanceConfig& cfg) {
  const std::size_t n = sentences.dim(0);
  const auto sims = sentence_similarities(sentences);
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mine_negatives(i, std::span(sims).subspan(i * n, n), cfg);
  return out;
}

struct GuidanceResult {
  Tensor loss;
  std::vector<std::vector<std::size_t>> negatives;  // per anchor; empty for variant A
};

namespace detail {

// -log softmax(logits)[0] over a 1-D selection of a flattened similarity
// matrix: positive first, then negatives.
inline Tensor info_nce_term(const Tensor& flat_logits, const std::vector<std::size_t>& idx, bool literal) {
  auto chosen = reshape(gather_rows(flat_logits, idx), {1, idx.size()});
  auto positive = reshape(slice(chosen, 1, 0, 1), {});
  auto denom_src = literal ? slice(chosen, 1, 1, idx.size()) : chosen;
  return sub(reshape(logsumexp(denom_src, 1), {}), positive);
}

}  // namespace detail

// z[n, d_s] agent embeddings, sentences[n, d_s]; row i of each is a positive pair.
inline GuidanceResult guidance_loss(const Tensor& z, const Tensor& sentences, const GuidanceConfig& cfg) {
  if (z.rank() != 2 || sentences.shape() != z.shape()) {
    throw DimensionError("guidance_loss: embeddings " + shape_str(z.shape()) + " vs sentences " + shape_str(sentences.shape()));
  }
  const std::size_t n = z.dim(0);
  GuidanceResult res;
  auto logits = scale(cosine_similarity_matrix(z, sentences), 1.0 / cfg.tau);  // [agent, sentence]
  if (cfg.variant == GuidanceVariant::A_clip_symmetric) {
    std::vector<double> eye(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    auto diag = Tensor::from({n, n}, std::move(eye));
    auto rows = sum(mul(log_softmax(logits, 1), diag));
    auto cols = sum(mul(log_softmax(logits, 0), diag));
    res.loss = scale(add(rows, cols), -0.5 / static_cast<double>(n));
    return res;
  }
  res.negatives = mine_all_negatives(sentences, cfg);
  auto flat = reshape(logits, {n * n, 1});
  std::vector<Tensor> terms;
  const bool symmetric = cfg.variant == GuidanceVariant::B_ours_symmetric;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& neg = res.negatives[i];
    if (neg.empty()) continue;
    std::vector<std::size_t> a2t{i * n + i};
    for (auto j : neg) a2t.push_back(i * n + j);
    auto term = detail::info_nce_term(flat, a2t, cfg.literal_denominator);
    if (symmetric) {
      std::vector<std::size_t> t2a{i * n + i};
      for (auto j : neg) t2a.push_back(j * n + i);
      term = scale(add(term, detail::info_nce_term(flat, t2a, cfg.literal_denominator)), 0.5);
    }
    terms.push_back(reshape(term, {1}));
  }
  if (terms.empty()) {
    res.loss = Tensor::scalar(0.0);
    return res;
  }
  res.loss = mean(concat(terms, 0));
  return res;
}

}  // namespace trajgraft

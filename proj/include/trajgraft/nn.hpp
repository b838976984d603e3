#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/random.hpp"
#include "trajgraft/tensor.hpp"

namespace trajgraft {

// Named learnable tensors, ordered by path so iteration (and therefore
// checkpoints and finite-difference sweeps) is deterministic.
class ParameterSet {
 public:
  Tensor add(const std::string& path, Shape shape, std::vector<double> values) {
    if (params_.count(path)) throw ConfigError("duplicate parameter path '" + path + "'");
    auto t = Tensor::from(std::move(shape), std::move(values), true);
    params_.emplace(path, t);
    return t;
  }

  const Tensor& at(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end()) throw LookupError("no parameter '" + path + "'");
    return it->second;
  }
  Tensor& at(const std::string& path) {
    auto it = params_.find(path);
    if (it == params_.end()) throw LookupError("no parameter '" + path + "'");
    return it->second;
  }
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.mutable_grad();
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  std::map<std::string, Tensor> params_;
};

// y = x W + b, W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // may be undefined

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }
};

// Affine layers with ReLU between them and none after the last.
inline Tensor mlp_forward(const Tensor& x, std::span<const Linear> layers) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (h.shape().back() != layers[i].in_features()) {
      throw DimensionError("mlp layer " + std::to_string(i) + " expects " + std::to_string(layers[i].in_features()) +
                           " inputs, got " + shape_str(h.shape()));
    }
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

struct Mlp {
  std::vector<Linear> layers;

  Tensor operator()(const Tensor& x) const { return mlp_forward(x, layers); }
  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }
};

enum class Init { uniform_fan_in, zeros };

// Creates parameters under a path prefix, drawing initial values from one
// seeded stream in creation order.
class ParamFactory {
 public:
  ParamFactory(ParameterSet& set, Rng& rng) : set_(set), rng_(rng) {}

  Linear linear(const std::string& path, std::size_t in, std::size_t out, Init init = Init::uniform_fan_in,
                bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    auto draw = [&](std::size_t n) {
      std::vector<double> v(n, 0.0);
      if (init == Init::uniform_fan_in)
        for (auto& x : v) x = rng_.uniform(-bound, bound);
      return v;
    };
    Linear l;
    l.weight = set_.add(path + ".weight", {in, out}, draw(in * out));
    if (with_bias) l.bias = set_.add(path + ".bias", {out}, draw(out));
    return l;
  }

  // dims = {in, hidden..., out}
  Mlp mlp(const std::string& path, const std::vector<std::size_t>& dims, Init last = Init::uniform_fan_in) {
    if (dims.size() < 2) throw ConfigError("mlp '" + path + "' needs at least input and output dims");
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const Init init = i + 2 == dims.size() ? last : Init::uniform_fan_in;
      m.layers.push_back(linear(path + "." + std::to_string(i), dims[i], dims[i + 1], init));
    }
    return m;
  }

  Tensor normal(const std::string& path, Shape shape, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng_.normal(0.0, stddev);
    return set_.add(path, std::move(shape), std::move(v));
  }

  Tensor zeros(const std::string& path, Shape shape) {
    const std::size_t n = shape_numel(shape);
    return set_.add(path, std::move(shape), std::vector<double>(n, 0.0));
  }

 private:
  ParameterSet& set_;
  Rng& rng_;
};

}  // namespace trajgraft

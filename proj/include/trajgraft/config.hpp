#pragma once

// Run configuration plus the flat `section.key=value` text format used for
// config files, command-line overrides and the resolved-config echo.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/scene_synth.hpp"

namespace trajgraft {

struct ModelConfig {
  std::size_t T = 4;
  std::size_t T_f = 12;
  std::size_t d_s = 64;
  std::size_t d_pe = 16;
  std::size_t d_interact = 64;
  std::size_t interact_heads = 1;
  std::size_t temporal_layers = 1;
  std::size_t interact_layers = 1;
  std::size_t hidden = 128;
  std::size_t d_w = 32;
  std::size_t d_bev = kBevImageChannels;
  std::size_t d_map = kBevMapChannels;
  std::size_t d_v = 16;
  std::size_t H = 2;
  std::size_t O = 2;
  std::size_t M = 10;
  std::size_t n_blocks = 2;
  double coord_scale = 10.0;  // meters per unit of f_loc input
  std::uint64_t word_seed = 7;
};

struct LossConfig {
  double b = 1.0;
  double lambda_aux = 0.5;
  double lambda_cl = 0.2;
  bool literal_exponent = false;
};

enum class GuidanceVariant { A_clip_symmetric, B_ours_symmetric, C_no_refine, D_no_topk, E_ours };

inline constexpr std::array<std::string_view, 5> kGuidanceVariantNames = {"A", "B", "C", "D", "E"};

struct GuidanceConfig {
  double theta_th = 0.8;
  std::size_t k = 8;
  double tau = 0.1;
  GuidanceVariant variant = GuidanceVariant::E_ours;
  bool literal_denominator = false;  // negatives only in the InfoNCE denominator
  bool cross_scene = false;          // mine negatives across every scene in the step
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t steps = 1000;
  std::size_t batch_scenes = 4;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  ModelConfig model;
  LossConfig loss;
  GuidanceConfig guidance;
};

struct RunConfig {
  TrainConfig train;
  SynthConfig synth;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad value '" + std::string(text) + "' for " + key);
  }
  return value;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean '" + std::string(text) + "' for " + key);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(const std::string&, std::string_view)> set;
  std::function<std::string()> get;
};

inline Field size_field(std::size_t& ref) {
  return {[&ref](const std::string& k, std::string_view v) { ref = parse_number<std::size_t>(k, v); },
          [&ref] { return std::to_string(ref); }};
}
inline Field u64_field(std::uint64_t& ref) {
  return {[&ref](const std::string& k, std::string_view v) { ref = parse_number<std::uint64_t>(k, v); },
          [&ref] { return std::to_string(ref); }};
}
inline Field double_field(double& ref) {
  return {[&ref](const std::string& k, std::string_view v) { ref = parse_number<double>(k, v); },
          [&ref] { return format_double(ref); }};
}
inline Field bool_field(bool& ref) {
  return {[&ref](const std::string& k, std::string_view v) { ref = parse_bool(k, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

}  // namespace detail

inline std::string_view to_string(GuidanceVariant v) { return kGuidanceVariantNames[static_cast<std::size_t>(v)]; }

inline GuidanceVariant parse_guidance_variant(std::string_view s) {
  for (std::size_t i = 0; i < kGuidanceVariantNames.size(); ++i)
    if (kGuidanceVariantNames[i] == s) return static_cast<GuidanceVariant>(i);
  throw ConfigError("unknown guidance variant '" + std::string(s) + "' (expected A-E)");
}

// Key table binding every configurable field of a RunConfig.
inline std::map<std::string, detail::Field> config_fields(RunConfig& c) {
  using namespace detail;
  auto& t = c.train;
  auto& m = t.model;
  std::map<std::string, Field> f;
  f["train.seed"] = u64_field(t.seed);
  f["train.lr"] = double_field(t.lr);
  f["train.steps"] = size_field(t.steps);
  f["train.batch_scenes"] = size_field(t.batch_scenes);
  f["train.optimizer"] = {[&t](const std::string& k, std::string_view v) {
                            if (v == "sgd") t.optimizer = OptimizerKind::sgd;
                            else if (v == "adam") t.optimizer = OptimizerKind::adam;
                            else throw ConfigError("bad optimizer '" + std::string(v) + "' for " + k);
                          },
                          [&t] { return std::string(t.optimizer == OptimizerKind::sgd ? "sgd" : "adam"); }};
  f["train.beta1"] = double_field(t.beta1);
  f["train.beta2"] = double_field(t.beta2);
  f["train.eps"] = double_field(t.eps);
  f["model.T"] = size_field(m.T);
  f["model.T_f"] = size_field(m.T_f);
  f["model.d_s"] = size_field(m.d_s);
  f["model.d_pe"] = size_field(m.d_pe);
  f["model.d_interact"] = size_field(m.d_interact);
  f["model.interact_heads"] = size_field(m.interact_heads);
  f["model.temporal_layers"] = size_field(m.temporal_layers);
  f["model.interact_layers"] = size_field(m.interact_layers);
  f["model.hidden"] = size_field(m.hidden);
  f["model.d_w"] = size_field(m.d_w);
  f["model.d_bev"] = size_field(m.d_bev);
  f["model.d_map"] = size_field(m.d_map);
  f["model.d_v"] = size_field(m.d_v);
  f["model.H"] = size_field(m.H);
  f["model.O"] = size_field(m.O);
  f["model.M"] = size_field(m.M);
  f["model.n_blocks"] = size_field(m.n_blocks);
  f["model.coord_scale"] = double_field(m.coord_scale);
  f["model.word_seed"] = u64_field(m.word_seed);
  f["loss.b"] = double_field(t.loss.b);
  f["loss.lambda_aux"] = double_field(t.loss.lambda_aux);
  f["loss.lambda_cl"] = double_field(t.loss.lambda_cl);
  f["loss.literal_exponent"] = bool_field(t.loss.literal_exponent);
  f["guidance.theta_th"] = double_field(t.guidance.theta_th);
  f["guidance.k"] = size_field(t.guidance.k);
  f["guidance.tau"] = double_field(t.guidance.tau);
  f["guidance.variant"] = {[&t](const std::string&, std::string_view v) { t.guidance.variant = parse_guidance_variant(v); },
                           [&t] { return std::string(to_string(t.guidance.variant)); }};
  f["guidance.literal_denominator"] = bool_field(t.guidance.literal_denominator);
  f["guidance.cross_scene"] = bool_field(t.guidance.cross_scene);
  f["scene.T"] = size_field(c.synth.T);
  f["scene.T_f"] = size_field(c.synth.T_f);
  f["scene.dt"] = double_field(c.synth.dt);
  f["scene.grid"] = size_field(c.synth.grid);
  f["scene.extent"] = double_field(c.synth.extent);
  f["scene.noise"] = double_field(c.synth.noise);
  f["scene.spawn_radius"] = double_field(c.synth.spawn_radius);
  f["scene.eps_stat"] = double_field(c.synth.thresholds.eps_stat);
  f["scene.theta_turn_deg"] = double_field(c.synth.thresholds.theta_turn_deg);
  f["scene.d_lane"] = double_field(c.synth.thresholds.d_lane);
  return f;
}

inline void validate(const RunConfig& c) {
  const auto& t = c.train;
  const auto& m = t.model;
  for (auto [name, v] : {std::pair{"T", m.T}, {"T_f", m.T_f}, {"d_s", m.d_s}, {"d_pe", m.d_pe},
                         {"d_interact", m.d_interact}, {"interact_heads", m.interact_heads}, {"hidden", m.hidden},
                         {"d_w", m.d_w}, {"d_bev", m.d_bev}, {"d_map", m.d_map}, {"d_v", m.d_v}, {"H", m.H},
                         {"O", m.O}, {"M", m.M}, {"n_blocks", m.n_blocks}}) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
  }
  if (m.T < 2) throw ConfigError("model.T must be >= 2");
  if (m.d_interact % m.interact_heads != 0) throw ConfigError("model.d_interact must be divisible by interact_heads");
  if (m.coord_scale <= 0) throw ConfigError("model.coord_scale must be > 0");
  if (!(t.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (t.batch_scenes < 1) throw ConfigError("train.batch_scenes must be >= 1");
  if (!(t.loss.b > 0)) throw ConfigError("loss.b must be > 0");
  if (t.loss.lambda_aux < 0 || t.loss.lambda_cl < 0) throw ConfigError("loss weights must be >= 0");
  if (!(t.guidance.tau > 0)) throw ConfigError("guidance.tau must be > 0");
  if (t.guidance.theta_th < 0 || t.guidance.theta_th > 1) throw ConfigError("guidance.theta_th must be in [0,1]");
  if (t.guidance.k < 1) throw ConfigError("guidance.k must be >= 1");
}

inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  auto fields = config_fields(c);
  auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(key, value);
}

inline void apply_config_text(RunConfig& c, std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    apply_override(c, line);
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(c, ss.str());
}

inline std::string to_config_text(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& [key, field] : config_fields(copy)) out += key + "=" + field.get() + "\n";
  return out;
}

}  // namespace trajgraft

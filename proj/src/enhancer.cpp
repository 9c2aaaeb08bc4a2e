// Copyright 2026 The CPA-Enhancer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpa/enhancer.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"
#include "json.hpp"

namespace cpa {

namespace {

using json = nlohmann::json;

constexpr Conv2dOptions kDown{.stride = 2, .padding = 1};
constexpr Conv2dOptions kUp{.stride = 2, .padding = 1, .groups = 1, .transposed = true, .output_padding = 1};

int level_channels(const EnhancerConfig& cfg, int l) { return cfg.base_channels << l; }

std::string block_prefix(const EnhancerConfig& cfg, int level) {
  return (cfg.block == BlockKind::cpb ? "cpb.L" : "spb.L") + std::to_string(level);
}

std::string proj_name(int level) { return "cgm.proj" + std::to_string(level) + ".w"; }

Tensor conv_named(const Tensor& x, const ParamStore& p, const std::string& name, const Conv2dOptions& opt = {}) {
  return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), opt);
}

void add_conv(ParamStore& params, const std::string& name, int cout, int cin, int k, std::mt19937_64& rng,
              double fan_in = 0.0) {
  params.add(name + ".w", lecun_uniform({cout, cin, k, k}, fan_in > 0.0 ? fan_in : cin * k * k, rng));
  params.add(name + ".b", Tensor::zeros({1, cout, 1, 1}));
}

void add_tconv(ParamStore& params, const std::string& name, int cin, int cout, std::mt19937_64& rng) {
  params.add(name + ".w", lecun_uniform({cin, cout, 3, 3}, cout * 9, rng));
  params.add(name + ".b", Tensor::zeros({1, cout, 1, 1}));
}

std::string block_name(BlockKind b) { return b == BlockKind::cpb ? "cpb" : "spb"; }

BlockKind parse_block(const std::string& s) {
  if (s == "cpb") return BlockKind::cpb;
  if (s == "spb") return BlockKind::spb;
  throw ConfigError("unknown block kind '" + s + "' (cpb, spb)");
}

}  // namespace

EnhancerConfig toy_config() {
  EnhancerConfig cfg;
  cfg.base_channels = 8;
  cfg.prompt = {.hat_c = 64, .hat_h = 8, .hat_w = 8, .chained = true};
  return cfg;
}

int decoder_channels(const EnhancerConfig& cfg, int level) {
  if (level < 1 || level > 3) throw ConfigError("decoder level must be 1, 2 or 3");
  return level_channels(cfg, level);
}

CpbConfig cpb_config(const EnhancerConfig& cfg, int level) {
  return {decoder_channels(cfg, level), cfg.splits, cfg.reduction, cfg.heads, cfg.expansion, cfg.sigma_mode};
}

void validate(const EnhancerConfig& cfg) {
  if (cfg.levels != 4) throw ConfigError("the enhancer has exactly 4 levels, got " + std::to_string(cfg.levels));
  if (cfg.base_channels < 1) throw ConfigError("base channels must be positive");
  if (cfg.rfa_kernel < 1 || cfg.rfa_kernel % 2 == 0) throw ConfigError("RFA kernel must be odd");
  validate(cfg.prompt);
  if (cfg.block == BlockKind::cpb) {
    for (int level = 1; level <= 3; ++level) validate(cpb_config(cfg, level));
  }
}

std::string to_json(const EnhancerConfig& cfg) {
  json j;
  j["base_channels"] = cfg.base_channels;
  j["levels"] = cfg.levels;
  j["prompt_c"] = cfg.prompt.hat_c;
  j["prompt_h"] = cfg.prompt.hat_h;
  j["prompt_w"] = cfg.prompt.hat_w;
  j["chained_prompts"] = cfg.prompt.chained;
  j["splits"] = cfg.splits;
  j["reduction"] = cfg.reduction;
  j["heads"] = cfg.heads;
  j["expansion"] = cfg.expansion;
  j["sigma_mode"] = to_string(cfg.sigma_mode);
  j["block"] = block_name(cfg.block);
  j["rfa_enabled"] = cfg.rfa_enabled;
  j["rfa_kernel"] = cfg.rfa_kernel;
  j["elem_type"] = cfg.elem_type == DType::f32 ? "f32" : "f64";
  return j.dump(2);
}

EnhancerConfig enhancer_config_from_json(const std::string& text) {
  EnhancerConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("enhancer config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known{"base_channels", "levels",    "prompt_c",    "prompt_h",
                                               "prompt_w",      "chained_prompts", "splits", "reduction",
                                               "heads",         "expansion", "sigma_mode",  "block",
                                               "rfa_enabled",   "rfa_kernel", "elem_type"};
      if (!known.count(key)) throw ConfigError("unknown enhancer config field '" + key + "'");
    }
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.levels = j.value("levels", cfg.levels);
    cfg.prompt.hat_c = j.value("prompt_c", cfg.prompt.hat_c);
    cfg.prompt.hat_h = j.value("prompt_h", cfg.prompt.hat_h);
    cfg.prompt.hat_w = j.value("prompt_w", cfg.prompt.hat_w);
    cfg.prompt.chained = j.value("chained_prompts", cfg.prompt.chained);
    cfg.splits = j.value("splits", cfg.splits);
    cfg.reduction = j.value("reduction", cfg.reduction);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.expansion = j.value("expansion", cfg.expansion);
    cfg.sigma_mode = parse_sigma_mode(j.value("sigma_mode", std::string("softmax")));
    cfg.block = parse_block(j.value("block", std::string("cpb")));
    cfg.rfa_enabled = j.value("rfa_enabled", cfg.rfa_enabled);
    cfg.rfa_kernel = j.value("rfa_kernel", cfg.rfa_kernel);
    const std::string et = j.value("elem_type", std::string("f64"));
    if (et != "f32" && et != "f64") throw ConfigError("elem_type must be f32 or f64");
    cfg.elem_type = et == "f32" ? DType::f32 : DType::f64;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad enhancer config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

EnhancerConfig load_enhancer_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return enhancer_config_from_json(ss.str());
}

void save_enhancer_config(const std::filesystem::path& path, const EnhancerConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write config " + path.string());
  os << to_json(cfg) << "\n";
}

void init_rfa(ParamStore& params, const std::string& prefix, int cin, int cout, int k, bool attention,
              std::mt19937_64& rng) {
  // The attention averages the k*k taps of each channel, so the aggregation
  // sees an effective fan-in of cin / (k*k) rather than cin * k * k.
  add_conv(params, prefix, cout, cin, k, rng, attention ? static_cast<double>(cin) / (k * k) : 0.0);
  if (attention) {
    // Grouped 1x1 conv: each input channel owns k*k logits.
    params.add(prefix + ".att.w", kaiming_uniform({cin * k * k, 1, 1, 1}, 1, rng));
    params.add(prefix + ".att.b", Tensor::zeros({1, cin * k * k, 1, 1}));
  }
}

Tensor rfa_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, int k) {
  const Shape s = x.shape();
  const Tensor box = Tensor::full({s.c, 1, k, k}, 1.0 / (k * k));
  const Tensor pooled = conv2d(x, box, {}, {.stride = 1, .padding = k / 2, .groups = s.c});
  const Tensor logits =
      conv2d(pooled, p.at(prefix + ".att.w"), p.at(prefix + ".att.b"), {.stride = 1, .padding = 0, .groups = s.c});
  const Tensor grouped = reshape(logits, {s.n * s.c, k * k, s.h, s.w});
  return reshape(softmax(grouped, 1), {s.n, s.c * k * k, s.h, s.w});
}

Tensor rfa_conv(const Tensor& x, const ParamStore& p, const std::string& prefix, int k, bool enabled) {
  if (k < 1 || k % 2 == 0) throw ConfigError("RFA kernel must be odd, got " + std::to_string(k));
  const Tensor& w = p.at(prefix + ".w");
  const Tensor& b = p.at(prefix + ".b");
  if (!enabled) return conv2d(x, w, b, {.stride = 1, .padding = k / 2});
  const Shape ws = w.shape();
  const Tensor weighted = mul(unfold(x, k), rfa_attention(x, p, prefix, k));
  return conv2d(weighted, reshape(w, {ws.n, ws.c * k * k, 1, 1}), b);
}

ParamStore init_params(const EnhancerConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  ParamStore p;
  const int k = cfg.rfa_kernel;
  const bool att = cfg.rfa_enabled;
  const int c = cfg.base_channels;

  init_rfa(p, "enc.embed", 3, c, k, att, rng);
  for (int l = 1; l <= 3; ++l) {
    add_conv(p, "enc.down" + std::to_string(l), level_channels(cfg, l), level_channels(cfg, l - 1), 3, rng);
    init_rfa(p, "enc.rfa" + std::to_string(l), level_channels(cfg, l), level_channels(cfg, l), k, att, rng);
  }
  // Decoder: up2 8C -> 4C, up1 4C -> 2C, up0 2C -> 2C at full resolution.
  for (int l = 2; l >= 1; --l) {
    const std::string s = std::to_string(l);
    add_tconv(p, "dec.up" + s, level_channels(cfg, l + 1), level_channels(cfg, l), rng);
    add_conv(p, "dec.fuse" + s, level_channels(cfg, l), 2 * level_channels(cfg, l), 1, rng);
    init_rfa(p, "dec.rfa" + s, level_channels(cfg, l), level_channels(cfg, l), k, att, rng);
  }
  add_tconv(p, "dec.up0", 2 * c, 2 * c, rng);
  add_conv(p, "dec.fuse0", 2 * c, 3 * c, 1, rng);
  init_rfa(p, "dec.rfa0", 2 * c, 2 * c, k, att, rng);
  init_rfa(p, "out", 2 * c, 3, k, att, rng);

  init_cgm(p, cfg.prompt, rng);
  for (int level = 1; level <= 3; ++level) {
    const int dc = decoder_channels(cfg, level);
    const int pc = prompt_shape(cfg.prompt, level).c;
    if (pc != dc) p.add(proj_name(level), lecun_uniform({dc, pc, 1, 1}, pc, rng));
    if (cfg.block == BlockKind::cpb) {
      init_cpb(p, block_prefix(cfg, level), cpb_config(cfg, level), rng);
    } else {
      init_spb(p, block_prefix(cfg, level), dc, rng);
    }
  }
  // Training starts from the identity map I_e = I_0.
  zero_final_projection(p);
  return p;
}

std::size_t count_params(const EnhancerConfig& cfg) { return init_params(cfg, 0).scalar_count(); }

void zero_final_projection(ParamStore& params) {
  for (const char* name : {"out.w", "out.b"}) {
    for (double& v : params.at(name).mutable_data()) v = 0.0;
  }
}

void check_compatible(const ParamStore& params, const EnhancerConfig& cfg) {
  const ParamStore expected = init_params(cfg, 0);
  for (const auto& [name, t] : expected) {
    if (!params.contains(name)) throw ConfigError("checkpoint lacks parameter " + name);
    if (!(params.at(name).shape() == t.shape())) {
      throw ConfigError("parameter " + name + " has shape " + params.at(name).shape().str() + ", config expects " +
                        t.shape().str());
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.contains(name)) throw ConfigError("checkpoint has unexpected parameter " + name);
  }
}

EnhancerOutput forward(const Tensor& input, const ParamStore& p, const EnhancerConfig& cfg) {
  const Shape s = input.shape();
  if (s.c != 3) throw DimensionError("enhancer expects 3 input channels, got " + s.str());
  const int k = cfg.rfa_kernel;
  const bool att = cfg.rfa_enabled;
  const int pad_h = (8 - s.h % 8) % 8;
  const int pad_w = (8 - s.w % 8) % 8;
  const Tensor x = (pad_h || pad_w) ? pad2d(input, 0, pad_h, 0, pad_w) : input;

  EnhancerOutput out;
  out.f0 = rfa_conv(x, p, "enc.embed", k, att);
  std::array<Tensor, 4> enc{out.f0};
  for (int l = 1; l <= 3; ++l) {
    const std::string i = std::to_string(l);
    enc[l] = rfa_conv(gelu(conv_named(enc[l - 1], p, "enc.down" + i, kDown)), p, "enc.rfa" + i, k, att);
  }
  out.latent = enc[3];

  const PromptPyramid prompts = build_prompts(p, cfg.prompt);
  auto prompt_block = [&](const Tensor& f, int level) {
    Tensor prompt = prompts.level(level);
    if (p.contains(proj_name(level))) prompt = conv2d(prompt, p.at(proj_name(level)));
    const std::string prefix = block_prefix(cfg, level);
    return cfg.block == BlockKind::cpb ? cpb_forward(f, prompt, cpb_config(cfg, level), p, prefix)
                                       : spb_forward(f, prompt, p, prefix);
  };

  Tensor d = prompt_block(out.latent, 3);
  out.block[2] = d;
  for (int l = 2; l >= 1; --l) {
    const std::string i = std::to_string(l);
    const Tensor up = gelu(conv_named(d, p, "dec.up" + i, kUp));
    const Tensor fused = conv_named(concat_channels({up, enc[l]}), p, "dec.fuse" + i);
    d = prompt_block(rfa_conv(fused, p, "dec.rfa" + i, k, att), l);
    out.block[l - 1] = d;
  }
  const Tensor up0 = gelu(conv_named(d, p, "dec.up0", kUp));
  out.fh = rfa_conv(conv_named(concat_channels({up0, out.f0}), p, "dec.fuse0"), p, "dec.rfa0", k, att);
  out.fe = rfa_conv(out.fh, p, "out", k, att);
  if (pad_h || pad_w) out.fe = crop2d(out.fe, 0, 0, s.h, s.w);
  out.image = clamp(add(input, out.fe), 0.0, 1.0);
  return out;
}

Enhanced enhance(const Image& img, const ParamStore& params, const EnhancerConfig& cfg) {
  if (img.channels != 3) throw InputError("enhance expects a 3-channel image");
  Enhanced r;
  r.features = forward(to_tensor(img), params, cfg);
  r.image = to_image(r.features.image);
  return r;
}

}  // namespace cpa

#include "cyclestain/networks/networks.hpp"

#include <algorithm>
#include <cmath>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"

namespace cyclestain {
namespace {

constexpr double kLeakySlope = 0.2;

std::string join(std::string_view ns, std::string_view layer, std::string_view param) {
  std::string s(ns);
  s += '/';
  s += layer;
  s += '/';
  s += param;
  return s;
}

void add_conv(ParamStore& store, Rng& rng, const std::string& weight_name, int out, int in, int k) {
  Tensor w(Shape{out, in, k, k});
  const double std = std::sqrt(2.0 / (static_cast<double>(in) * k * k));
  for (double& v : w.data()) v = rng.normal() * std;
  round_to_float32(w);
  store.set(weight_name, std::move(w));
}

void add_bias(ParamStore& store, const std::string& name, int out) {
  store.set(name, Tensor(Shape{1, out, 1, 1}, 0.0));
}

int disc_width(const DiscriminatorConfig& cfg, int i) {
  return cfg.base_channels * (1 << std::min(i, 3));
}

int disc_stride(const DiscriminatorConfig& cfg, int i) { return i < cfg.layers - 1 ? 2 : 1; }

ad::Var norm(const ad::Var& x, NormKind kind) {
  return kind == NormKind::Instance ? ad::instance_norm(x) : x;
}

std::string ns_str(std::string_view ns) { return std::string(ns); }

const char* norm_name(NormKind k) { return k == NormKind::Instance ? "instance" : "none"; }

NormKind parse_norm(const std::string& s) {
  if (s == "instance") return NormKind::Instance;
  if (s == "none") return NormKind::None;
  throw ConfigError("unknown norm kind: " + s);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (depth < 2) throw ConfigError("generator depth must be >= 2");
  if (base_channels < 4) throw ConfigError("generator base_channels must be >= 4");
  if (residual_blocks < 0) throw ConfigError("generator residual_blocks must be >= 0");
}

void DiscriminatorConfig::validate() const {
  if (layers < 1) throw ConfigError("discriminator layers must be >= 1");
  if (base_channels < 1) throw ConfigError("discriminator base_channels must be >= 1");
  if (scales != 2) throw ConfigError("discriminator scales is fixed at 2");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"depth", c.depth},
                     {"base_channels", c.base_channels},
                     {"residual_blocks", c.residual_blocks},
                     {"norm", norm_name(c.norm)},
                     {"output_activation",
                      c.output_activation == OutputActivation::Tanh ? "tanh" : "hardtanh"},
                     {"identity_ablation", c.identity_ablation}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.depth = j.at("depth").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.residual_blocks = j.at("residual_blocks").get<int>();
  c.norm = parse_norm(j.value("norm", std::string("instance")));
  const std::string act = j.value("output_activation", std::string("tanh"));
  if (act == "tanh")
    c.output_activation = OutputActivation::Tanh;
  else if (act == "hardtanh")
    c.output_activation = OutputActivation::HardTanh;
  else
    throw ConfigError("unknown output activation: " + act);
  c.identity_ablation = j.value("identity_ablation", false);
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"base_channels", c.base_channels},
                     {"scales", c.scales},
                     {"norm", norm_name(c.norm)}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c.layers = j.at("layers").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.scales = j.value("scales", 2);
  c.norm = parse_norm(j.value("norm", std::string("instance")));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"generator", c.generator}, {"discriminator", c.discriminator}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.generator = j.at("generator").get<GeneratorConfig>();
  c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
}

ParamStore build_generator(const GeneratorConfig& cfg, std::uint64_t seed, std::string_view ns) {
  cfg.validate();
  ParamStore store;
  Rng rng(seed);
  const int b = cfg.base_channels;
  auto width = [b](int level) { return b * (1 << level); };

  add_conv(store, rng, join(ns, "ingress", "weight"), width(0), 3, 7);
  for (int i = 1; i <= cfg.depth; ++i)
    add_conv(store, rng, join(ns, "down" + std::to_string(i), "weight"), width(i), width(i - 1), 3);
  const int bottleneck = width(cfg.depth);
  for (int r = 0; r < cfg.residual_blocks; ++r) {
    const std::string layer = "res" + std::to_string(r);
    add_conv(store, rng, join(ns, layer, "conv1_weight"), bottleneck, bottleneck, 3);
    add_conv(store, rng, join(ns, layer, "conv2_weight"), bottleneck, bottleneck, 3);
  }
  for (int i = cfg.depth; i >= 1; --i) {
    const int in = i == cfg.depth ? bottleneck : 2 * width(i);
    add_conv(store, rng, join(ns, "up" + std::to_string(i), "weight"), width(i - 1), in, 3);
  }
  add_conv(store, rng, join(ns, "egress", "weight"), 3, 2 * width(0), 7);
  add_bias(store, join(ns, "egress", "bias"), 3);
  return store;
}

ParamStore build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed,
                               std::string_view ns) {
  cfg.validate();
  ParamStore store;
  Rng rng(seed);
  for (int s = 0; s < cfg.scales; ++s) {
    const std::string scale = ns_str(ns) + "/scale" + std::to_string(s);
    for (int i = 0; i < cfg.layers; ++i) {
      const int in = i == 0 ? 3 : disc_width(cfg, i - 1);
      const std::string layer = "conv" + std::to_string(i);
      add_conv(store, rng, join(scale, layer, "weight"), disc_width(cfg, i), in, 4);
      if (i == 0 || cfg.norm == NormKind::None) add_bias(store, join(scale, layer, "bias"), disc_width(cfg, i));
    }
    add_conv(store, rng, join(scale, "output", "weight"), 1, disc_width(cfg, cfg.layers - 1), 4);
    add_bias(store, join(scale, "output", "bias"), 1);
  }
  return store;
}

ParamStore build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  for (std::string_view ns : {kGenFFPE, kGenFF})
    store.merge(build_generator(cfg.generator, derive_seed(seed, ns), ns));
  for (std::string_view ns : {kDiscFFPE, kDiscFF})
    store.merge(build_discriminator(cfg.discriminator, derive_seed(seed, ns), ns));
  return store;
}

ad::Var generator_forward(const GeneratorConfig& cfg, const Binding& params, std::string_view ns,
                          const ad::Var& x) {
  cfg.validate();
  const Shape s = x.shape();
  if (s.c != 3) throw ContractError("generator_forward: expected 3 input channels");
  const int m = cfg.required_multiple();
  if (s.h % m != 0 || s.w % m != 0)
    throw ContractError("generator_forward: spatial dims " + std::to_string(s.h) + "x" +
                        std::to_string(s.w) + " must be multiples of " + std::to_string(m));
  if (cfg.identity_ablation) return x;

  using namespace ad;
  const Var none;
  std::vector<Var> skips;
  Var h = conv2d(reflect_pad(x, 3), params(join(ns, "ingress", "weight")), none, {1, 0});
  h = relu(norm(h, cfg.norm));
  skips.push_back(h);
  for (int i = 1; i <= cfg.depth; ++i) {
    h = conv2d(h, params(join(ns, "down" + std::to_string(i), "weight")), none, {2, 1});
    h = relu(norm(h, cfg.norm));
    if (i < cfg.depth) skips.push_back(h);
  }
  for (int r = 0; r < cfg.residual_blocks; ++r) {
    const std::string layer = "res" + std::to_string(r);
    Var t = conv2d(reflect_pad(h, 1), params(join(ns, layer, "conv1_weight")), none, {1, 0});
    t = relu(norm(t, cfg.norm));
    t = conv2d(reflect_pad(t, 1), params(join(ns, layer, "conv2_weight")), none, {1, 0});
    h = add(h, norm(t, cfg.norm));
  }
  for (int i = cfg.depth; i >= 1; --i) {
    h = conv2d(upsample_nearest2x(h), params(join(ns, "up" + std::to_string(i), "weight")), none,
               {1, 1});
    h = relu(norm(h, cfg.norm));
    h = concat_channels(h, skips[i - 1]);
  }
  h = conv2d(reflect_pad(h, 3), params(join(ns, "egress", "weight")),
             params(join(ns, "egress", "bias")), {1, 0});
  return cfg.output_activation == OutputActivation::Tanh ? ad::tanh(h) : hardtanh(h);
}

Image generator_forward(const GeneratorConfig& cfg, const ParamStore& params, std::string_view ns,
                        const Image& img) {
  if (img.range() != ValueRange::Symmetric)
    throw ContractError("generator_forward: input must be in the symmetric [-1,1] range");
  ad::NoGradGuard guard;
  const Binding bound = Binding::constants(params, ns);
  const ad::Var out = generator_forward(cfg, bound, ns, ad::constant(to_tensor(img)));
  return from_tensor(out.value(), ValueRange::Symmetric);
}

int discriminator_map_extent(const DiscriminatorConfig& cfg, int input) {
  int e = input;
  for (int i = 0; i < cfg.layers; ++i) {
    if (e + 2 < 4) return -1;
    e = (e + 2 - 4) / disc_stride(cfg, i) + 1;
    if (e < 1) return -1;
  }
  if (e + 2 < 4) return -1;
  e = e + 2 - 4 + 1;
  return e >= 1 ? e : -1;
}

int discriminator_receptive_field(const DiscriminatorConfig& cfg) {
  int rf = 1;
  int jump = 1;
  for (int i = 0; i < cfg.layers; ++i) {
    rf += 3 * jump;
    jump *= disc_stride(cfg, i);
  }
  return rf + 3 * jump;
}

ad::Var discriminator_forward(const DiscriminatorConfig& cfg, const Binding& params,
                              std::string_view ns, int scale, const ad::Var& x) {
  cfg.validate();
  if (scale < 0 || scale >= cfg.scales) throw ContractError("discriminator_forward: bad scale index");
  const Shape s = x.shape();
  if (discriminator_map_extent(cfg, s.h) < 1 || discriminator_map_extent(cfg, s.w) < 1)
    throw ContractError("discriminator_forward: input " + std::to_string(s.h) + "x" +
                        std::to_string(s.w) + " too small for a " + std::to_string(cfg.layers) +
                        "-layer discriminator (receptive field " +
                        std::to_string(discriminator_receptive_field(cfg)) + ")");
  using namespace ad;
  const std::string prefix = ns_str(ns) + "/scale" + std::to_string(scale);
  Var h = x;
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string layer = "conv" + std::to_string(i);
    const std::string bias_name = join(prefix, layer, "bias");
    const Var bias = params.contains(bias_name) ? params(bias_name) : Var();
    h = conv2d(h, params(join(prefix, layer, "weight")), bias, {disc_stride(cfg, i), 1});
    if (i > 0) h = norm(h, cfg.norm);
    h = leaky_relu(h, kLeakySlope);
  }
  return conv2d(h, params(join(prefix, "output", "weight")), params(join(prefix, "output", "bias")),
                {1, 1});
}

std::vector<ad::Var> multiscale_scores(const DiscriminatorConfig& cfg, const Binding& params,
                                       std::string_view ns, const ad::Var& x) {
  std::vector<ad::Var> maps;
  maps.push_back(discriminator_forward(cfg, params, ns, 0, x));
  maps.push_back(discriminator_forward(cfg, params, ns, 1, ad::avg_pool2x2(x)));
  return maps;
}

std::vector<Tensor> multiscale_scores(const DiscriminatorConfig& cfg, const ParamStore& params,
                                      std::string_view ns, const Image& img) {
  if (img.range() != ValueRange::Symmetric)
    throw ContractError("multiscale_scores: input must be in the symmetric [-1,1] range");
  ad::NoGradGuard guard;
  const Binding bound = Binding::constants(params, ns);
  std::vector<Tensor> out;
  for (const ad::Var& v : multiscale_scores(cfg, bound, ns, ad::constant(to_tensor(img))))
    out.push_back(v.value());
  return out;
}

}  // namespace cyclestain

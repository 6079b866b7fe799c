#pragma once

// Generator and multi-scale patch discriminator.
//
// Layer table (the reconstruction used throughout the toolkit):
//
// Generator (U-Net with a residual bottleneck), c_i = base * 2^i:
//   ingress   reflect-pad 3, conv 7x7 3 -> c_0, norm, ReLU              -> e_0
//   down i    conv 3x3 stride 2 pad 1, c_{i-1} -> c_i, norm, ReLU       -> e_i   (i = 1..depth)
//   res j     x + norm(conv3x3(relu(norm(conv3x3(x)))))   (reflect pad 1, c_depth channels)
//   up i      nearest 2x, conv 3x3 pad 1 -> c_{i-1}, norm, ReLU, concat with e_{i-1}
//             (input channels: c_depth for i = depth, 2 c_i otherwise)
//   egress    reflect-pad 3, conv 7x7 2 c_0 -> 3 (+bias), bounded activation
//
// Discriminator (patch classifier, one per scale), d_i = base * 2^min(i,3):
//   conv 0    4x4 pad 1, 3 -> d_0 (+bias), LeakyReLU 0.2
//   conv i    4x4 pad 1, d_{i-1} -> d_i, norm, LeakyReLU 0.2      (i = 1..layers-1)
//   output    4x4 stride 1 pad 1, d_{layers-1} -> 1 (+bias)
//   Feature convs 0..layers-2 use stride 2, the last feature conv stride 1.
//   layers = 4 gives the 70x70 receptive field. Scale 1 sees the 2x2-averaged input.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cyclestain/core/autodiff.hpp"
#include "cyclestain/imaging/image.hpp"
#include "cyclestain/networks/param_store.hpp"
#include "json.hpp"

namespace cyclestain {

enum class NormKind { Instance, None };
enum class OutputActivation { Tanh, HardTanh };

struct GeneratorConfig {
  int depth = 3;
  int base_channels = 32;
  int residual_blocks = 4;
  NormKind norm = NormKind::Instance;
  OutputActivation output_activation = OutputActivation::Tanh;
  /// Ablation harness: forward returns its input unchanged.
  bool identity_ablation = false;

  void validate() const;
  int required_multiple() const { return 1 << depth; }
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  int layers = 4;
  int base_channels = 64;
  int scales = 2;
  NormKind norm = NormKind::Instance;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parameters of one generator under namespace `ns`, He-normal weights (std sqrt(2 / fan_in)), zero biases.
ParamStore build_generator(const GeneratorConfig& cfg, std::uint64_t seed,
                           std::string_view ns = kGenFFPE);
ParamStore build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed,
                               std::string_view ns = kDiscFFPE);
/// All four namespaces; each network gets a seed derived from `seed` and its name.
ParamStore build_model(const ModelConfig& cfg, std::uint64_t seed);

ad::Var generator_forward(const GeneratorConfig& cfg, const Binding& params, std::string_view ns,
                          const ad::Var& x);
/// Inference convenience: no graph is recorded.
Image generator_forward(const GeneratorConfig& cfg, const ParamStore& params, std::string_view ns,
                        const Image& img);

/// Realism map for one scale branch (`scale` selects the parameter set).
ad::Var discriminator_forward(const DiscriminatorConfig& cfg, const Binding& params,
                              std::string_view ns, int scale, const ad::Var& x);
/// Full-resolution map followed by the half-resolution map.
std::vector<ad::Var> multiscale_scores(const DiscriminatorConfig& cfg, const Binding& params,
                                       std::string_view ns, const ad::Var& x);
std::vector<Tensor> multiscale_scores(const DiscriminatorConfig& cfg, const ParamStore& params,
                                      std::string_view ns, const Image& img);

/// Map extent for a square input of side `input`; -1 when the map would be empty.
int discriminator_map_extent(const DiscriminatorConfig& cfg, int input);
int discriminator_receptive_field(const DiscriminatorConfig& cfg);

}  // namespace cyclestain

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cardiofuse/tensor.hpp"

namespace cardiofuse {

struct ConvBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel_width = 0;
  std::size_t stride = 1;

  bool operator==(const ConvBlockSpec&) const = default;
};

struct SignalEncoderConfig {
  std::size_t lead_count = 4;
  std::size_t seq_len = 256;
  std::vector<ConvBlockSpec> conv_blocks{{8, 7, 2}, {16, 5, 2}, {32, 3, 2}};
  std::size_t feature_dim = 32;

  /// Temporal length after the last block; throws ConfigError if any block does not fit.
  std::size_t output_length() const;
  void validate() const;

  bool operator==(const SignalEncoderConfig&) const = default;
};

enum class Activation { kRelu };

struct MlpConfig {
  std::size_t in_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t out_dim = 0;
  Activation activation = Activation::kRelu;
  /// Apply the activation after the last layer too (encoders do, projectors and heads do not).
  bool activate_output = false;

  void validate(const std::string& name) const;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Fully connected layer; weight is in×out so a batch N×in maps to N×out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor forward(const Tensor& x) const;
};

class Mlp {
 public:
  Mlp(std::string name, MlpConfig config, std::uint64_t seed);

  const std::string& name() const noexcept { return name_; }
  const MlpConfig& config() const noexcept { return config_; }
  /// `x` is in_dim (single sample) or N×in_dim.
  Tensor forward(const Tensor& x) const;
  void append_parameters(std::vector<NamedParameter>& out) const;
  /// Deep copy; the result shares no tensors with this network.
  Mlp clone() const;

 private:
  std::string name_;
  MlpConfig config_;
  std::vector<Linear> layers_;
};

/// Strided 1D-conv stack with relu, global average pooling over time, then a linear map.
class SignalEncoder {
 public:
  /// Empty placeholder; assign a constructed encoder before use.
  SignalEncoder() = default;
  SignalEncoder(std::string name, SignalEncoderConfig config, std::uint64_t seed);

  const SignalEncoderConfig& config() const noexcept { return config_; }
  /// `x` is C×L (returns feature_dim) or N×C×L (returns N×feature_dim).
  Tensor forward(const Tensor& x) const;
  void append_parameters(std::vector<NamedParameter>& out) const;
  SignalEncoder clone() const;

 private:
  struct Block {
    Tensor kernels;
    Tensor bias;
    std::size_t stride = 1;
  };
  std::string name_;
  SignalEncoderConfig config_;
  std::vector<Block> blocks_;
  Linear output_;
};

struct ArchitectureConfig {
  SignalEncoderConfig signal;
  std::size_t tabular_dim = 12;  // D, or D+P when labs are appended to m
  std::vector<std::size_t> tabular_hidden{32};
  std::size_t tabular_out = 32;
  std::vector<std::size_t> projector_hidden{64};
  std::size_t embed_dim = 32;
  std::vector<std::size_t> head_hidden{16};
  std::size_t n_diagnoses = 4;
  std::size_t n_labs = 6;
  std::vector<std::size_t> fusion_hidden{16};

  MlpConfig tabular_encoder() const;
  MlpConfig signal_projector() const;
  MlpConfig tabular_projector() const;
  MlpConfig diagnosis_head() const;
  MlpConfig lab_head() const;
  MlpConfig fusion_head() const;
  void validate() const;
};

enum class Network { kPhiX, kPhiM, kThetaX, kThetaM, kPsiY, kPsiM, kFusion };

const char* network_name(Network net);

/// The six networks (plus the late-fusion head used by the multimodal
/// baseline). Only `phi_x` is mandatory; the others exist when a stage built them.
struct ModelBundle {
  ArchitectureConfig arch;
  SignalEncoder phi_x;
  std::optional<Mlp> phi_m;
  std::optional<Mlp> theta_x;
  std::optional<Mlp> theta_m;
  std::optional<Mlp> psi_y;
  std::optional<Mlp> psi_m;
  std::optional<Mlp> fusion;

  bool has(Network net) const;
  /// All parameters of present networks, in a fixed order.
  std::vector<NamedParameter> parameters() const;
  std::vector<NamedParameter> parameters(Network net) const;
  std::size_t parameter_count() const;
  /// Parameter lookup by exact name; throws ConfigError if absent.
  Tensor parameter(const std::string& name) const;
  /// Copies share parameter tensors; clone() does not.
  ModelBundle clone() const;
};

/// Networks built by `init_bundle` when none are named: all six.
std::vector<Network> default_networks();

ModelBundle init_bundle(const ArchitectureConfig& arch, std::uint64_t seed,
                        const std::vector<Network>& networks = default_networks());
/// Replaces (or adds) one network with freshly drawn weights.
void reinit_network(ModelBundle& bundle, Network net, std::uint64_t seed);

Tensor encode_signal(const ModelBundle& bundle, const Tensor& x);
Tensor encode_tabular(const ModelBundle& bundle, const Tensor& m);

enum class Side { kSignal, kTabular };
Tensor project(const ModelBundle& bundle, const Tensor& h, Side side);
Tensor classify(const ModelBundle& bundle, const Tensor& h_x);
Tensor predict_labs(const ModelBundle& bundle, const Tensor& h_x);
/// Late-fusion logits from concatenated [h_x, h_m].
Tensor fuse_classify(const ModelBundle& bundle, const Tensor& h_x, const Tensor& h_m);

/// Parameter-name prefixes. "phi_x" matches every Φx tensor, "phi_x.block0" only the first conv block.
struct FreezeMask {
  std::set<std::string> frozen_param_names;

  bool matches(const std::string& param_name) const;
  static FreezeMask parse(const std::string& comma_separated);
  std::string to_string() const;
};

/// Marks matched parameters as not trainable. Throws ConfigError listing names
/// that resolve to no parameter.
void apply_freeze(ModelBundle& bundle, const FreezeMask& mask);

/// Sets requires_grad on every parameter of the listed networks (true) and all others (false).
void set_trainable(ModelBundle& bundle, const std::vector<Network>& networks);

}  // namespace cardiofuse

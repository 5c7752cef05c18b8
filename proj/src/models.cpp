#include "cardiofuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/rng.hpp"

namespace cardiofuse {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// uniform(-s, s) with s = sqrt(1/fan_in); each parameter has its own stream keyed by name.
Tensor init_weight(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_key(seed, fnv1a(name)));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> values(element_count(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor deep_copy(const Tensor& t) {
  Tensor copy = t.detach();
  copy.set_requires_grad(t.requires_grad());
  return copy;
}

void require_features(const Tensor& x, std::size_t expected, const std::string& who) {
  const std::size_t got = x.shape().back();
  if ((x.rank() != 1 && x.rank() != 2) || got != expected) {
    throw DimensionError(who + ": expected input with " + std::to_string(expected) + " features, got shape " +
                         to_string(x.shape()));
  }
}

}  // namespace

std::size_t SignalEncoderConfig::output_length() const {
  std::size_t len = seq_len;
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
    const auto& b = conv_blocks[i];
    if (b.stride == 0) throw ConfigError("conv block " + std::to_string(i) + ": stride must be >= 1");
    if (b.kernel_width == 0 || b.kernel_width > len) {
      throw ConfigError("conv block " + std::to_string(i) + ": kernel width " + std::to_string(b.kernel_width) +
                        " does not fit temporal length " + std::to_string(len));
    }
    len = (len - b.kernel_width) / b.stride + 1;
  }
  return len;
}

void SignalEncoderConfig::validate() const {
  if (lead_count == 0 || seq_len == 0) throw ConfigError("signal encoder: lead_count and seq_len must be >= 1");
  if (feature_dim == 0) throw ConfigError("signal encoder: feature_dim must be >= 1");
  for (const auto& b : conv_blocks) {
    if (b.out_channels == 0) throw ConfigError("signal encoder: conv block out_channels must be >= 1");
  }
  output_length();
}

void MlpConfig::validate(const std::string& name) const {
  if (in_dim == 0 || out_dim == 0 ||
      std::any_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d == 0; })) {
    throw ConfigError(name + ": all MLP dimensions must be >= 1");
  }
}

Tensor Linear::forward(const Tensor& x) const { return add_rowwise(matmul(x, weight), bias); }

Mlp::Mlp(std::string name, MlpConfig config, std::uint64_t seed) : name_(std::move(name)), config_(std::move(config)) {
  config_.validate(name_);
  std::vector<std::size_t> dims{config_.in_dim};
  dims.insert(dims.end(), config_.hidden_dims.begin(), config_.hidden_dims.end());
  dims.push_back(config_.out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string prefix = name_ + ".layer" + std::to_string(i);
    layers_.push_back(Linear{init_weight({dims[i], dims[i + 1]}, dims[i], seed, prefix + ".weight"),
                             Tensor::zeros({dims[i + 1]}, true)});
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  require_features(x, config_.in_dim, name_);
  const bool single = x.rank() == 1;
  Tensor h = single ? reshape(x, {1, config_.in_dim}) : x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size() || config_.activate_output) h = relu(h);
  }
  return single ? reshape(h, {config_.out_dim}) : h;
}

void Mlp::append_parameters(std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = name_ + ".layer" + std::to_string(i);
    out.push_back({prefix + ".weight", layers_[i].weight});
    out.push_back({prefix + ".bias", layers_[i].bias});
  }
}

Mlp Mlp::clone() const {
  Mlp copy = *this;
  for (auto& layer : copy.layers_) {
    layer.weight = deep_copy(layer.weight);
    layer.bias = deep_copy(layer.bias);
  }
  return copy;
}

SignalEncoder::SignalEncoder(std::string name, SignalEncoderConfig config, std::uint64_t seed)
    : name_(std::move(name)), config_(std::move(config)) {
  config_.validate();
  std::size_t channels = config_.lead_count;
  for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) {
    const auto& spec = config_.conv_blocks[i];
    const std::string prefix = name_ + ".block" + std::to_string(i);
    blocks_.push_back(Block{init_weight({spec.out_channels, channels, spec.kernel_width}, channels * spec.kernel_width,
                                        seed, prefix + ".weight"),
                            Tensor::zeros({spec.out_channels}, true), spec.stride});
    channels = spec.out_channels;
  }
  output_ = Linear{init_weight({channels, config_.feature_dim}, channels, seed, name_ + ".out.weight"),
                   Tensor::zeros({config_.feature_dim}, true)};
}

Tensor SignalEncoder::forward(const Tensor& x) const {
  const bool single = x.rank() == 2;
  const bool shape_ok = (single || x.rank() == 3) && x.shape()[single ? 0 : 1] == config_.lead_count &&
                        x.shape()[single ? 1 : 2] == config_.seq_len;
  if (!shape_ok) {
    throw DimensionError(name_ + ": expected signal " + std::to_string(config_.lead_count) + "x" +
                         std::to_string(config_.seq_len) + " (optionally batched), got " + to_string(x.shape()));
  }
  Tensor h = single ? reshape(x, {1, config_.lead_count, config_.seq_len}) : x;
  for (const auto& block : blocks_) h = relu(conv1d(h, block.kernels, block.bias, block.stride));
  h = mean(h, 2);  // global average pooling over time: N×C
  h = output_.forward(h);
  return single ? reshape(h, {config_.feature_dim}) : h;
}

void SignalEncoder::append_parameters(std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = name_ + ".block" + std::to_string(i);
    out.push_back({prefix + ".weight", blocks_[i].kernels});
    out.push_back({prefix + ".bias", blocks_[i].bias});
  }
  out.push_back({name_ + ".out.weight", output_.weight});
  out.push_back({name_ + ".out.bias", output_.bias});
}

SignalEncoder SignalEncoder::clone() const {
  SignalEncoder copy = *this;
  for (auto& block : copy.blocks_) {
    block.kernels = deep_copy(block.kernels);
    block.bias = deep_copy(block.bias);
  }
  copy.output_.weight = deep_copy(output_.weight);
  copy.output_.bias = deep_copy(output_.bias);
  return copy;
}

MlpConfig ArchitectureConfig::tabular_encoder() const {
  return MlpConfig{tabular_dim, tabular_hidden, tabular_out, Activation::kRelu, true};
}
MlpConfig ArchitectureConfig::signal_projector() const {
  return MlpConfig{signal.feature_dim, projector_hidden, embed_dim, Activation::kRelu, false};
}
MlpConfig ArchitectureConfig::tabular_projector() const {
  return MlpConfig{tabular_out, projector_hidden, embed_dim, Activation::kRelu, false};
}
MlpConfig ArchitectureConfig::diagnosis_head() const {
  return MlpConfig{signal.feature_dim, head_hidden, n_diagnoses, Activation::kRelu, false};
}
MlpConfig ArchitectureConfig::lab_head() const {
  return MlpConfig{signal.feature_dim, head_hidden, n_labs, Activation::kRelu, false};
}
MlpConfig ArchitectureConfig::fusion_head() const {
  return MlpConfig{signal.feature_dim + tabular_out, fusion_hidden, n_diagnoses, Activation::kRelu, false};
}

void ArchitectureConfig::validate() const {
  signal.validate();
  tabular_encoder().validate("phi_m");
  signal_projector().validate("theta_x");
  tabular_projector().validate("theta_m");
  diagnosis_head().validate("psi_y");
  lab_head().validate("psi_m");
  fusion_head().validate("fusion");
}

const char* network_name(Network net) {
  switch (net) {
    case Network::kPhiX: return "phi_x";
    case Network::kPhiM: return "phi_m";
    case Network::kThetaX: return "theta_x";
    case Network::kThetaM: return "theta_m";
    case Network::kPsiY: return "psi_y";
    case Network::kPsiM: return "psi_m";
    case Network::kFusion: return "fusion";
  }
  return "unknown";
}

namespace {

const std::optional<Mlp>& mlp_slot(const ModelBundle& b, Network net) {
  switch (net) {
    case Network::kPhiM: return b.phi_m;
    case Network::kThetaX: return b.theta_x;
    case Network::kThetaM: return b.theta_m;
    case Network::kPsiY: return b.psi_y;
    case Network::kPsiM: return b.psi_m;
    case Network::kFusion: return b.fusion;
    case Network::kPhiX: break;
  }
  throw ContractError("phi_x is not an MLP slot");
}

std::optional<Mlp>& mlp_slot(ModelBundle& b, Network net) {
  return const_cast<std::optional<Mlp>&>(mlp_slot(static_cast<const ModelBundle&>(b), net));
}

MlpConfig mlp_config(const ArchitectureConfig& arch, Network net) {
  switch (net) {
    case Network::kPhiM: return arch.tabular_encoder();
    case Network::kThetaX: return arch.signal_projector();
    case Network::kThetaM: return arch.tabular_projector();
    case Network::kPsiY: return arch.diagnosis_head();
    case Network::kPsiM: return arch.lab_head();
    case Network::kFusion: return arch.fusion_head();
    case Network::kPhiX: break;
  }
  throw ContractError("phi_x has no MLP config");
}

constexpr Network kAllNetworks[] = {Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM,
                                    Network::kPsiY, Network::kPsiM, Network::kFusion};

const Mlp& require_network(const ModelBundle& b, Network net) {
  const auto& slot = mlp_slot(b, net);
  if (!slot) throw CapabilityError(std::string("model has no ") + network_name(net) + " network");
  return *slot;
}

}  // namespace

bool ModelBundle::has(Network net) const { return net == Network::kPhiX || mlp_slot(*this, net).has_value(); }

std::vector<NamedParameter> ModelBundle::parameters(Network net) const {
  std::vector<NamedParameter> out;
  if (net == Network::kPhiX) {
    phi_x.append_parameters(out);
  } else if (const auto& slot = mlp_slot(*this, net)) {
    slot->append_parameters(out);
  }
  return out;
}

std::vector<NamedParameter> ModelBundle::parameters() const {
  std::vector<NamedParameter> out;
  for (Network net : kAllNetworks) {
    auto part = parameters(net);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.size();
  return total;
}

Tensor ModelBundle::parameter(const std::string& name) const {
  for (const auto& p : parameters()) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

ModelBundle ModelBundle::clone() const {
  ModelBundle copy{arch, phi_x.clone()};
  for (Network net : kAllNetworks) {
    if (net == Network::kPhiX) continue;
    if (const auto& slot = mlp_slot(*this, net)) mlp_slot(copy, net) = slot->clone();
  }
  return copy;
}

std::vector<Network> default_networks() {
  return {Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM, Network::kPsiY, Network::kPsiM};
}

ModelBundle init_bundle(const ArchitectureConfig& arch, std::uint64_t seed, const std::vector<Network>& networks) {
  arch.validate();
  ModelBundle bundle{arch, SignalEncoder("phi_x", arch.signal, seed)};
  for (Network net : networks) {
    if (net != Network::kPhiX) reinit_network(bundle, net, seed);
  }
  return bundle;
}

void reinit_network(ModelBundle& bundle, Network net, std::uint64_t seed) {
  if (net == Network::kPhiX) {
    bundle.phi_x = SignalEncoder("phi_x", bundle.arch.signal, seed);
  } else {
    mlp_slot(bundle, net) = Mlp(network_name(net), mlp_config(bundle.arch, net), seed);
  }
}

Tensor encode_signal(const ModelBundle& bundle, const Tensor& x) { return bundle.phi_x.forward(x); }

Tensor encode_tabular(const ModelBundle& bundle, const Tensor& m) {
  return require_network(bundle, Network::kPhiM).forward(m);
}

Tensor project(const ModelBundle& bundle, const Tensor& h, Side side) {
  return require_network(bundle, side == Side::kSignal ? Network::kThetaX : Network::kThetaM).forward(h);
}

Tensor classify(const ModelBundle& bundle, const Tensor& h_x) {
  return require_network(bundle, Network::kPsiY).forward(h_x);
}

Tensor predict_labs(const ModelBundle& bundle, const Tensor& h_x) {
  return require_network(bundle, Network::kPsiM).forward(h_x);
}

Tensor fuse_classify(const ModelBundle& bundle, const Tensor& h_x, const Tensor& h_m) {
  const Mlp& head = require_network(bundle, Network::kFusion);
  if (h_x.rank() == 1 && h_m.rank() == 1) {
    Tensor joined = concat_cols(reshape(h_x, {1, h_x.size()}), reshape(h_m, {1, h_m.size()}));
    return reshape(head.forward(joined), {bundle.arch.n_diagnoses});
  }
  return head.forward(concat_cols(h_x, h_m));
}

bool FreezeMask::matches(const std::string& param_name) const {
  for (const auto& prefix : frozen_param_names) {
    if (param_name == prefix) return true;
    if (param_name.size() > prefix.size() && param_name.compare(0, prefix.size(), prefix) == 0 &&
        param_name[prefix.size()] == '.') {
      return true;
    }
  }
  return false;
}

FreezeMask FreezeMask::parse(const std::string& comma_separated) {
  FreezeMask mask;
  std::stringstream in(comma_separated);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(" \t");
    mask.frozen_param_names.insert(item.substr(first, last - first + 1));
  }
  return mask;
}

std::string FreezeMask::to_string() const {
  std::string out;
  for (const auto& name : frozen_param_names) {
    if (!out.empty()) out += ",";
    out += name;
  }
  return out;
}

void apply_freeze(ModelBundle& bundle, const FreezeMask& mask) {
  auto params = bundle.parameters();
  std::vector<std::string> unresolved;
  for (const auto& prefix : mask.frozen_param_names) {
    const FreezeMask single{{prefix}};
    const bool found =
        std::any_of(params.begin(), params.end(), [&](const NamedParameter& p) { return single.matches(p.name); });
    if (!found) unresolved.push_back(prefix);
  }
  if (!unresolved.empty()) {
    std::string list;
    for (const auto& n : unresolved) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("freeze mask names resolve to no parameter: " + list);
  }
  for (auto& p : params) {
    if (mask.matches(p.name)) p.tensor.set_requires_grad(false);
  }
}

void set_trainable(ModelBundle& bundle, const std::vector<Network>& networks) {
  for (Network net : kAllNetworks) {
    const bool on = std::find(networks.begin(), networks.end(), net) != networks.end();
    for (auto& p : bundle.parameters(net)) p.tensor.set_requires_grad(on);
  }
}

}  // namespace cardiofuse

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cardiofuse/models.hpp"

namespace cardiofuse {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based step index used for bias correction.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments, std::uint64_t step,
                 const AdamConfig& config);

/// Adam over a bundle's parameters. Parameters with requires_grad == false
/// (frozen or outside the current stage) are skipped, moments included.
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelBundle& model, AdamConfig config);

  /// Applies one update from accumulated gradients, then clears them.
  void step(const ModelBundle& model);
  const AdamState& state() const noexcept { return state_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  AdamState state_;
};

}  // namespace cardiofuse

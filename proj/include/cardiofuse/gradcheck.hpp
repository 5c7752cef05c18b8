#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cardiofuse/models.hpp"
#include "cardiofuse/tensor.hpp"
#include "json.hpp"

namespace cardiofuse {

struct GradCheckOptions {
  std::size_t probes = 20;
  double step = 1e-5;        // central-difference h
  double tolerance = 1e-4;   // on relative_error
  std::size_t batch = 8;     // encounters per batch in the composed-loss cases
  std::uint64_t seed = 7;
};

/// |a - n| / max(|a|, |n|, 1e-6). The floor keeps coordinates whose true
/// gradient is ~0 from turning roundoff into a large ratio.
double relative_error(double autodiff, double numeric);

struct GradCheckResult {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  std::string worst_probe;  // "<input>[<flat index>]"
  bool passed = false;
};

/// Compares autodiff against central differences of `loss` at `probes`
/// coordinates of `inputs` (leaves). Probes cycle through the inputs so each
/// is touched; the element within an input is drawn at random.
GradCheckResult check_gradient(const std::string& name, const std::function<Tensor()>& loss,
                               const std::vector<NamedParameter>& inputs, const GradCheckOptions& options,
                               std::uint64_t probe_seed);

struct GradCheckReport {
  GradCheckOptions options;
  std::vector<GradCheckResult> results;

  bool passed() const;
};

/// Every differentiable primitive, then the Barlow Twins, diagnosis and lab
/// losses composed through networks built from `arch`.
GradCheckReport run_gradcheck(const ArchitectureConfig& arch, const GradCheckOptions& options = {});

nlohmann::ordered_json to_json(const GradCheckReport& report);

}  // namespace cardiofuse

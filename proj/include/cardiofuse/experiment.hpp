#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cardiofuse/config.hpp"
#include "cardiofuse/pipeline.hpp"
#include "json.hpp"

namespace cardiofuse {

/// Full pipeline plus both baselines and the transfer ablation for one seed.
/// Dataset and training seeds are both `seed`.
struct SeedOutcome {
  std::uint64_t seed = 0;
  // Test diagnosis macro-AUROC.
  double signal_only = 0.0;
  double je_recon = 0.0;
  double late_fusion = 0.0;
  // Test lab macro-AUROC of the pipeline model (pretrain, then both fine-tuning stages).
  double je_recon_labs = 0.0;
  // Test lab macro-AUROC of a lab head on a frozen encoder: pretrained-only vs untrained.
  double ablation_pretrained = 0.0;
  double ablation_random = 0.0;
  double seconds = 0.0;
};

struct OrderingSummary {
  std::vector<SeedOutcome> seeds;
  double signal_only = 0.0;
  double je_recon = 0.0;
  double late_fusion = 0.0;
  double ablation_pretrained = 0.0;
  double ablation_random = 0.0;

  /// signal-only + 0.01 <= JE+recon <= late-fusion + 0.02 on the seed means.
  bool ordering_holds() const;
  /// Pretrained frozen encoder beats an untrained one by >= 0.05 lab macro-AUROC.
  bool transfer_holds() const;
};

SeedOutcome run_seed(const RunConfig& config, std::uint64_t seed);

/// Seeds experiment_seed_base .. +seeds-1, up to `threads` at a time.
/// Results do not depend on `threads`.
OrderingSummary reproduce_ordering(const RunConfig& config, std::size_t seeds, std::size_t threads = 1);

nlohmann::ordered_json to_json(const SeedOutcome& outcome);
nlohmann::ordered_json to_json(const OrderingSummary& summary);

}  // namespace cardiofuse

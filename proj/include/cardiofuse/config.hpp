#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardiofuse/models.hpp"
#include "cardiofuse/pipeline.hpp"
#include "cardiofuse/synthdata.hpp"

namespace cardiofuse {

/// Everything a CLI run needs, read from flat `section.key = value` text.
///
/// Grammar: one assignment per line; `#` starts a comment; blank lines are
/// ignored; keys are case-sensitive; unknown keys and repeated keys are
/// errors. Lists are comma-separated. Conv blocks are `out:width:stride`.
struct RunConfig {
  GeneratorConfig data;

  std::vector<ConvBlockSpec> conv_blocks{{8, 7, 2}, {16, 5, 2}, {32, 3, 2}};
  std::size_t feature_dim = 32;
  std::vector<std::size_t> tabular_hidden{32};
  std::size_t tabular_out = 32;
  std::vector<std::size_t> projector_hidden{64};
  std::size_t embed_dim = 32;
  std::vector<std::size_t> head_hidden{16};
  std::vector<std::size_t> fusion_hidden{16};
  bool append_labs_to_m = false;

  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t train_seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t pretrain_epochs = 30;
  double pretrain_lambda = kDefaultLambda;
  std::string pretrain_freeze;
  std::size_t cls_epochs = 30;
  std::string cls_freeze = "phi_x.block0";
  std::size_t recon_epochs = 30;
  std::string recon_freeze = "phi_x";
  std::size_t baseline_epochs = 30;
  /// Fine-tuning order after pre-training: "cls,recon" or "recon,cls".
  std::string pipeline_order = "cls,recon";

  std::size_t experiment_seeds = 5;
  std::uint64_t experiment_seed_base = 1;

  static RunConfig parse(const std::string& text);
  /// Reads config text, or the resolved config embedded in a run manifest.
  static RunConfig load(const std::filesystem::path& path);
  /// Every key with its resolved value; parse(to_text()) reproduces this config.
  std::string to_text() const;
  void validate() const;

  ArchitectureConfig architecture() const;
  TrainConfig train_config(Stage stage) const;
  /// Copy with the dataset and training seeds both set to `seed`.
  RunConfig with_seed(std::uint64_t seed) const;
  bool recon_first() const { return pipeline_order == "recon,cls"; }
};

}  // namespace cardiofuse

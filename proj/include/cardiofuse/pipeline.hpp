#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cardiofuse/losses.hpp"
#include "cardiofuse/models.hpp"
#include "cardiofuse/optim.hpp"
#include "cardiofuse/synthdata.hpp"
#include "cardiofuse/tensor_io.hpp"
#include "json.hpp"

namespace cardiofuse {

enum class Stage {
  kInitialized,  // untrained bundle, no stage run yet
  kPretrainJe,
  kFinetuneCls,
  kFinetuneRecon,
  kBaselineSignalOnly,
  kBaselineLateFusion,
};

const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::kPretrainJe;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double lambda = kDefaultLambda;  // joint-embedding stage only
  FreezeMask freeze;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Fine-tuning stages refuse an untrained initial checkpoint unless this is false.
  bool require_pretrained = true;

  AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct Checkpoint {
  ModelBundle model;
  AdamState optimizer;
  Stage stage = Stage::kInitialized;
  std::size_t epoch = 0;  // 1-based epoch the weights come from; 0 if untrained
  std::uint64_t seed = 0;
  nlohmann::ordered_json train_config;  // null for untrained checkpoints
};

/// Untrained checkpoint wrapping a freshly initialized bundle.
Checkpoint initial_checkpoint(const ArchitectureConfig& arch, std::uint64_t seed,
                              const std::vector<Network>& networks = default_networks());

inline constexpr Magic kCheckpointMagic{'C', 'M', 'J', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::ordered_json architecture_to_json(const ArchitectureConfig& arch);
ArchitectureConfig architecture_from_json(const nlohmann::json& j);

/// Parameters under their own names, Adam moments as "adam.m.<name>" /
/// "adam.v.<name>", the step counter as "adam.step".
TensorArchive checkpoint_archive(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_archive(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StageResult {
  Stage stage = Stage::kInitialized;
  std::vector<double> train_loss;  // mean minibatch loss per epoch
  std::vector<double> val_metric;  // per epoch
  std::string val_metric_name;
  bool higher_is_better = true;
  std::vector<double> val_alignment;  // joint-embedding stage: mean C_ii on validation
  std::size_t best_epoch = 0;         // 1-based
  Checkpoint checkpoint;              // weights from best_epoch
};

/// Per-epoch curves and best epoch; the checkpoint itself is not included.
nlohmann::ordered_json to_json(const StageResult& result);

/// m as fed to Φm: routine features, with lab labels appended when the
/// architecture's tabular_dim is D + P.
Tensor tabular_features(const ArchitectureConfig& arch, const Split& split);

/// Per-epoch minibatches of train indices; a trailing batch of one sample is
/// merged into its predecessor so batch statistics stay defined.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    Stage stage, std::size_t epoch);

/// Joint-embedding pre-training of Φx, Φm, Θx, Θm with the Barlow Twins loss. Reads x and m only.
StageResult run_stage1_pretrain(const Dataset& dataset, const ModelBundle& model, const TrainConfig& config);
/// Fresh Ψy on the (partially frozen) encoder, trained with BCE on diagnoses.
StageResult run_stage2_classification(const Dataset& dataset, const Checkpoint& init, const TrainConfig& config);
/// Fresh Ψm trained with BCE on lab abnormalities; default freeze leaves Φx and Ψy untouched.
StageResult run_stage3_reconstruction(const Dataset& dataset, const Checkpoint& init, const TrainConfig& config);
/// Signal-only (Φx + Ψy) or late-fusion (Φx + Φm + fusion head) supervised baseline.
StageResult run_baseline(const Dataset& dataset, const ArchitectureConfig& arch, const TrainConfig& config);

/// Diagnosis labels of every split permuted across encounters (and lab labels
/// independently), for permutation-null runs.
Dataset shuffle_labels(const Dataset& dataset, std::uint64_t seed);

}  // namespace cardiofuse

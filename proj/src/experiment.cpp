#include "cardiofuse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

#include "cardiofuse/eval.hpp"
#include "cardiofuse/log.hpp"

namespace cardiofuse {

bool OrderingSummary::ordering_holds() const {
  return signal_only + 0.01 <= je_recon && je_recon <= late_fusion + 0.02;
}

bool OrderingSummary::transfer_holds() const { return ablation_pretrained - ablation_random >= 0.05; }

SeedOutcome run_seed(const RunConfig& config, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig cfg = config.with_seed(seed);
  const Dataset dataset = generate_dataset(cfg.data);
  const ArchitectureConfig arch = cfg.architecture();
  auto test_diag = [&](const ModelBundle& model) {
    return macro_auroc(diagnosis_probabilities(model, dataset.test), dataset.test.diagnoses).macro;
  };
  auto test_labs = [&](const ModelBundle& model) {
    return macro_auroc(lab_probabilities(model, dataset.test), dataset.test.labs).macro;
  };

  SeedOutcome out;
  out.seed = seed;
  const Checkpoint untrained = initial_checkpoint(arch, seed);
  const StageResult pretrain = run_stage1_pretrain(dataset, untrained.model, cfg.train_config(Stage::kPretrainJe));
  const Checkpoint& pretrained = pretrain.checkpoint;

  Checkpoint final_model = pretrained;
  if (cfg.recon_first()) {
    const StageResult recon = run_stage3_reconstruction(dataset, pretrained, cfg.train_config(Stage::kFinetuneRecon));
    final_model = run_stage2_classification(dataset, recon.checkpoint, cfg.train_config(Stage::kFinetuneCls)).checkpoint;
  } else {
    const StageResult cls = run_stage2_classification(dataset, pretrained, cfg.train_config(Stage::kFinetuneCls));
    final_model = run_stage3_reconstruction(dataset, cls.checkpoint, cfg.train_config(Stage::kFinetuneRecon)).checkpoint;
  }
  out.je_recon = test_diag(final_model.model);
  out.je_recon_labs = test_labs(final_model.model);

  TrainConfig ablation = cfg.train_config(Stage::kFinetuneRecon);
  ablation.freeze = FreezeMask::parse("phi_x");
  out.ablation_pretrained = test_labs(run_stage3_reconstruction(dataset, pretrained, ablation).checkpoint.model);
  ablation.require_pretrained = false;
  out.ablation_random = test_labs(run_stage3_reconstruction(dataset, untrained, ablation).checkpoint.model);

  out.signal_only = test_diag(run_baseline(dataset, arch, cfg.train_config(Stage::kBaselineSignalOnly)).checkpoint.model);
  out.late_fusion = test_diag(run_baseline(dataset, arch, cfg.train_config(Stage::kBaselineLateFusion)).checkpoint.model);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_info("seed " + std::to_string(seed) + ": signal_only=" + std::to_string(out.signal_only) +
           " je_recon=" + std::to_string(out.je_recon) + " late_fusion=" + std::to_string(out.late_fusion) +
           " ablation " + std::to_string(out.ablation_pretrained) + " vs " + std::to_string(out.ablation_random) +
           " (" + std::to_string(out.seconds) + " s)");
  return out;
}

OrderingSummary reproduce_ordering(const RunConfig& config, std::size_t seeds, std::size_t threads) {
  OrderingSummary summary;
  summary.seeds.resize(seeds);
  std::vector<std::exception_ptr> errors(seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds; i = next++) {
      try {
        summary.seeds[i] = run_seed(config, config.experiment_seed_base + i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(seeds, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const double n = static_cast<double>(seeds);
  for (const auto& s : summary.seeds) {
    summary.signal_only += s.signal_only / n;
    summary.je_recon += s.je_recon / n;
    summary.late_fusion += s.late_fusion / n;
    summary.ablation_pretrained += s.ablation_pretrained / n;
    summary.ablation_random += s.ablation_random / n;
  }
  return summary;
}

nlohmann::ordered_json to_json(const SeedOutcome& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["signal_only"] = s.signal_only;
  j["je_recon"] = s.je_recon;
  j["late_fusion"] = s.late_fusion;
  j["je_recon_labs"] = s.je_recon_labs;
  j["ablation_pretrained_labs"] = s.ablation_pretrained;
  j["ablation_random_labs"] = s.ablation_random;
  j["seconds"] = s.seconds;
  return j;
}

nlohmann::ordered_json to_json(const OrderingSummary& summary) {
  nlohmann::ordered_json j;
  j["metric"] = "test diagnosis macro-AUROC (labs rows: test lab macro-AUROC)";
  j["mean"] = {{"signal_only", summary.signal_only},
               {"je_recon", summary.je_recon},
               {"late_fusion", summary.late_fusion},
               {"ablation_pretrained_labs", summary.ablation_pretrained},
               {"ablation_random_labs", summary.ablation_random}};
  j["ordering_holds"] = summary.ordering_holds();
  j["transfer_holds"] = summary.transfer_holds();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& s : summary.seeds) rows.push_back(to_json(s));
  j["seeds"] = rows;
  return j;
}

}  // namespace cardiofuse

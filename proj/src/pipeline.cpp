#include "cardiofuse/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/eval.hpp"
#include "cardiofuse/log.hpp"
#include "cardiofuse/rng.hpp"

namespace cardiofuse {

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::kInitialized: return "initialized";
    case Stage::kPretrainJe: return "pretrain_je";
    case Stage::kFinetuneCls: return "finetune_cls";
    case Stage::kFinetuneRecon: return "finetune_recon";
    case Stage::kBaselineSignalOnly: return "baseline_signal_only";
    case Stage::kBaselineLateFusion: return "baseline_late_fusion";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::kInitialized, Stage::kPretrainJe, Stage::kFinetuneCls, Stage::kFinetuneRecon,
                  Stage::kBaselineSignalOnly, Stage::kBaselineLateFusion}) {
    if (name == stage_name(s)) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch statistics), got " + std::to_string(batch_size));
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage_name(stage);
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["lambda"] = lambda;
  j["freeze"] = freeze.to_string();
  j["seed"] = seed;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["require_pretrained"] = require_pretrained;
  return j;
}

Checkpoint initial_checkpoint(const ArchitectureConfig& arch, std::uint64_t seed, const std::vector<Network>& networks) {
  return Checkpoint{init_bundle(arch, seed, networks), AdamState{}, Stage::kInitialized, 0, seed, nullptr};
}

nlohmann::ordered_json architecture_to_json(const ArchitectureConfig& a) {
  nlohmann::ordered_json j;
  j["lead_count"] = a.signal.lead_count;
  j["seq_len"] = a.signal.seq_len;
  auto blocks = nlohmann::ordered_json::array();
  for (const auto& b : a.signal.conv_blocks) blocks.push_back({b.out_channels, b.kernel_width, b.stride});
  j["conv_blocks"] = blocks;
  j["feature_dim"] = a.signal.feature_dim;
  j["tabular_dim"] = a.tabular_dim;
  j["tabular_hidden"] = a.tabular_hidden;
  j["tabular_out"] = a.tabular_out;
  j["projector_hidden"] = a.projector_hidden;
  j["embed_dim"] = a.embed_dim;
  j["head_hidden"] = a.head_hidden;
  j["n_diagnoses"] = a.n_diagnoses;
  j["n_labs"] = a.n_labs;
  j["fusion_hidden"] = a.fusion_hidden;
  return j;
}

ArchitectureConfig architecture_from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  try {
    a.signal.lead_count = j.at("lead_count").get<std::size_t>();
    a.signal.seq_len = j.at("seq_len").get<std::size_t>();
    a.signal.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks")) {
      a.signal.conv_blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
    }
    a.signal.feature_dim = j.at("feature_dim").get<std::size_t>();
    a.tabular_dim = j.at("tabular_dim").get<std::size_t>();
    a.tabular_hidden = j.at("tabular_hidden").get<std::vector<std::size_t>>();
    a.tabular_out = j.at("tabular_out").get<std::size_t>();
    a.projector_hidden = j.at("projector_hidden").get<std::vector<std::size_t>>();
    a.embed_dim = j.at("embed_dim").get<std::size_t>();
    a.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
    a.n_diagnoses = j.at("n_diagnoses").get<std::size_t>();
    a.n_labs = j.at("n_labs").get<std::size_t>();
    a.fusion_hidden = j.at("fusion_hidden").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture JSON: ") + e.what());
  }
  a.validate();
  return a;
}

TensorArchive checkpoint_archive(const Checkpoint& ckpt) {
  nlohmann::ordered_json meta;
  meta["format"] = "cardiofuse-checkpoint";
  meta["stage"] = stage_name(ckpt.stage);
  meta["epoch"] = ckpt.epoch;
  meta["seed"] = ckpt.seed;
  meta["architecture"] = architecture_to_json(ckpt.model.arch);
  meta["train_config"] = ckpt.train_config;

  TensorArchive a;
  a.metadata = meta.dump();
  const auto params = ckpt.model.parameters();
  for (const auto& p : params) a.tensors.push_back({p.name, p.tensor});
  if (!ckpt.optimizer.moments.empty()) {
    a.tensors.push_back({"adam.step", Tensor::scalar(static_cast<double>(ckpt.optimizer.step))});
    for (const auto& p : params) {
      const auto it = ckpt.optimizer.moments.find(p.name);
      if (it == ckpt.optimizer.moments.end()) continue;
      a.tensors.push_back({"adam.m." + p.name, Tensor(p.tensor.shape(), it->second.first)});
      a.tensors.push_back({"adam.v." + p.name, Tensor(p.tensor.shape(), it->second.second)});
    }
  }
  return a;
}

Checkpoint checkpoint_from_archive(const TensorArchive& a) {
  nlohmann::json meta;
  nlohmann::ordered_json ordered;  // keeps train_config key order so re-saving is byte-identical
  try {
    meta = nlohmann::json::parse(a.metadata);
    ordered = nlohmann::ordered_json::parse(a.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::kMalformed, 16, std::string("metadata is not JSON: ") + e.what());
  }
  Checkpoint ckpt{init_bundle(ArchitectureConfig{}, 0, {Network::kPhiX}), {}, Stage::kInitialized, 0, 0, nullptr};
  std::vector<Network> networks;
  try {
    const ArchitectureConfig arch = architecture_from_json(meta.at("architecture"));
    ckpt.stage = parse_stage(meta.at("stage").get<std::string>());
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.train_config = ordered.at("train_config");
    for (Network net : {Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM, Network::kPsiY,
                        Network::kPsiM, Network::kFusion}) {
      const std::string prefix = std::string(network_name(net)) + ".";
      const bool present = std::any_of(a.tensors.begin(), a.tensors.end(),
                                       [&](const NamedTensor& t) { return t.name.rfind(prefix, 0) == 0; });
      if (present) networks.push_back(net);
    }
    ckpt.model = init_bundle(arch, 0, networks);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kMalformed, 16, e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::kMalformed, 16, std::string("checkpoint metadata: ") + e.what());
  }

  std::set<std::string> consumed;
  auto take = [&](const std::string& name, const Shape& shape) -> std::span<const double> {
    const Tensor& t = a.at(name);
    if (t.shape() != shape) {
      throw FormatError(FormatErrorKind::kMalformed, 0,
                        "tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " + to_string(shape));
    }
    consumed.insert(name);
    return t.data();
  };
  for (auto p : ckpt.model.parameters()) {
    const auto src = take(p.name, p.tensor.shape());
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  if (a.contains("adam.step")) {
    ckpt.optimizer.step = static_cast<std::uint64_t>(take("adam.step", {})[0]);
    for (const auto& p : ckpt.model.parameters()) {
      if (!a.contains("adam.m." + p.name)) continue;
      const auto m = take("adam.m." + p.name, p.tensor.shape());
      const auto v = take("adam.v." + p.name, p.tensor.shape());
      ckpt.optimizer.moments[p.name] = AdamMoments{{m.begin(), m.end()}, {v.begin(), v.end()}};
    }
  }
  for (const auto& t : a.tensors) {
    if (!consumed.count(t.name)) {
      throw FormatError(FormatErrorKind::kMalformed, 0, "unexpected tensor '" + t.name + "' in checkpoint");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, encode_archive(kCheckpointMagic, kCheckpointVersion, checkpoint_archive(checkpoint)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return checkpoint_from_archive(decode_archive(bytes, kCheckpointMagic, kCheckpointVersion));
}

nlohmann::ordered_json to_json(const StageResult& r) {
  nlohmann::ordered_json j;
  j["stage"] = stage_name(r.stage);
  j["epochs"] = r.train_loss.size();
  j["best_epoch"] = r.best_epoch;
  j["val_metric_name"] = r.val_metric_name;
  j["higher_is_better"] = r.higher_is_better;
  j["best_val_metric"] = r.best_epoch ? r.val_metric[r.best_epoch - 1] : 0.0;
  j["train_loss"] = r.train_loss;
  j["val_metric"] = r.val_metric;
  if (!r.val_alignment.empty()) j["val_mean_diag_cross_corr"] = r.val_alignment;
  return j;
}

Tensor tabular_features(const ArchitectureConfig& arch, const Split& split) {
  const std::size_t d = split.m.dim(1);
  const std::size_t p = split.labs.dim(1);
  if (arch.tabular_dim == d) return split.m;
  if (arch.tabular_dim == d + p) {
    NoGradGuard no_grad;
    return concat_cols(split.m, split.labs);
  }
  throw ConfigError("tabular encoder expects " + std::to_string(arch.tabular_dim) + " features but the dataset has " +
                    std::to_string(d) + " routine (+" + std::to_string(p) + " lab) columns");
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    Stage stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_key(seed, 0x42000 + static_cast<std::uint64_t>(stage), epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

namespace {

using LossFn = std::function<Tensor(std::span<const std::size_t>)>;
using ValFn = std::function<double()>;

struct LoopSpec {
  std::vector<Network> trainable;
  std::string val_metric_name;
  bool higher_is_better = true;
};

StageResult train_loop(ModelBundle& model, const TrainConfig& cfg, std::size_t n_train, const LoopSpec& spec,
                       const LossFn& loss_fn, const ValFn& val_fn, const std::function<void()>& after_epoch = {}) {
  set_trainable(model, spec.trainable);
  apply_freeze(model, cfg.freeze);
  AdamOptimizer optimizer(model, cfg.adam());

  StageResult result;
  result.stage = cfg.stage;
  result.val_metric_name = spec.val_metric_name;
  result.higher_is_better = spec.higher_is_better;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : epoch_batches(n_train, cfg.batch_size, cfg.seed, cfg.stage, epoch)) {
      const Tensor loss = loss_fn(batch);
      backward(loss);
      optimizer.step(model);
      total += loss.item() * static_cast<double>(batch.size());
      seen += batch.size();
    }
    result.train_loss.push_back(total / static_cast<double>(seen));
    const double metric = val_fn();
    result.val_metric.push_back(metric);
    if (after_epoch) after_epoch();
    const bool better = result.best_epoch == 0 ||
                        (spec.higher_is_better ? metric > result.val_metric[result.best_epoch - 1]
                                               : metric < result.val_metric[result.best_epoch - 1]);
    if (better) {
      result.best_epoch = epoch + 1;
      result.checkpoint = Checkpoint{model.clone(), optimizer.state(), cfg.stage, epoch + 1, cfg.seed, cfg.to_json()};
    }
    log_debug(std::string(stage_name(cfg.stage)) + " epoch " + std::to_string(epoch + 1) + ": train_loss=" +
              std::to_string(result.train_loss.back()) + " " + spec.val_metric_name + "=" + std::to_string(metric));
  }
  return result;
}

void require_stage(const TrainConfig& cfg, Stage expected) {
  if (cfg.stage != expected) {
    throw ConfigError(std::string("train config is for stage '") + stage_name(cfg.stage) + "', expected '" +
                      stage_name(expected) + "'");
  }
}

void require_init(const Checkpoint& init, const TrainConfig& cfg, std::initializer_list<Stage> accepted) {
  if (!cfg.require_pretrained) return;
  if (std::find(accepted.begin(), accepted.end(), init.stage) == accepted.end()) {
    std::string names;
    for (Stage s : accepted) names += (names.empty() ? "" : " or ") + std::string(stage_name(s));
    throw ConfigError(std::string(stage_name(cfg.stage)) + " needs a " + names + " checkpoint, got '" +
                      stage_name(init.stage) + "'");
  }
}

bool encoder_frozen(const ModelBundle& model) {
  for (const auto& p : model.parameters(Network::kPhiX)) {
    if (p.tensor.requires_grad()) return false;
  }
  return true;
}

}  // namespace

StageResult run_stage1_pretrain(const Dataset& dataset, const ModelBundle& initial, const TrainConfig& cfg) {
  require_stage(cfg, Stage::kPretrainJe);
  cfg.validate();
  ModelBundle model = initial.clone();
  for (Network net : {Network::kPhiM, Network::kThetaX, Network::kThetaM}) {
    if (!model.has(net)) throw ConfigError(std::string("pretraining needs a ") + network_name(net) + " network");
  }
  const Split& train = dataset.train;
  const Split& val = dataset.val;
  const Tensor train_m = tabular_features(model.arch, train);
  const Tensor val_m = tabular_features(model.arch, val);

  auto loss_fn = [&](std::span<const std::size_t> idx) {
    const Tensor z_x = project(model, encode_signal(model, gather_rows(train.x, idx)), Side::kSignal);
    const Tensor z_m = project(model, encode_tabular(model, gather_rows(train_m, idx)), Side::kTabular);
    return barlow_twins(z_x, z_m, cfg.lambda).loss;
  };
  std::vector<double> alignment;
  auto val_fn = [&] {
    NoGradGuard no_grad;
    const Tensor z_x = project(model, encode_signal(model, val.x), Side::kSignal);
    const Tensor z_m = project(model, encode_tabular(model, val_m), Side::kTabular);
    const BarlowTwinsResult bt = barlow_twins(z_x, z_m, cfg.lambda);
    const std::size_t e = bt.cross_corr.dim(0);
    double diag = 0.0;
    for (std::size_t i = 0; i < e; ++i) diag += bt.cross_corr[i * e + i];
    alignment.push_back(diag / static_cast<double>(e));
    return bt.loss.item();
  };
  LoopSpec spec{{Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM}, "val_barlow_twins_loss", false};
  StageResult result = train_loop(model, cfg, train.size(), spec, loss_fn, val_fn);
  result.val_alignment = std::move(alignment);
  return result;
}

StageResult run_stage2_classification(const Dataset& dataset, const Checkpoint& init, const TrainConfig& cfg) {
  require_stage(cfg, Stage::kFinetuneCls);
  cfg.validate();
  require_init(init, cfg, {Stage::kPretrainJe, Stage::kFinetuneRecon});
  ModelBundle model = init.model.clone();
  reinit_network(model, Network::kPsiY, cfg.seed);
  const Split& train = dataset.train;

  auto loss_fn = [&](std::span<const std::size_t> idx) {
    const Tensor logits = classify(model, encode_signal(model, gather_rows(train.x, idx)));
    return bce_with_logits(gather_rows(train.diagnoses, idx), logits);
  };
  auto val_fn = [&] { return macro_auroc(diagnosis_probabilities(model, dataset.val), dataset.val.diagnoses).macro; };
  LoopSpec spec{{Network::kPhiX, Network::kPsiY}, "val_diagnosis_macro_auroc", true};
  return train_loop(model, cfg, train.size(), spec, loss_fn, val_fn);
}

StageResult run_stage3_reconstruction(const Dataset& dataset, const Checkpoint& init, const TrainConfig& cfg) {
  require_stage(cfg, Stage::kFinetuneRecon);
  cfg.validate();
  require_init(init, cfg, {Stage::kFinetuneCls, Stage::kPretrainJe});
  ModelBundle model = init.model.clone();
  reinit_network(model, Network::kPsiM, cfg.seed);
  const Split& train = dataset.train;
  const Split& val = dataset.val;

  // With Φx entirely frozen its features are fixed, so they are computed once.
  // Per-sample arithmetic is independent of batch composition, so this is
  // bitwise identical to re-encoding every minibatch.
  set_trainable(model, {Network::kPhiX, Network::kPsiM});
  apply_freeze(model, cfg.freeze);
  Tensor train_features, val_features;
  if (encoder_frozen(model)) {
    NoGradGuard no_grad;
    train_features = encode_signal(model, train.x);
    val_features = encode_signal(model, val.x);
  }
  auto features = [&](std::span<const std::size_t> idx) {
    return train_features.defined() ? gather_rows(train_features, idx) : encode_signal(model, gather_rows(train.x, idx));
  };
  auto loss_fn = [&](std::span<const std::size_t> idx) {
    return bce_with_logits(gather_rows(train.labs, idx), predict_labs(model, features(idx)));
  };
  auto val_fn = [&] {
    if (!val_features.defined()) return macro_auroc(lab_probabilities(model, val), val.labs).macro;
    NoGradGuard no_grad;
    return macro_auroc(sigmoid(predict_labs(model, val_features)), val.labs).macro;
  };
  LoopSpec spec{{Network::kPhiX, Network::kPsiM}, "val_lab_macro_auroc", true};
  return train_loop(model, cfg, train.size(), spec, loss_fn, val_fn);
}

StageResult run_baseline(const Dataset& dataset, const ArchitectureConfig& arch, const TrainConfig& cfg) {
  cfg.validate();
  const Split& train = dataset.train;
  auto val_fn_for = [&](const ModelBundle& model) {
    return [&] { return macro_auroc(diagnosis_probabilities(model, dataset.val), dataset.val.diagnoses).macro; };
  };
  if (cfg.stage == Stage::kBaselineSignalOnly) {
    ModelBundle model = init_bundle(arch, cfg.seed, {Network::kPhiX, Network::kPsiY});
    auto loss_fn = [&](std::span<const std::size_t> idx) {
      const Tensor logits = classify(model, encode_signal(model, gather_rows(train.x, idx)));
      return bce_with_logits(gather_rows(train.diagnoses, idx), logits);
    };
    LoopSpec spec{{Network::kPhiX, Network::kPsiY}, "val_diagnosis_macro_auroc", true};
    return train_loop(model, cfg, train.size(), spec, loss_fn, val_fn_for(model));
  }
  if (cfg.stage == Stage::kBaselineLateFusion) {
    ModelBundle model = init_bundle(arch, cfg.seed, {Network::kPhiX, Network::kPhiM, Network::kFusion});
    const Tensor train_m = tabular_features(arch, train);
    auto loss_fn = [&](std::span<const std::size_t> idx) {
      const Tensor h_x = encode_signal(model, gather_rows(train.x, idx));
      const Tensor h_m = encode_tabular(model, gather_rows(train_m, idx));
      return bce_with_logits(gather_rows(train.diagnoses, idx), fuse_classify(model, h_x, h_m));
    };
    LoopSpec spec{{Network::kPhiX, Network::kPhiM, Network::kFusion}, "val_diagnosis_macro_auroc", true};
    return train_loop(model, cfg, train.size(), spec, loss_fn, val_fn_for(model));
  }
  throw ConfigError(std::string("run_baseline: stage '") + stage_name(cfg.stage) + "' is not a baseline");
}

Dataset shuffle_labels(const Dataset& dataset, std::uint64_t seed) {
  Dataset out = dataset;
  auto permute_rows = [](const Tensor& t, Rng& rng) {
    const std::size_t n = t.dim(0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    NoGradGuard no_grad;
    return gather_rows(t, order).detach();
  };
  const std::pair<SplitId, Split*> splits[] = {
      {SplitId::kTrain, &out.train}, {SplitId::kVal, &out.val}, {SplitId::kTest, &out.test}};
  for (const auto& [id, s] : splits) {
    Rng rng(derive_key(seed, 0x53485546, static_cast<std::uint64_t>(id)));
    s->diagnoses = permute_rows(s->diagnoses, rng);
    s->labs = permute_rows(s->labs, rng);
  }
  return out;
}

}  // namespace cardiofuse

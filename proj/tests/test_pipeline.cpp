#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>
#include <vector>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/pipeline.hpp"
#include "doctest.h"
#include "small_world.hpp"

using namespace cardiofuse;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

std::vector<std::uint8_t> bytes_of(const Checkpoint& c) {
  return encode_archive(kCheckpointMagic, kCheckpointVersion, checkpoint_archive(c));
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

TrainConfig config(Stage stage, std::size_t epochs, const std::string& freeze = "") {
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = epochs;
  tc.batch_size = 32;
  tc.freeze = FreezeMask::parse(freeze);
  return tc;
}

struct SmallRun {
  GeneratorConfig gen = small::generator();
  Dataset data = generate_dataset(gen);
  ArchitectureConfig arch = small::architecture(gen);
};

const SmallRun& small_run() {
  static const SmallRun run;
  return run;
}

const StageResult& small_stage1() {
  static const StageResult r =
      run_stage1_pretrain(small_run().data, init_bundle(small_run().arch, 1), config(Stage::kPretrainJe, 3));
  return r;
}

Dataset with_labels_corrupted(const Dataset& ds) {
  Dataset out = ds;
  for (Split* s : {&out.train, &out.val, &out.test}) {
    s->diagnoses = Tensor::full(s->diagnoses.shape(), 1.0);
    s->labs = Tensor::zeros(s->labs.shape());
  }
  return out;
}

}  // namespace

TEST_CASE("Adam first step on a scalar") {
  std::vector<double> theta{0.0};
  const std::vector<double> grad{1.0};
  AdamMoments mom{{0.0}, {0.0}};
  adam_update(theta, grad, mom, 1, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  CHECK(std::abs(theta[0] + 0.1 / (1 + 1e-8)) < 1e-15);
  CHECK(mom.first[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(mom.second[0] == doctest::Approx(0.001).epsilon(1e-15));
  CHECK_THROWS_AS(adam_update(theta, grad, mom, 0, AdamConfig{}), ContractError);
  CHECK_THROWS_AS(adam_update(theta, std::vector<double>{1, 2}, mom, 1, AdamConfig{}), ContractError);
}

TEST_CASE("Adam leaves parameters alone under zero gradient but counts the step") {
  ModelBundle bundle = init_bundle(small_run().arch, 2, {Network::kPhiX, Network::kPsiY});
  const ModelBundle before = bundle.clone();
  set_trainable(bundle, {Network::kPhiX, Network::kPsiY});
  AdamOptimizer opt(bundle, AdamConfig{});
  opt.step(bundle);
  opt.step(bundle);
  CHECK(opt.state().step == 2);
  const auto a = bundle.parameters(), b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i].tensor, b[i].tensor));
}

TEST_CASE("Adam converges on a quadratic") {
  std::vector<double> theta{0.0};
  AdamMoments mom{{0.0}, {0.0}};
  for (std::uint64_t t = 1; t <= 200; ++t) {
    const std::vector<double> grad{2 * (theta[0] - 3)};
    adam_update(theta, grad, mom, t, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  }
  CHECK(std::abs(theta[0] - 3) < 0.05);
}

TEST_CASE("training configs are validated") {
  TrainConfig tc;
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  TrainConfig bad = config(Stage::kPretrainJe, 1);
  bad.batch_size = 1;
  CHECK_THROWS_AS(run_stage1_pretrain(small_run().data, init_bundle(small_run().arch, 1), bad), ConfigError);
  CHECK(parse_stage(stage_name(Stage::kFinetuneRecon)) == Stage::kFinetuneRecon);
  CHECK_THROWS_AS(parse_stage("nope"), ConfigError);
}

TEST_CASE("epoch batches partition the training set") {
  const auto batches = epoch_batches(150, 64, 9, Stage::kFinetuneCls, 0);
  std::vector<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() >= 2);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(150);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(seen == all);
  CHECK(batches == epoch_batches(150, 64, 9, Stage::kFinetuneCls, 0));
  CHECK(batches != epoch_batches(150, 64, 9, Stage::kFinetuneCls, 1));

  const auto merged = epoch_batches(65, 64, 1, Stage::kPretrainJe, 0);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].size() == 65);
  CHECK(epoch_batches(129, 64, 1, Stage::kPretrainJe, 0).back().size() == 65);
}

TEST_CASE("stage 1 never reads labels") {
  const StageResult clean = small_stage1();
  const StageResult corrupted = run_stage1_pretrain(with_labels_corrupted(small_run().data),
                                                    init_bundle(small_run().arch, 1), config(Stage::kPretrainJe, 3));
  CHECK(clean.train_loss == corrupted.train_loss);
  CHECK(bytes_of(clean.checkpoint) == bytes_of(corrupted.checkpoint));
  // Heads built at initialization ride along untouched.
  const ModelBundle init = init_bundle(small_run().arch, 1);
  for (Network net : {Network::kPsiY, Network::kPsiM})
    for (const auto& p : init.parameters(net)) CHECK(same_bits(p.tensor, clean.checkpoint.model.parameter(p.name)));
}

TEST_CASE("stage results are deterministic") {
  const StageResult again =
      run_stage1_pretrain(small_run().data, init_bundle(small_run().arch, 1), config(Stage::kPretrainJe, 3));
  CHECK(again.train_loss == small_stage1().train_loss);
  CHECK(again.val_metric == small_stage1().val_metric);
  CHECK(bytes_of(again.checkpoint) == bytes_of(small_stage1().checkpoint));
  CHECK(again.train_loss.size() == 3);
  CHECK(again.best_epoch >= 1);
}

TEST_CASE("stage 2 freezes exactly the masked parameters") {
  const Checkpoint& init = small_stage1().checkpoint;
  const StageResult r =
      run_stage2_classification(small_run().data, init, config(Stage::kFinetuneCls, 2, "phi_x.block0"));
  CHECK(r.train_loss.size() == 2);
  const ModelBundle& after = r.checkpoint.model;
  REQUIRE(after.has(Network::kPsiY));

  for (const auto& p : init.model.parameters()) {
    const bool block0 = p.name.starts_with("phi_x.block0");
    const bool trained = (p.name.starts_with("phi_x") && !block0) || p.name.starts_with("psi_y");
    const bool same = same_bits(p.tensor, after.parameter(p.name));
    if (!trained) {
      CHECK_MESSAGE(same, p.name);
    } else {
      CHECK_MESSAGE(!same, p.name);
    }
  }
  for (const auto& p : after.parameters(Network::kPsiY)) {
    const auto& m = r.checkpoint.optimizer.moments.at(p.name);
    CHECK(!all_zero(m.first));
  }
  for (const auto& [name, m] : r.checkpoint.optimizer.moments) {
    if (name.starts_with("phi_x.block0") || !(name.starts_with("phi_x") || name.starts_with("psi_y"))) {
      CHECK_MESSAGE(all_zero(m.first), name);
      CHECK_MESSAGE(all_zero(m.second), name);
    }
  }
}

TEST_CASE("stage 2 starts from a fresh diagnosis head") {
  const Checkpoint& init = small_stage1().checkpoint;
  const TrainConfig tc = config(Stage::kFinetuneCls, 1, "phi_x.block0");
  const StageResult a = run_stage2_classification(small_run().data, init, tc);

  // A stale head in the starting checkpoint must not influence the result.
  Checkpoint stale = init;
  stale.model = init.model.clone();
  reinit_network(stale.model, Network::kPsiY, 999);
  const StageResult b = run_stage2_classification(small_run().data, stale, tc);
  CHECK(bytes_of(a.checkpoint) == bytes_of(b.checkpoint));

  Checkpoint untrained = initial_checkpoint(small_run().arch, 1);
  CHECK_THROWS_AS(run_stage2_classification(small_run().data, untrained, tc), ConfigError);
  TrainConfig relaxed = tc;
  relaxed.require_pretrained = false;
  CHECK_NOTHROW(run_stage2_classification(small_run().data, untrained, relaxed));
}

TEST_CASE("stage 3 under the default freeze leaves diagnosis logits unchanged") {
  const Checkpoint& s1 = small_stage1().checkpoint;
  const StageResult s2 = run_stage2_classification(small_run().data, s1, config(Stage::kFinetuneCls, 2, "phi_x.block0"));
  const StageResult s3 = run_stage3_reconstruction(small_run().data, s2.checkpoint, config(Stage::kFinetuneRecon, 2, "phi_x"));
  REQUIRE(s3.checkpoint.model.has(Network::kPsiM));

  NoGradGuard no_grad;
  const Tensor& x = small_run().data.test.x;
  const Tensor before = classify(s2.checkpoint.model, encode_signal(s2.checkpoint.model, x));
  const Tensor after = classify(s3.checkpoint.model, encode_signal(s3.checkpoint.model, x));
  CHECK(same_bits(before, after));
  for (const auto& p : s2.checkpoint.model.parameters())
    if (!p.name.starts_with("psi_m")) CHECK_MESSAGE(same_bits(p.tensor, s3.checkpoint.model.parameter(p.name)), p.name);
  for (const auto& [name, m] : s3.checkpoint.optimizer.moments)
    if (!name.starts_with("psi_m")) CHECK_MESSAGE(all_zero(m.first), name);
}

TEST_CASE("signal-only baseline ignores tabular data; late fusion uses it") {
  const SmallRun& run = small_run();
  Dataset blank = run.data;
  for (Split* s : {&blank.train, &blank.val, &blank.test}) s->m = Tensor::zeros(s->m.shape());

  const TrainConfig so = config(Stage::kBaselineSignalOnly, 2);
  const StageResult a = run_baseline(run.data, run.arch, so), b = run_baseline(blank, run.arch, so);
  CHECK(a.train_loss == b.train_loss);
  CHECK(bytes_of(a.checkpoint) == bytes_of(b.checkpoint));
  CHECK(!a.checkpoint.model.has(Network::kPhiM));

  const TrainConfig lf = config(Stage::kBaselineLateFusion, 2);
  const StageResult c = run_baseline(run.data, run.arch, lf), d = run_baseline(blank, run.arch, lf);
  CHECK(c.train_loss != d.train_loss);
  CHECK(c.checkpoint.model.has(Network::kFusion));
}

TEST_CASE("checkpoints roundtrip bitwise with the documented tensor count") {
  // Default architecture on a handful of records: only shapes matter here.
  GeneratorConfig g;
  g.n_train = 8;
  g.n_val = 4;
  g.n_test = 4;
  const Dataset ds = generate_dataset(g);
  const ArchitectureConfig arch;
  TrainConfig tc = config(Stage::kPretrainJe, 1);
  tc.batch_size = 4;
  const StageResult s1 = run_stage1_pretrain(ds, init_bundle(arch, 1), tc);
  tc.stage = Stage::kFinetuneCls;
  tc.freeze = FreezeMask::parse("phi_x.block0");
  const StageResult s2 = run_stage2_classification(ds, s1.checkpoint, tc);
  tc.stage = Stage::kFinetuneRecon;
  tc.freeze = FreezeMask::parse("phi_x");
  const StageResult s3 = run_stage3_reconstruction(ds, s2.checkpoint, tc);

  CHECK(init_bundle(arch, 1).parameter_count() == 14594);
  // 28 parameters, their two Adam moments, and the step counter.
  CHECK(checkpoint_archive(s1.checkpoint).tensors.size() == 85);
  CHECK(checkpoint_archive(s2.checkpoint).tensors.size() == 85);
  CHECK(checkpoint_archive(s3.checkpoint).tensors.size() == 85);
  CHECK(checkpoint_archive(initial_checkpoint(arch, 1)).tensors.size() == 28);

  const auto path = std::filesystem::temp_directory_path() / "cardiofuse_test_checkpoint.cmje";
  save_checkpoint(path, s3.checkpoint);
  const Checkpoint back = load_checkpoint(path);
  CHECK(bytes_of(back) == bytes_of(s3.checkpoint));
  CHECK(back.stage == Stage::kFinetuneRecon);
  CHECK(back.epoch == s3.checkpoint.epoch);
  CHECK(std::filesystem::file_size(path) == encoded_size(checkpoint_archive(s3.checkpoint)));

  // Loading the stage-1 file keeps its networks exactly.
  save_checkpoint(path, s1.checkpoint);
  const Checkpoint s1_back = load_checkpoint(path);
  for (Network net : {Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM}) {
    REQUIRE(s1_back.model.has(net));
    for (const auto& p : s1.checkpoint.model.parameters(net))
      CHECK(same_bits(p.tensor, s1_back.model.parameter(p.name)));
  }
  CHECK(bytes_of(s1_back) == bytes_of(s1.checkpoint));

  auto raw = read_file(path);
  raw[4] = 9;
  write_file(path, raw);
  try {
    load_checkpoint(path);
    FAIL("version mismatch accepted");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::kVersionMismatch);
  }
  std::filesystem::remove(path);
}

TEST_CASE("label shuffling permutes labels and keeps inputs") {
  const Dataset& ds = small_run().data;
  const Dataset s = shuffle_labels(ds, 4);
  CHECK(same_bits(s.train.x, ds.train.x));
  CHECK(same_bits(s.test.m, ds.test.m));
  CHECK(!same_bits(s.train.diagnoses, ds.train.diagnoses));
  auto column_sums = [](const Tensor& t) {
    const std::size_t n = t.dim(0), k = t.dim(1);
    std::vector<double> out(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) out[j] += t[i * k + j];
    return out;
  };
  CHECK(column_sums(s.train.diagnoses) == column_sums(ds.train.diagnoses));
  CHECK(column_sums(s.val.labs) == column_sums(ds.val.labs));
  CHECK(bytes_of(initial_checkpoint(small_run().arch, 1)) == bytes_of(initial_checkpoint(small_run().arch, 1)));
}

TEST_CASE("joint-embedding pre-training aligns the two views at defaults") {
  const Dataset ds = generate_dataset(GeneratorConfig{});
  const ArchitectureConfig arch;
  const ModelBundle untrained = init_bundle(arch, 1);

  double untrained_loss = 0;
  {
    NoGradGuard no_grad;
    const Tensor zx = project(untrained, encode_signal(untrained, ds.val.x), Side::kSignal);
    const Tensor zm = project(untrained, encode_tabular(untrained, tabular_features(arch, ds.val)), Side::kTabular);
    untrained_loss = barlow_twins(zx, zm, kDefaultLambda).loss.item();
  }
  const StageResult r = run_stage1_pretrain(ds, untrained, config(Stage::kPretrainJe, 30));
  CHECK(r.val_metric_name == "val_barlow_twins_loss");
  CHECK(r.val_metric.front() < untrained_loss);
  CHECK(r.val_alignment.front() < r.val_alignment.back());
  CHECK(r.val_alignment.back() > 0.5);
}

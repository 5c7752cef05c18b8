#include <algorithm>
#include <cmath>
#include <vector>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/eval.hpp"
#include "cardiofuse/pipeline.hpp"
#include "doctest.h"
#include "small_world.hpp"

using namespace cardiofuse;

namespace {

// 1 per correctly ordered (positive, negative) pair, 0.5 per tie.
double pairwise_oracle(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      pairs += 1;
    }
  }
  return wins / pairs;
}

double auroc(const std::vector<double>& s, const std::vector<double>& y) { return auroc_binary(s, y).value(); }

struct Instance {
  std::vector<double> scores, labels;
};

// Scores on a coarse grid so ties are common; both classes guaranteed.
Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(std::round(rng.uniform(0, 20)) / 20);
    in.labels.push_back(rng.uniform() < 0.4 ? 1.0 : 0.0);
  }
  in.labels[0] = 1.0;
  in.labels[1] = 0.0;
  return in;
}

Tensor column_major_to_rows(const std::vector<std::vector<double>>& cols) {
  const std::size_t n = cols[0].size(), t = cols.size();
  std::vector<double> v(n * t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < t; ++j) v[i * t + j] = cols[j][i];
  return Tensor({n, t}, std::move(v));
}

}  // namespace

TEST_CASE("trivial AUROC cases") {
  CHECK(auroc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == 1.0);
  CHECK(auroc({0.3, 0.7}, {1, 0}) == 0.0);
  CHECK(auroc({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK(!auroc_binary(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{1, 1, 1}).has_value());
  CHECK(!auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0}).has_value());
}

TEST_CASE("AUROC input contracts") {
  CHECK_THROWS_AS(auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<double>{1}), DimensionError);
  CHECK_THROWS_AS(auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 0.5}), ContractError);
  CHECK_THROWS_AS(auroc_binary(std::vector<double>{0.1, NAN}, std::vector<double>{1, 0}), ContractError);
}

TEST_CASE("rank AUROC equals the pairwise oracle with ties") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance in = random_instance(rng, static_cast<std::size_t>(rng.uniform_int(2, 200)));
    CHECK(std::abs(auroc(in.scores, in.labels) - pairwise_oracle(in.scores, in.labels)) < 1e-12);
  }
}

TEST_CASE("AUROC is invariant under strictly increasing maps") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s, y;
    for (int i = 0; i < 60; ++i) {
      s.push_back(rng.uniform(-3, 3));
      y.push_back(rng.uniform() < 0.5 ? 1.0 : 0.0);
    }
    y[0] = 1;
    y[1] = 0;
    std::vector<double> e(s), a(s);
    for (double& v : e) v = std::exp(v);
    for (double& v : a) v = 2.5 * v + 11;
    const double base = auroc(s, y);
    CHECK(auroc(e, y) == base);
    CHECK(auroc(a, y) == base);

    std::vector<double> flipped(y);
    for (double& v : flipped) v = 1 - v;
    CHECK(std::abs(base + auroc(s, flipped) - 1.0) < 1e-12);
  }
}

TEST_CASE("macro AUROC averages scored labels and reports skipped ones") {
  const Tensor scores = column_major_to_rows({{0.9, 0.8, 0.3, 0.2}, {0.9, 0.8, 0.3, 0.2}});
  const MacroAuroc opposite = macro_auroc(scores, column_major_to_rows({{1, 1, 0, 0}, {0, 0, 1, 1}}));
  CHECK(opposite.macro == 0.5);
  CHECK(opposite.skipped.empty());

  const MacroAuroc skip = macro_auroc(scores, column_major_to_rows({{1, 0, 1, 0}, {1, 1, 1, 1}}));
  CHECK(skip.macro == auroc({0.9, 0.8, 0.3, 0.2}, {1, 0, 1, 0}));
  CHECK(skip.skipped == std::vector<std::size_t>{1});
  CHECK(!skip.per_label[1].has_value());

  CHECK_THROWS_AS(macro_auroc(scores, column_major_to_rows({{1, 1, 1, 1}, {0, 0, 0, 0}})), UndefinedMetricError);
  CHECK_THROWS_AS(macro_auroc(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {1})), ContractError);
}

TEST_CASE("macro AUROC matches per-label oracles and ignores label order") {
  Rng rng(23);
  std::vector<std::vector<double>> s, y;
  double expected = 0;
  for (int j = 0; j < 5; ++j) {
    const Instance in = random_instance(rng, 80);
    s.push_back(in.scores);
    y.push_back(in.labels);
    expected += pairwise_oracle(in.scores, in.labels) / 5;
  }
  const MacroAuroc m = macro_auroc(column_major_to_rows(s), column_major_to_rows(y));
  CHECK(std::abs(m.macro - expected) < 1e-12);

  std::reverse(s.begin(), s.end());
  std::reverse(y.begin(), y.end());
  const MacroAuroc r = macro_auroc(column_major_to_rows(s), column_major_to_rows(y));
  CHECK(std::abs(r.macro - m.macro) < 1e-12);
  for (std::size_t j = 0; j < 5; ++j) CHECK(*r.per_label[j] == *m.per_label[4 - j]);
}

TEST_CASE("permutation null centres on one half") {
  Rng rng(24);
  std::vector<std::vector<double>> s(3), y(3);
  for (int j = 0; j < 3; ++j) {
    const Instance in = random_instance(rng, 200);
    s[j] = in.scores;
    y[j] = in.labels;
  }
  const NullDistribution d = permutation_null(column_major_to_rows(s), column_major_to_rows(y), 200, 5);
  CHECK(std::abs(d.mean - 0.5) < 0.02);
  CHECK(d.p95 > d.mean);
  CHECK(d.stddev > 0);
  CHECK_THROWS_AS(permutation_null(column_major_to_rows(s), column_major_to_rows(y), 1, 5), ConfigError);
}

TEST_CASE("evaluate reports only the heads a model has") {
  const GeneratorConfig g = small::generator();
  const Dataset ds = generate_dataset(g);
  const ArchitectureConfig arch = small::architecture(g);

  const ModelBundle signal_only = init_bundle(arch, 1, {Network::kPhiX, Network::kPsiY});
  const MetricsReport r = evaluate(signal_only, ds, SplitId::kTest);
  CHECK(r.split == "test");
  CHECK(r.diagnoses.has_value());
  CHECK(!r.labs.has_value());
  CHECK(!to_json(r).contains("labs"));
  CHECK(to_json(r).dump() == to_json(evaluate(signal_only, ds, SplitId::kTest)).dump());

  const ModelBundle full = init_bundle(arch, 1);
  const MetricsReport both = evaluate(full, ds, SplitId::kVal);
  CHECK(both.diagnoses.has_value());
  CHECK(both.labs.has_value());
  for (const auto& v : both.labs->per_label)
    if (v) CHECK((*v >= 0.0 && *v <= 1.0));

  GeneratorConfig other = g;
  other.seq_len = 128;
  other.n_train = other.n_val = other.n_test = 2;
  CHECK_THROWS_AS(evaluate(full, generate_dataset(other), SplitId::kTest), ConfigError);
}

TEST_CASE("explain reads one shared embedding") {
  const GeneratorConfig g = small::generator();
  const Dataset ds = generate_dataset(g);
  const ModelBundle model = init_bundle(small::architecture(g), 4);
  const std::vector<std::size_t> row{3};
  const Tensor x = reshape(gather_rows(ds.test.x, row), {g.lead_count, g.seq_len});

  const Explanation e = explain(model, x, g.n_labs);
  REQUIRE(e.top_labs.size() == g.n_labs);
  for (std::size_t i = 1; i < e.top_labs.size(); ++i) {
    const auto& prev = e.top_labs[i - 1];
    const auto& cur = e.top_labs[i];
    CHECK((prev.probability > cur.probability || (prev.probability == cur.probability && prev.index < cur.index)));
  }

  NoGradGuard no_grad;
  const Tensor h = encode_signal(model, x);
  CHECK(h.data().size() == e.shared_embedding.data().size());
  CHECK(std::equal(h.data().begin(), h.data().end(), e.shared_embedding.data().begin()));

  const Tensor lab_logits = predict_labs(model, e.shared_embedding);
  for (const auto& lab : e.top_labs) {
    CHECK(lab.probability == stable_sigmoid(lab_logits[lab.index]));
    CHECK(lab.name == lab_name(lab.index));
  }
  const Tensor dx_logits = classify(model, e.shared_embedding);
  for (std::size_t k = 0; k < g.n_diagnoses; ++k) CHECK(e.diagnosis_probabilities[k] == stable_sigmoid(dx_logits[k]));

  CHECK(explain(model, x, 2).top_labs.size() == 2);
  CHECK_THROWS_AS(explain(model, x, 0), ConfigError);
  CHECK_THROWS_AS(explain(model, x, g.n_labs + 1), ConfigError);
  const ModelBundle no_labs = init_bundle(small::architecture(g), 4, {Network::kPhiX, Network::kPsiY});
  CHECK_THROWS_AS(explain(no_labs, x, 1), CapabilityError);
}

TEST_CASE("a trained joint-embedding model beats the permutation null") {
  // Generator and architecture defaults; shortened schedules keep this to seconds.
  const Dataset ds = generate_dataset(GeneratorConfig{});
  const ArchitectureConfig arch;

  TrainConfig tc;
  tc.epochs = 10;
  tc.stage = Stage::kPretrainJe;
  const StageResult s1 = run_stage1_pretrain(ds, init_bundle(arch, 1), tc);
  tc.stage = Stage::kFinetuneCls;
  tc.freeze = FreezeMask::parse("phi_x.block0");
  const StageResult s2 = run_stage2_classification(ds, s1.checkpoint, tc);
  tc.stage = Stage::kFinetuneRecon;
  tc.freeze = FreezeMask::parse("phi_x");
  const StageResult s3 = run_stage3_reconstruction(ds, s2.checkpoint, tc);

  const ModelBundle& model = s3.checkpoint.model;
  const MetricsReport r = evaluate(model, ds, SplitId::kTest);
  const NullDistribution dx = permutation_null(diagnosis_probabilities(model, ds.test), ds.test.diagnoses, 200, 1);
  const NullDistribution labs = permutation_null(lab_probabilities(model, ds.test), ds.test.labs, 200, 2);
  CHECK(r.diagnoses->macro > dx.p95);
  CHECK(r.labs->macro > labs.p95);
}

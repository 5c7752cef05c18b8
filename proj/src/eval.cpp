#include "cardiofuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/pipeline.hpp"
#include "cardiofuse/rng.hpp"

namespace cardiofuse {

std::optional<double> auroc_binary(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw ContractError("auroc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ContractError("auroc: non-finite score");
    if (labels[i] == 1.0) ++positives;
  }
  const std::size_t n = scores.size();
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block occupies ranks i+1..j; each gets the midrank.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MacroAuroc macro_auroc(const Tensor& scores, const Tensor& labels) {
  if (scores.rank() != 2 || scores.shape() != labels.shape()) {
    throw DimensionError("macro_auroc: scores " + to_string(scores.shape()) + " vs labels " +
                         to_string(labels.shape()));
  }
  const std::size_t n = scores.dim(0), t = scores.dim(1);
  if (n < 2) throw ContractError("macro_auroc: need at least 2 samples");
  MacroAuroc result;
  std::vector<double> col_scores(n), col_labels(n);
  double total = 0.0;
  std::size_t scored = 0;
  for (std::size_t j = 0; j < t; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      col_scores[i] = scores[i * t + j];
      col_labels[i] = labels[i * t + j];
    }
    auto a = auroc_binary(col_scores, col_labels);
    result.per_label.push_back(a);
    if (a) {
      total += *a;
      ++scored;
    } else {
      result.skipped.push_back(j);
    }
  }
  if (scored == 0) throw UndefinedMetricError("macro_auroc: every label is single-class");
  result.macro = total / static_cast<double>(scored);
  return result;
}

namespace {

void check_dims(const ModelBundle& model, const GeneratorConfig& c) {
  const auto& a = model.arch;
  auto mismatch = [](const std::string& what, std::size_t model_dim, std::size_t data_dim) {
    throw ConfigError("model/dataset mismatch: " + what + " is " + std::to_string(model_dim) + " in the model but " +
                      std::to_string(data_dim) + " in the dataset");
  };
  if (a.signal.lead_count != c.lead_count) mismatch("lead_count", a.signal.lead_count, c.lead_count);
  if (a.signal.seq_len != c.seq_len) mismatch("seq_len", a.signal.seq_len, c.seq_len);
  if (model.psi_y || model.fusion) {
    if (a.n_diagnoses != c.n_diagnoses) mismatch("n_diagnoses", a.n_diagnoses, c.n_diagnoses);
  }
  if (model.psi_m && a.n_labs != c.n_labs) mismatch("n_labs", a.n_labs, c.n_labs);
}

Tensor probabilities(const Tensor& logits) { return sigmoid(logits); }

}  // namespace

Tensor diagnosis_probabilities(const ModelBundle& model, const Split& split) {
  NoGradGuard no_grad;
  const Tensor h_x = encode_signal(model, split.x);
  if (model.fusion) {
    const Tensor h_m = encode_tabular(model, tabular_features(model.arch, split));
    return probabilities(fuse_classify(model, h_x, h_m));
  }
  return probabilities(classify(model, h_x));
}

Tensor lab_probabilities(const ModelBundle& model, const Split& split) {
  NoGradGuard no_grad;
  return probabilities(predict_labs(model, encode_signal(model, split.x)));
}

MetricsReport evaluate(const ModelBundle& model, const Dataset& dataset, SplitId split_id) {
  check_dims(model, dataset.config);
  const Split& split = dataset.split(split_id);
  MetricsReport report;
  report.split = split_name(split_id);
  if (model.psi_y || model.fusion) report.diagnoses = macro_auroc(diagnosis_probabilities(model, split), split.diagnoses);
  if (model.psi_m) report.labs = macro_auroc(lab_probabilities(model, split), split.labs);
  return report;
}

std::string lab_name(std::size_t index) { return "lab_" + std::to_string(index); }

Explanation explain(const ModelBundle& model, const Tensor& x, std::size_t k) {
  if (!model.psi_m) throw CapabilityError("explain: model has no lab reconstruction head (psi_m)");
  if (!model.psi_y) throw CapabilityError("explain: model has no diagnosis head (psi_y)");
  const std::size_t p = model.arch.n_labs;
  if (k < 1 || k > p) throw ConfigError("explain: top-k must lie in [1, " + std::to_string(p) + "]");
  NoGradGuard no_grad;
  Explanation out;
  out.shared_embedding = encode_signal(model, x);
  const Tensor dx_logits = classify(model, out.shared_embedding);
  const Tensor lab_logits = predict_labs(model, out.shared_embedding);
  for (double v : dx_logits.data()) out.diagnosis_probabilities.push_back(stable_sigmoid(v));
  std::vector<LabPrediction> labs;
  for (std::size_t i = 0; i < p; ++i) labs.push_back({lab_name(i), i, stable_sigmoid(lab_logits[i])});
  std::stable_sort(labs.begin(), labs.end(),
                   [](const LabPrediction& a, const LabPrediction& b) { return a.probability > b.probability; });
  labs.resize(k);
  out.top_labs = std::move(labs);
  return out;
}

NullDistribution permutation_null(const Tensor& scores, const Tensor& labels, std::size_t permutations,
                                  std::uint64_t seed) {
  if (permutations < 2) throw ConfigError("permutation_null: need at least 2 permutations");
  const std::size_t n = labels.dim(0), t = labels.dim(1);
  Rng rng(derive_key(seed, 0x5045524D));
  std::vector<std::size_t> order(n);
  std::vector<double> values;
  values.reserve(permutations);
  for (std::size_t r = 0; r < permutations; ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<double> shuffled(n * t);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < t; ++j) shuffled[i * t + j] = labels[order[i] * t + j];
    values.push_back(macro_auroc(scores, Tensor({n, t}, std::move(shuffled))).macro);
  }
  NullDistribution d;
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - d.mean) * (v - d.mean);
  d.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(values.size()))) - 1;
  d.p95 = values[idx];
  return d;
}

nlohmann::ordered_json to_json(const MacroAuroc& metric) {
  nlohmann::ordered_json j;
  j["macro_auroc"] = metric.macro;
  auto per = nlohmann::ordered_json::array();
  for (const auto& a : metric.per_label) per.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json());
  j["per_label_auroc"] = per;
  j["skipped_labels"] = metric.skipped;
  return j;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["split"] = report.split;
  if (report.diagnoses) j["diagnoses"] = to_json(*report.diagnoses);
  if (report.labs) j["labs"] = to_json(*report.labs);
  return j;
}

nlohmann::ordered_json to_json(const Explanation& e) {
  nlohmann::ordered_json j;
  j["diagnosis_probabilities"] = e.diagnosis_probabilities;
  auto labs = nlohmann::ordered_json::array();
  for (const auto& lab : e.top_labs) {
    labs.push_back({{"lab", lab.name}, {"index", lab.index}, {"probability", lab.probability}});
  }
  j["top_labs"] = labs;
  return j;
}

}  // namespace cardiofuse

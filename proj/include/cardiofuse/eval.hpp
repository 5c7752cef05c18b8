#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cardiofuse/models.hpp"
#include "cardiofuse/synthdata.hpp"
#include "json.hpp"

namespace cardiofuse {

/// Mann–Whitney AUROC with midranks for tied scores:
/// (sum of positive ranks - n+(n+ + 1)/2) / (n+ · n-).
/// Returns nullopt when only one class is present (the label is skipped, not scored).
std::optional<double> auroc_binary(std::span<const double> scores, std::span<const double> labels);

struct MacroAuroc {
  double macro = 0.0;
  std::vector<std::optional<double>> per_label;
  std::vector<std::size_t> skipped;
};

/// Column-wise AUROC of n×T scores against n×T labels, averaged over labels
/// with both classes. Throws UndefinedMetricError if every label is single-class.
MacroAuroc macro_auroc(const Tensor& scores, const Tensor& labels);

struct MetricsReport {
  std::string split;
  std::optional<MacroAuroc> diagnoses;
  std::optional<MacroAuroc> labs;
};

/// Row-wise sigmoid probabilities for a whole split. Diagnosis scores come
/// from Ψy, or from the late-fusion head when the model has one.
Tensor diagnosis_probabilities(const ModelBundle& model, const Split& split);
Tensor lab_probabilities(const ModelBundle& model, const Split& split);

/// Scores every encounter of the split with whichever heads the model has.
MetricsReport evaluate(const ModelBundle& model, const Dataset& dataset, SplitId split);

struct LabPrediction {
  std::string name;
  std::size_t index = 0;
  double probability = 0.0;
};

struct Explanation {
  std::vector<double> diagnosis_probabilities;
  std::vector<LabPrediction> top_labs;  // descending; ties by index ascending
  Tensor shared_embedding;              // the h_x fed to both heads
};

std::string lab_name(std::size_t index);

/// One Φx pass; Ψy and Ψm both read the same h_x. Requires 1 <= k <= P.
Explanation explain(const ModelBundle& model, const Tensor& x, std::size_t k);

struct NullDistribution {
  double mean = 0.0;
  double stddev = 0.0;
  double p95 = 0.0;
};

/// Macro-AUROC of fixed scores against row-permuted labels.
NullDistribution permutation_null(const Tensor& scores, const Tensor& labels, std::size_t permutations,
                                  std::uint64_t seed);

nlohmann::ordered_json to_json(const MacroAuroc& metric);
nlohmann::ordered_json to_json(const MetricsReport& report);
nlohmann::ordered_json to_json(const Explanation& explanation);

}  // namespace cardiofuse

#pragma once

#include <cstddef>
#include <vector>

#include "cardiofuse/tensor.hpp"

namespace cardiofuse {

inline constexpr double kDefaultLambda = 0.005;
/// Added to the population variance before the square root.
inline constexpr double kVarianceStabilizer = 1e-12;
/// Columns whose unstabilized std falls below this are reported as degenerate.
inline constexpr double kDegenerateStd = 1e-8;

struct NormalizedBatch {
  Tensor values;  // N×E, zero-mean unit-variance columns
  std::vector<std::size_t> degenerate_columns;
};

/// Column-wise standardization with population statistics:
/// (z - mean) / sqrt(var + 1e-12). Differentiable through mean and variance.
/// Degenerate columns are logged as a warning and returned; computation proceeds.
NormalizedBatch batch_normalize(const Tensor& z);

/// C[i][j] = (1/N) sum_b zx[b][i] * zm[b][j] for already-normalized N×E batches.
Tensor cross_correlation(const Tensor& zx_hat, const Tensor& zm_hat);

struct BarlowTwinsResult {
  Tensor loss;        // scalar
  Tensor cross_corr;  // E×E
  std::vector<std::size_t> degenerate_signal;
  std::vector<std::size_t> degenerate_tabular;

  bool degenerate() const { return !degenerate_signal.empty() || !degenerate_tabular.empty(); }
};

/// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2, with each side normalized independently.
BarlowTwinsResult barlow_twins(const Tensor& zx, const Tensor& zm, double lambda = kDefaultLambda);

/// Multi-label BCE on logits, averaged over labels (and samples for N×K input).
/// `targets` must be 0/1 and shaped like `logits`.
Tensor bce_with_logits(const Tensor& targets, const Tensor& logits);

}  // namespace cardiofuse

#include "cardiofuse/losses.hpp"

#include <cmath>
#include <string>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/log.hpp"

namespace cardiofuse {

namespace {

void require_batch(const Tensor& z, const char* who) {
  if (!z.defined() || z.rank() != 2) {
    throw DimensionError(std::string(who) + ": expected an N×E embedding batch");
  }
  if (z.dim(0) < 2) {
    throw ContractError(std::string(who) + ": batch statistics need N >= 2, got N = " + std::to_string(z.dim(0)));
  }
}

}  // namespace

NormalizedBatch batch_normalize(const Tensor& z) {
  require_batch(z, "batch_normalize");
  const Tensor mu = mean(z, 0);
  const Tensor centered = add_rowwise(z, neg(mu));
  const Tensor var = mean(square(centered), 0);

  NormalizedBatch result;
  const auto v = var.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::sqrt(v[i]) < kDegenerateStd) result.degenerate_columns.push_back(i);
  }
  if (!result.degenerate_columns.empty()) {
    log_warning("batch_normalize: " + std::to_string(result.degenerate_columns.size()) +
                " degenerate column(s) with std < 1e-8; relying on variance stabilizer");
  }
  const Tensor sigma = sqrt(add_scalar(var, kVarianceStabilizer));
  result.values = mul_rowwise(centered, reciprocal(sigma));
  return result;
}

Tensor cross_correlation(const Tensor& zx_hat, const Tensor& zm_hat) {
  if (!zx_hat.defined() || !zm_hat.defined() || zx_hat.rank() != 2 || zx_hat.shape() != zm_hat.shape()) {
    throw DimensionError("cross_correlation: batches must share an N×E shape, got " + to_string(zx_hat.shape()) +
                         " and " + to_string(zm_hat.shape()));
  }
  const double inv_n = 1.0 / static_cast<double>(zx_hat.dim(0));
  return scale(matmul(transpose(zx_hat), zm_hat), inv_n);
}

BarlowTwinsResult barlow_twins(const Tensor& zx, const Tensor& zm, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("barlow_twins: lambda must be >= 0");
  require_batch(zx, "barlow_twins");
  require_batch(zm, "barlow_twins");
  if (zx.shape() != zm.shape()) {
    throw DimensionError("barlow_twins: embedding batches differ, " + to_string(zx.shape()) + " vs " +
                         to_string(zm.shape()));
  }
  NormalizedBatch nx = batch_normalize(zx);
  NormalizedBatch nm = batch_normalize(zm);
  const Tensor c = cross_correlation(nx.values, nm.values);

  const std::size_t e = zx.dim(1);
  std::vector<double> eye(e * e, 0.0);
  std::vector<double> off(e * e, 1.0);
  for (std::size_t i = 0; i < e; ++i) {
    eye[i * e + i] = 1.0;
    off[i * e + i] = 0.0;
  }
  const Tensor identity({e, e}, eye);
  const Tensor off_mask({e, e}, off);
  const Tensor invariance = sum(square(sub(identity, mul(c, identity))));
  const Tensor redundancy = sum(square(mul(c, off_mask)));

  BarlowTwinsResult result;
  result.loss = add(invariance, scale(redundancy, lambda));
  result.cross_corr = c;
  result.degenerate_signal = std::move(nx.degenerate_columns);
  result.degenerate_tabular = std::move(nm.degenerate_columns);
  return result;
}

Tensor bce_with_logits(const Tensor& targets, const Tensor& logits) {
  if (!targets.defined() || !logits.defined()) throw ContractError("bce_with_logits: undefined operand");
  if (targets.shape() != logits.shape()) {
    throw DimensionError("bce_with_logits: targets " + to_string(targets.shape()) + " vs logits " +
                         to_string(logits.shape()));
  }
  for (double y : targets.data()) {
    if (y != 0.0 && y != 1.0) throw ContractError("bce_with_logits: target " + std::to_string(y) + " is not binary");
  }
  return bce_with_logits_mean(logits, targets);
}

}  // namespace cardiofuse

#include "cardiofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cardiofuse/losses.hpp"
#include "cardiofuse/rng.hpp"

namespace cardiofuse {

double relative_error(double autodiff, double numeric) {
  const double denom = std::max({std::abs(autodiff), std::abs(numeric), 1e-6});
  return std::abs(autodiff - numeric) / denom;
}

GradCheckResult check_gradient(const std::string& name, const std::function<Tensor()>& loss,
                               const std::vector<NamedParameter>& inputs, const GradCheckOptions& options,
                               std::uint64_t probe_seed) {
  for (const auto& in : inputs) {
    in.tensor.node()->grad.clear();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    const auto g = in.tensor.grad();
    analytic.emplace_back(g.empty() ? std::vector<double>(in.tensor.size(), 0.0) : std::vector<double>(g.begin(), g.end()));
  }

  GradCheckResult result;
  result.name = name;
  result.probes = options.probes;
  Rng rng(probe_seed);
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < options.probes; ++p) {
    const std::size_t which = p % inputs.size();
    Tensor t = inputs[which].tensor;
    const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(t.size()) - 1));
    auto data = t.mutable_data();
    const double original = data[idx];
    data[idx] = original + options.step;
    const double plus = loss().item();
    data[idx] = original - options.step;
    const double minus = loss().item();
    data[idx] = original;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double err = relative_error(analytic[which][idx], numeric);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_probe = inputs[which].name + "[" + std::to_string(idx) + "]";
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  for (const auto& in : inputs) in.tensor.node()->grad.clear();
  return result;
}

bool GradCheckReport::passed() const {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

/// Uniform in ±[0.1, 2] so relu inputs sit well away from the kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor binary_targets(Rng& rng, Shape shape) {
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(v));
}

/// sum(out ∘ w) with fixed random w, so every output element carries a distinct upstream gradient.
Tensor weighted_sum(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

}  // namespace

GradCheckReport run_gradcheck(const ArchitectureConfig& arch, const GradCheckOptions& options) {
  GradCheckReport report;
  report.options = options;
  Rng rng(derive_key(options.seed, 0x6763));
  std::uint64_t case_id = 0;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<NamedParameter> inputs) {
    report.results.push_back(check_gradient(name, f, inputs, options, derive_key(options.seed, 0x7072, case_id++)));
  };
  auto weights_for = [&](const Shape& shape) { return random_leaf(rng, shape, -2.0, 2.0).detach(); };

  // Unary elementwise primitives.
  struct Unary {
    const char* name;
    Tensor (*op)(const Tensor&);
    double lo, hi;
  };
  const Unary unary[] = {
      {"neg", &neg, -2, 2},        {"sigmoid", &sigmoid, -2, 2}, {"exp", &exp, -2, 2},
      {"square", &square, -2, 2},  {"log", &log, 0.5, 2},        {"sqrt", &sqrt, 0.5, 2},
      {"reciprocal", &reciprocal, 0.5, 2}, {"transpose", &transpose, -2, 2},
  };
  for (const auto& u : unary) {
    Tensor a = random_leaf(rng, {3, 4}, u.lo, u.hi);
    const Tensor w = weights_for(u.op(a.detach()).shape());
    check(u.name, [&, a, w] { return weighted_sum(u.op(a), w); }, {{"a", a}});
  }
  {
    Tensor a = away_from_zero(rng, {3, 4});
    const Tensor w = weights_for({3, 4});
    check("relu", [=] { return weighted_sum(relu(a), w); }, {{"a", a}});
  }

  // Binary elementwise and shape primitives.
  {
    Tensor a = random_leaf(rng, {3, 4}, -2, 2), b = random_leaf(rng, {3, 4}, -2, 2), s = random_leaf(rng, {}, -2, 2);
    const Tensor w = weights_for({3, 4});
    check("add", [=] { return weighted_sum(add(a, b), w); }, {{"a", a}, {"b", b}});
    check("sub", [=] { return weighted_sum(sub(a, b), w); }, {{"a", a}, {"b", b}});
    check("mul", [=] { return weighted_sum(mul(a, b), w); }, {{"a", a}, {"b", b}});
    check("mul_scalar", [=] { return weighted_sum(mul(a, s), w); }, {{"a", a}, {"s", s}});
    check("add_scalar_tensor", [=] { return weighted_sum(add(s, b), w); }, {{"s", s}, {"b", b}});
    check("scale", [=] { return weighted_sum(scale(a, -1.7), w); }, {{"a", a}});
    check("add_scalar", [=] { return weighted_sum(add_scalar(a, 0.3), w); }, {{"a", a}});
    check("reshape", [=] { return weighted_sum(reshape(a, {2, 6}), reshape(w, {2, 6})); }, {{"a", a}});
  }
  {
    Tensor a = random_leaf(rng, {3, 4}, -2, 2), b = random_leaf(rng, {4, 2}, -2, 2);
    const Tensor w = weights_for({3, 2});
    check("matmul", [=] { return weighted_sum(matmul(a, b), w); }, {{"a", a}, {"b", b}});
  }
  {
    Tensor m = random_leaf(rng, {3, 4}, -2, 2), r = random_leaf(rng, {4}, -2, 2);
    const Tensor w = weights_for({3, 4});
    check("add_rowwise", [=] { return weighted_sum(add_rowwise(m, r), w); }, {{"matrix", m}, {"row", r}});
    check("mul_rowwise", [=] { return weighted_sum(mul_rowwise(m, r), w); }, {{"matrix", m}, {"row", r}});
  }
  {
    Tensor l = random_leaf(rng, {3, 2}, -2, 2), r = random_leaf(rng, {3, 4}, -2, 2);
    const Tensor w = weights_for({3, 6});
    check("concat_cols", [=] { return weighted_sum(concat_cols(l, r), w); }, {{"left", l}, {"right", r}});
  }
  {
    Tensor a = random_leaf(rng, {5, 3}, -2, 2);
    const std::vector<std::size_t> rows{4, 0, 4, 2};
    const Tensor w = weights_for({4, 3});
    check("gather_rows", [=] { return weighted_sum(gather_rows(a, rows), w); }, {{"a", a}});
  }
  {
    Tensor a = random_leaf(rng, {2, 3, 4}, -2, 2);
    const Tensor w0 = weights_for({3, 4}), w1 = weights_for({2, 4}), w2 = weights_for({2, 3});
    check("sum", [=] { return scale(sum(a), 0.7); }, {{"a", a}});
    check("mean", [=] { return scale(mean(a), 0.7); }, {{"a", a}});
    check("sum_axis0", [=] { return weighted_sum(sum(a, 0), w0); }, {{"a", a}});
    check("sum_axis1", [=] { return weighted_sum(sum(a, 1), w1); }, {{"a", a}});
    check("mean_axis2", [=] { return weighted_sum(mean(a, 2), w2); }, {{"a", a}});
  }
  {
    Tensor x = random_leaf(rng, {2, 16}, -2, 2), k = random_leaf(rng, {3, 2, 4}, -2, 2);
    Tensor bias = random_leaf(rng, {3}, -2, 2);
    const Tensor w = weights_for({3, 7});
    check("conv1d", [=] { return weighted_sum(conv1d(x, k, 2), w); }, {{"x", x}, {"kernels", k}});
    Tensor xb = random_leaf(rng, {2, 2, 16}, -2, 2);
    const Tensor wb = weights_for({2, 3, 7});
    check("conv1d_batched_bias", [=] { return weighted_sum(conv1d(xb, k, bias, 2), wb); },
        {{"x", xb}, {"kernels", k}, {"bias", bias}});
  }
  {
    Tensor t = random_leaf(rng, {4, 3}, -2, 2);
    const Tensor y = binary_targets(rng, {4, 3});
    check("bce_with_logits_mean", [=] { return bce_with_logits_mean(t, y); }, {{"logits", t}});
  }

  // The three training losses through networks at the configured architecture.
  const std::size_t n = options.batch;
  const ModelBundle model = init_bundle(arch, options.seed);
  for (auto& p : model.parameters()) p.tensor.set_requires_grad(true);
  const Tensor x = random_leaf(rng, {n, arch.signal.lead_count, arch.signal.seq_len}, -2, 2).detach();
  const Tensor m = random_leaf(rng, {n, arch.tabular_dim}, -2, 2).detach();
  const Tensor y = binary_targets(rng, {n, arch.n_diagnoses});
  const Tensor labs = binary_targets(rng, {n, arch.n_labs});
  auto params_of = [&](std::initializer_list<Network> nets) {
    std::vector<NamedParameter> out;
    for (Network net : nets) {
      const auto ps = model.parameters(net);
      out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
  };
  check("barlow_twins_loss",
      [&] {
        const Tensor zx = project(model, encode_signal(model, x), Side::kSignal);
        const Tensor zm = project(model, encode_tabular(model, m), Side::kTabular);
        return barlow_twins(zx, zm).loss;
      },
      params_of({Network::kPhiX, Network::kPhiM, Network::kThetaX, Network::kThetaM}));
  check("diagnosis_bce_loss", [&] { return bce_with_logits(y, classify(model, encode_signal(model, x))); },
      params_of({Network::kPhiX, Network::kPsiY}));
  check("lab_bce_loss", [&] { return bce_with_logits(labs, predict_labs(model, encode_signal(model, x))); },
      params_of({Network::kPhiX, Network::kPsiM}));
  return report;
}

nlohmann::ordered_json to_json(const GradCheckReport& report) {
  nlohmann::ordered_json j;
  j["passed"] = report.passed();
  j["step"] = report.options.step;
  j["tolerance"] = report.options.tolerance;
  j["probes_per_case"] = report.options.probes;
  auto cases = nlohmann::ordered_json::array();
  for (const auto& r : report.results) {
    nlohmann::ordered_json c;
    c["name"] = r.name;
    c["probes"] = r.probes;
    c["max_rel_error"] = r.max_rel_error;
    c["worst_probe"] = r.worst_probe;
    c["passed"] = r.passed;
    cases.push_back(c);
  }
  j["cases"] = cases;
  return j;
}

}  // namespace cardiofuse

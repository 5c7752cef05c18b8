#include "cardiofuse/synthdata.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>

#include "cardiofuse/errors.hpp"
#include "json.hpp"

namespace cardiofuse {

void GeneratorConfig::validate() const {
  if (latent_dim < 1 || lead_count < 1 || seq_len < 1 || routine_dim < 1 || n_diagnoses < 1 || n_labs < 1) {
    throw ConfigError("generator: all dimension counts must be >= 1");
  }
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("generator: split sizes must be >= 1");
  if (!(sigma_x >= 0.0) || !(sigma_m >= 0.0) || !(sigma_p >= 0.0)) {
    throw ConfigError("generator: noise levels must be >= 0");
  }
  if (!(lab_prevalence > 0.0 && lab_prevalence < 1.0)) {
    throw ConfigError("generator: lab_prevalence must lie in (0, 1)");
  }
}

std::string GeneratorConfig::to_json() const {
  nlohmann::ordered_json j;
  j["latent_dim"] = latent_dim;
  j["lead_count"] = lead_count;
  j["seq_len"] = seq_len;
  j["routine_dim"] = routine_dim;
  j["n_diagnoses"] = n_diagnoses;
  j["n_labs"] = n_labs;
  j["sigma_x"] = sigma_x;
  j["sigma_m"] = sigma_m;
  j["sigma_p"] = sigma_p;
  j["lab_prevalence"] = lab_prevalence;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["n_test"] = n_test;
  j["seed"] = seed;
  return j.dump();
}

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
  GeneratorConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.lead_count = j.at("lead_count").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.routine_dim = j.at("routine_dim").get<std::size_t>();
    c.n_diagnoses = j.at("n_diagnoses").get<std::size_t>();
    c.n_labs = j.at("n_labs").get<std::size_t>();
    c.sigma_x = j.at("sigma_x").get<double>();
    c.sigma_m = j.at("sigma_m").get<double>();
    c.sigma_p = j.at("sigma_p").get<double>();
    c.lab_prevalence = j.at("lab_prevalence").get<double>();
    c.n_train = j.at("n_train").get<std::size_t>();
    c.n_val = j.at("n_val").get<std::size_t>();
    c.n_test = j.at("n_test").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

WorldParams WorldParams::draw(const GeneratorConfig& cfg) {
  cfg.validate();
  WorldParams w;
  w.latent_dim = cfg.latent_dim;
  w.lead_count = cfg.lead_count;
  w.seq_len = cfg.seq_len;
  w.routine_dim = cfg.routine_dim;
  w.n_diagnoses = cfg.n_diagnoses;
  w.n_labs = cfg.n_labs;
  w.sigma_x = cfg.sigma_x;
  w.sigma_m = cfg.sigma_m;
  w.sigma_p = cfg.sigma_p;

  const std::size_t f = cfg.latent_dim;
  Rng rng(derive_key(cfg.seed, 0, 0));
  auto fill = [&](std::vector<double>& v, std::size_t n, auto draw) {
    v.resize(n);
    for (double& x : v) x = draw();
  };
  fill(w.amplitude, cfg.lead_count * f, [&] { return rng.uniform(0.5, 1.5); });
  fill(w.frequency, f, [&] { return static_cast<double>(rng.uniform_int(2, 12)); });
  fill(w.phase, cfg.lead_count * f, [&] { return rng.uniform(0.0, 2.0 * std::numbers::pi); });
  fill(w.routine_map, cfg.routine_dim * f, [&] { return rng.normal(); });
  fill(w.lab_map, cfg.n_labs * f, [&] { return rng.normal(); });
  fill(w.diag_weights, cfg.n_diagnoses * f, [&] { return rng.normal(); });
  fill(w.diag_bias, cfg.n_diagnoses, [&] { return rng.normal(); });

  // s_p = A_p[p]·u + σp·ε is Normal(0, |A_p[p]|² + σp²); threshold at its (1-q)-quantile.
  const boost::math::normal_distribution<double> standard;
  const double z = boost::math::quantile(standard, 1.0 - cfg.lab_prevalence);
  w.lab_threshold.resize(cfg.n_labs);
  for (std::size_t p = 0; p < cfg.n_labs; ++p) {
    double var = cfg.sigma_p * cfg.sigma_p;
    for (std::size_t k = 0; k < f; ++k) var += w.lab_map[p * f + k] * w.lab_map[p * f + k];
    w.lab_threshold[p] = std::sqrt(var) * z;
  }
  return w;
}

std::vector<double> WorldParams::templates() const {
  const std::size_t f = latent_dim, c = lead_count, l = seq_len;
  std::vector<double> basis(f * c * l);
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < l; ++t) {
        const double angle = 2.0 * std::numbers::pi * frequency[k] * static_cast<double>(t) / static_cast<double>(l) +
                             phase[ch * f + k];
        basis[(k * c + ch) * l + t] = amplitude[ch * f + k] * std::sin(angle);
      }
  return basis;
}

Encounter generate_encounter_from_latent(const WorldParams& world, const std::vector<double>& templates,
                                         std::span<const double> u, Rng& rng) {
  const std::size_t f = world.latent_dim, c = world.lead_count, l = world.seq_len;
  if (u.size() != f) throw DimensionError("latent vector has " + std::to_string(u.size()) + " entries, expected " + std::to_string(f));
  Encounter e;
  e.x.assign(c * l, 0.0);
  for (std::size_t k = 0; k < f; ++k) {
    const double* tk = templates.data() + k * c * l;
    for (std::size_t i = 0; i < c * l; ++i) e.x[i] += u[k] * tk[i];
  }
  for (double& v : e.x) v += world.sigma_x * rng.normal();

  e.m.resize(world.routine_dim);
  for (std::size_t d = 0; d < world.routine_dim; ++d) {
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) s += world.routine_map[d * f + k] * u[k];
    e.m[d] = s + world.sigma_m * rng.normal();
  }
  e.labs.resize(world.n_labs);
  for (std::size_t p = 0; p < world.n_labs; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) s += world.lab_map[p * f + k] * u[k];
    s += world.sigma_p * rng.normal();
    e.labs[p] = s > world.lab_threshold[p] ? 1.0 : 0.0;
  }
  e.diagnoses.resize(world.n_diagnoses);
  for (std::size_t d = 0; d < world.n_diagnoses; ++d) {
    double s = world.diag_bias[d];
    for (std::size_t k = 0; k < f; ++k) s += world.diag_weights[d * f + k] * u[k];
    e.diagnoses[d] = s > 0.0 ? 1.0 : 0.0;
  }
  return e;
}

Encounter generate_encounter_from_latent(const WorldParams& world, std::span<const double> u, Rng& rng) {
  return generate_encounter_from_latent(world, world.templates(), u, rng);
}

Encounter generate_encounter(const WorldParams& world, Rng& rng) {
  std::vector<double> u(world.latent_dim);
  for (double& v : u) v = rng.normal();
  return generate_encounter_from_latent(world, u, rng);
}

const char* split_name(SplitId id) {
  switch (id) {
    case SplitId::kTrain: return "train";
    case SplitId::kVal: return "val";
    case SplitId::kTest: return "test";
  }
  return "unknown";
}

SplitId parse_split(const std::string& name) {
  if (name == "train") return SplitId::kTrain;
  if (name == "val") return SplitId::kVal;
  if (name == "test") return SplitId::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

Rng record_stream(std::uint64_t seed, SplitId split, std::size_t index) {
  return Rng(derive_key(seed, static_cast<std::uint64_t>(split), index));
}

Encounter Split::encounter(std::size_t index) const {
  if (index >= size()) throw DimensionError("encounter index " + std::to_string(index) + " out of range");
  auto row = [index](const Tensor& t) {
    const std::size_t stride = t.size() / t.dim(0);
    const auto d = t.data();
    return std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(index * stride),
                               d.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
  };
  return Encounter{row(x), row(m), row(labs), row(diagnoses)};
}

Split Split::from_encounters(const std::vector<Encounter>& records, const WorldParams& world) {
  const std::size_t n = records.size();
  std::vector<double> x, m, labs, dx;
  x.reserve(n * world.lead_count * world.seq_len);
  for (const auto& e : records) {
    x.insert(x.end(), e.x.begin(), e.x.end());
    m.insert(m.end(), e.m.begin(), e.m.end());
    labs.insert(labs.end(), e.labs.begin(), e.labs.end());
    dx.insert(dx.end(), e.diagnoses.begin(), e.diagnoses.end());
  }
  return Split{Tensor({n, world.lead_count, world.seq_len}, std::move(x)), Tensor({n, world.routine_dim}, std::move(m)),
               Tensor({n, world.n_labs}, std::move(labs)), Tensor({n, world.n_diagnoses}, std::move(dx))};
}

const Split& Dataset::split(SplitId id) const {
  switch (id) {
    case SplitId::kTrain: return train;
    case SplitId::kVal: return val;
    case SplitId::kTest: return test;
  }
  throw ConfigError("unknown split id");
}

Encounter regenerate_record(const GeneratorConfig& cfg, const WorldParams& world, SplitId split, std::size_t index) {
  Rng rng = record_stream(cfg.seed, split, index);
  return generate_encounter(world, rng);
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset ds{cfg, WorldParams::draw(cfg), {}, {}, {}};
  const auto basis = ds.world.templates();
  auto build = [&](SplitId id, std::size_t n) {
    std::vector<Encounter> records;
    records.reserve(n);
    std::vector<double> u(cfg.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = record_stream(cfg.seed, id, i);
      for (double& v : u) v = rng.normal();
      records.push_back(generate_encounter_from_latent(ds.world, basis, u, rng));
    }
    return Split::from_encounters(records, ds.world);
  };
  ds.train = build(SplitId::kTrain, cfg.n_train);
  ds.val = build(SplitId::kVal, cfg.n_val);
  ds.test = build(SplitId::kTest, cfg.n_test);
  return ds;
}

namespace {

Tensor as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols}, v);
}

std::vector<double> expect(const TensorArchive& a, const std::string& name, const Shape& shape) {
  const Tensor& t = a.at(name);
  if (t.shape() != shape) {
    throw FormatError(FormatErrorKind::kMalformed, 0,
                      "tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " + to_string(shape));
  }
  return {t.data().begin(), t.data().end()};
}

void require_binary(const Tensor& t, const std::string& name) {
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) throw FormatError(FormatErrorKind::kMalformed, 0, "labels '" + name + "' not binary");
  }
}

}  // namespace

TensorArchive dataset_archive(const Dataset& ds) {
  const WorldParams& w = ds.world;
  const std::size_t f = w.latent_dim;
  TensorArchive a;
  a.metadata = ds.config.to_json();
  a.tensors = {
      {"world.amplitude", as_matrix(w.amplitude, w.lead_count, f)},
      {"world.frequency", Tensor::vector(w.frequency)},
      {"world.phase", as_matrix(w.phase, w.lead_count, f)},
      {"world.routine_map", as_matrix(w.routine_map, w.routine_dim, f)},
      {"world.lab_map", as_matrix(w.lab_map, w.n_labs, f)},
      {"world.diag_weights", as_matrix(w.diag_weights, w.n_diagnoses, f)},
      {"world.diag_bias", Tensor::vector(w.diag_bias)},
      {"world.lab_threshold", Tensor::vector(w.lab_threshold)},
  };
  for (SplitId id : {SplitId::kTrain, SplitId::kVal, SplitId::kTest}) {
    const Split& s = ds.split(id);
    const std::string prefix = split_name(id);
    a.tensors.push_back({prefix + ".x", s.x});
    a.tensors.push_back({prefix + ".m", s.m});
    a.tensors.push_back({prefix + ".labs", s.labs});
    a.tensors.push_back({prefix + ".diagnoses", s.diagnoses});
  }
  return a;
}

Dataset dataset_from_archive(const TensorArchive& a) {
  Dataset ds;
  try {
    ds.config = GeneratorConfig::from_json(a.metadata);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kMalformed, 16, e.what());
  }
  const GeneratorConfig& c = ds.config;
  WorldParams& w = ds.world;
  w.latent_dim = c.latent_dim;
  w.lead_count = c.lead_count;
  w.seq_len = c.seq_len;
  w.routine_dim = c.routine_dim;
  w.n_diagnoses = c.n_diagnoses;
  w.n_labs = c.n_labs;
  w.sigma_x = c.sigma_x;
  w.sigma_m = c.sigma_m;
  w.sigma_p = c.sigma_p;
  const std::size_t f = c.latent_dim;
  w.amplitude = expect(a, "world.amplitude", {c.lead_count, f});
  w.frequency = expect(a, "world.frequency", {f});
  w.phase = expect(a, "world.phase", {c.lead_count, f});
  w.routine_map = expect(a, "world.routine_map", {c.routine_dim, f});
  w.lab_map = expect(a, "world.lab_map", {c.n_labs, f});
  w.diag_weights = expect(a, "world.diag_weights", {c.n_diagnoses, f});
  w.diag_bias = expect(a, "world.diag_bias", {c.n_diagnoses});
  w.lab_threshold = expect(a, "world.lab_threshold", {c.n_labs});

  auto load_split = [&](SplitId id, std::size_t n) {
    const std::string prefix = split_name(id);
    Split s{a.at(prefix + ".x"), a.at(prefix + ".m"), a.at(prefix + ".labs"), a.at(prefix + ".diagnoses")};
    expect(a, prefix + ".x", {n, c.lead_count, c.seq_len});
    expect(a, prefix + ".m", {n, c.routine_dim});
    expect(a, prefix + ".labs", {n, c.n_labs});
    expect(a, prefix + ".diagnoses", {n, c.n_diagnoses});
    require_binary(s.labs, prefix + ".labs");
    require_binary(s.diagnoses, prefix + ".diagnoses");
    return s;
  };
  ds.train = load_split(SplitId::kTrain, c.n_train);
  ds.val = load_split(SplitId::kVal, c.n_val);
  ds.test = load_split(SplitId::kTest, c.n_test);
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_file(path, encode_archive(kDatasetMagic, kDatasetVersion, dataset_archive(dataset)));
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return dataset_from_archive(decode_archive(bytes, kDatasetMagic, kDatasetVersion));
}

}  // namespace cardiofuse

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cardiofuse/rng.hpp"
#include "cardiofuse/tensor.hpp"
#include "cardiofuse/tensor_io.hpp"

namespace cardiofuse {

/// Shared latent factors u ~ N(0, I_F) drive every modality of an encounter.
struct GeneratorConfig {
  std::size_t latent_dim = 8;    // F
  std::size_t lead_count = 4;    // C
  std::size_t seq_len = 256;     // L
  std::size_t routine_dim = 12;  // D
  std::size_t n_diagnoses = 4;   // K
  std::size_t n_labs = 6;        // P
  double sigma_x = 0.3;
  double sigma_m = 0.2;
  double sigma_p = 0.2;
  double lab_prevalence = 0.3;  // q
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static GeneratorConfig from_json(const std::string& text);

  bool operator==(const GeneratorConfig&) const = default;
};

/// Per-seed constants of the generative model. Matrices are row-major.
struct WorldParams {
  std::size_t latent_dim = 0, lead_count = 0, seq_len = 0, routine_dim = 0, n_diagnoses = 0, n_labs = 0;
  double sigma_x = 0, sigma_m = 0, sigma_p = 0;
  std::vector<double> amplitude;     // C×F, U(0.5, 1.5)
  std::vector<double> frequency;     // F, integers in 2..12
  std::vector<double> phase;         // C×F, U(0, 2π)
  std::vector<double> routine_map;   // D×F, N(0,1)
  std::vector<double> lab_map;       // P×F, N(0,1)
  std::vector<double> diag_weights;  // K×F, N(0,1)
  std::vector<double> diag_bias;     // K, N(0,1)
  std::vector<double> lab_threshold;  // P, analytic (1-q)-quantile of each lab score

  static WorldParams draw(const GeneratorConfig& cfg);
  /// Template basis T[f][c][t] = A[c][f]·sin(2π ω_f t / L + φ[c][f]), shape F×C×L.
  std::vector<double> templates() const;
};

/// One synthetic patient record.
struct Encounter {
  std::vector<double> x;          // C×L signal
  std::vector<double> m;          // D routine tabular
  std::vector<double> labs;       // P lab abnormalities M*
  std::vector<double> diagnoses;  // K diagnosis labels Y
};

/// Draws u from `rng`, then the encounter's noise, in a fixed order.
Encounter generate_encounter(const WorldParams& world, Rng& rng);
/// As above for a given latent; noise draws still consume `rng` identically.
Encounter generate_encounter_from_latent(const WorldParams& world, std::span<const double> u, Rng& rng);
/// Same, reusing a precomputed `templates()` basis.
Encounter generate_encounter_from_latent(const WorldParams& world, const std::vector<double>& templates,
                                         std::span<const double> u, Rng& rng);

enum class SplitId : std::uint64_t { kTrain = 1, kVal = 2, kTest = 3 };

const char* split_name(SplitId id);
SplitId parse_split(const std::string& name);

/// Stream for record `index` of `split`; any record can be regenerated in isolation.
Rng record_stream(std::uint64_t seed, SplitId split, std::size_t index);

/// A split stored as batch tensors so minibatches can be gathered by row.
struct Split {
  Tensor x;          // N×C×L
  Tensor m;          // N×D
  Tensor labs;       // N×P
  Tensor diagnoses;  // N×K

  std::size_t size() const { return x.dim(0); }
  Encounter encounter(std::size_t index) const;
  static Split from_encounters(const std::vector<Encounter>& records, const WorldParams& world);
};

struct Dataset {
  GeneratorConfig config;
  WorldParams world;
  Split train;
  Split val;
  Split test;

  const Split& split(SplitId id) const;
};

Dataset generate_dataset(const GeneratorConfig& cfg);
Encounter regenerate_record(const GeneratorConfig& cfg, const WorldParams& world, SplitId split, std::size_t index);

inline constexpr Magic kDatasetMagic{'C', 'M', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

TensorArchive dataset_archive(const Dataset& dataset);
Dataset dataset_from_archive(const TensorArchive& archive);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace cardiofuse

#pragma once

#include "selim/models/imputer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace selim::uq {

using data::TimeSeriesSample;
using missing::CorruptedSample;

inline constexpr int kDefaultPasses = 16;

/// Per-cell first and second moments of F stochastic passes.
struct UncertaintyMap {
  Matrix std;   // population standard deviation (divide by F)
  Matrix mean;
  int passes = 0;
};

/// Moments of already computed pass outputs. Cells where every pass agrees
/// get exactly zero spread.
UncertaintyMap summarize_passes(std::span<const Matrix> passes);

/// F stochastic forward passes with seeds seed+1 ... seed+F.
UncertaintyMap mc_sample(const models::ImputerModel& model, const Matrix& x, const Mask& m, int passes,
                         std::uint64_t seed);

/// Seed of the MC passes for the n-th sample of a split.
std::uint64_t sample_seed(std::uint64_t base, std::size_t index);

/// Uncertainty values at synthetically masked cells only.
std::vector<double> collect_uncertainty(std::span<const CorruptedSample> corrupted, std::span<const UncertaintyMap> maps);

/// Corrupts the validation split with the training mechanism, runs MC
/// sampling and returns the flat value set used for calibration.
std::vector<double> collect_validation_uncertainty(const models::ImputerModel& model,
                                                   std::span<const TimeSeriesSample> val,
                                                   const missing::MechanismConfig& mechanism, int passes,
                                                   std::uint64_t seed);

/// Linear interpolation between closest order statistics of sorted values:
/// position h = (n-1) q.
double quantile_sorted(std::span<const double> sorted, double q);

struct ThresholdSet {
  std::vector<double> quantiles;   // 0.1, 0.2, ..., 1.0
  std::vector<double> thresholds;  // t10 ... t100
  std::string model_id;
  std::string mechanism;
  std::string split_hash;

  nlohmann::json to_json() const;
  static ThresholdSet from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ThresholdSet load(const std::filesystem::path& path);
};

/// t_q for q in {0.1, ..., 1.0}; t100 is the maximum. Needs at least 10 values.
ThresholdSet calibrate_thresholds(std::span<const double> values);

struct SelectiveImputation {
  Matrix x_sel;
  Mask m_residual;
  Mask imputed;
};

/// Fills missing cells whose uncertainty is <= t with the MC mean; observed
/// cells pass through untouched.
SelectiveImputation selective_impute(const Matrix& x_obs, const Mask& m_obs, const UncertaintyMap& umap, double t);

struct SelectiveMaeRow {
  double quantile = 0.0;
  double threshold = 0.0;
  double imputed_fraction = 0.0;
  std::size_t imputed_cells = 0;
  std::optional<double> mae;  // undefined when no cell passes
};

/// MAE of the MC mean over synthetically masked cells with U <= t, per threshold.
std::vector<SelectiveMaeRow> selective_mae(std::span<const CorruptedSample> corrupted,
                                           std::span<const UncertaintyMap> maps, const ThresholdSet& thresholds);

std::vector<SelectiveMaeRow> selective_mae(const models::ImputerModel& model, std::span<const TimeSeriesSample> split,
                                           const missing::MechanismConfig& mechanism, const ThresholdSet& thresholds,
                                           int passes, std::uint64_t seed);

/// MC maps for a batch of corrupted samples, seeded per sample.
std::vector<UncertaintyMap> mc_sample_all(const models::ImputerModel& model, std::span<const CorruptedSample> corrupted,
                                          int passes, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace selim::uq

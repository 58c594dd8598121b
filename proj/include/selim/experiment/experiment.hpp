#pragma once

#include "selim/data/split.hpp"
#include "selim/downstream/sweep.hpp"
#include "selim/models/imputer.hpp"
#include "selim/uncertainty.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace selim::experiment {

/// Hyperparameter values searched per (model, dataset, mechanism).
struct Grid {
  std::vector<ad::Schedule> schedulers{ad::Schedule::Cosine, ad::Schedule::None};
  std::vector<double> learning_rates{0.001, 0.005};
  std::vector<int> n_layers{2, 4};
  std::vector<int> d_model{64, 128};
  std::vector<int> d_inner{64, 128};
  std::vector<int> n_heads{4, 8};

  nlohmann::json to_json() const;
  static Grid from_json(const nlohmann::json& j);
};

/// Cross product of the grid applied on top of `base`.
std::vector<models::ModelConfig> enumerate_grid(const Grid& grid, const models::ModelConfig& base);

/// k configurations drawn without replacement, kept in grid order.
std::vector<models::ModelConfig> random_subset(const std::vector<models::ModelConfig>& configs, std::size_t k,
                                               std::uint64_t seed);

struct SweepRun {
  models::ModelConfig config;
  std::optional<double> val_mae;  // absent when training diverged
  int epochs_run = 0;
  std::string error;
};

struct SweepResult {
  models::ModelConfig best;
  double best_val_mae = 0.0;
  std::vector<SweepRun> runs;
};

/// Trains every configuration and keeps the one with the lowest validation
/// MAE. Throws TrainingError when every run diverged.
SweepResult sweep(const data::DatasetSplit& split, const missing::MechanismConfig& mechanism,
                  const std::vector<models::ModelConfig>& configs);

struct ResultRow {
  std::string label;
  std::optional<double> quantile;
  std::optional<double> threshold;
  std::optional<double> imputed_fraction;
  std::optional<double> value;

  bool operator==(const ResultRow&) const = default;
};

/// Rows of one experiment plus free-form metadata. CSV is the source of
/// truth: metadata lines start with '#', then a header and one line per row.
struct ResultTable {
  std::string metric;  // column name of `value`, e.g. "mae" or "auprc"
  std::map<std::string, std::string> metadata;
  std::vector<ResultRow> rows;

  bool operator==(const ResultTable&) const = default;

  std::string to_csv() const;
  static ResultTable from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
  static ResultTable read_csv(const std::filesystem::path& path);

  /// Line plot of value against quantile (rows without both are skipped).
  std::string to_svg(const std::string& title) const;
  void write_svg(const std::filesystem::path& path, const std::string& title) const;

  /// Throws ContractError unless the present quantiles strictly increase.
  void check_quantiles() const;
};

inline constexpr const char* kBaselineLabel = "no-imputation baseline";

ResultTable mae_curve(const models::ImputerModel& model, std::span<const data::TimeSeriesSample> split,
                      const missing::MechanismConfig& mechanism, const uq::ThresholdSet& thresholds, int passes,
                      std::uint64_t seed);

ResultTable to_table(const std::vector<uq::SelectiveMaeRow>& rows);
ResultTable to_table(const std::vector<downstream::AuprcRow>& rows);

ResultTable auprc_curve(const models::ImputerModel& model, const uq::ThresholdSet& thresholds,
                        const data::DatasetSplit& split, const downstream::GbdtConfig& classifier, int passes,
                        std::uint64_t seed);

/// Per-variable mean of the observed training cells.
Vector training_means(std::span<const data::TimeSeriesSample> train, Eigen::Index n_vars);

Matrix mean_impute(const Matrix& x, const Mask& m, const Vector& means);

/// Last observation carried forward; leading gaps take the first later
/// observation; all-missing columns fall back to `fallback`.
Matrix forward_fill(const Matrix& x, const Mask& m, const Vector& fallback);

/// MAE over the synthetic cells of `corrupted` for a prediction per sample.
double synthetic_mae(std::span<const missing::CorruptedSample> corrupted, std::span<const Matrix> predictions);

/// Masked-cell MAE of mean, forward-fill and any trained models on the test
/// split corrupted by `mechanism`.
ResultTable baseline_compare(const data::DatasetSplit& split, const missing::MechanismConfig& mechanism,
                             const std::vector<const models::ImputerModel*>& models);

}  // namespace selim::experiment

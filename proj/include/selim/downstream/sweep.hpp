#pragma once

#include "selim/data/split.hpp"
#include "selim/downstream/features.hpp"
#include "selim/downstream/gbdt.hpp"
#include "selim/uncertainty.hpp"

#include <optional>
#include <span>
#include <vector>

namespace selim::downstream {

struct AuprcRow {
  double quantile = 0.0;             // 0 for the no-imputation row
  std::optional<double> threshold;   // absent for the no-imputation row
  double imputed_fraction = 0.0;     // share of genuine-missing cells filled
  double auprc = 0.0;
  bool baseline = false;
};

/// Feature rows for a split. With `maps` and a threshold, genuine
/// missingness is selectively imputed first; otherwise the raw data is used.
FeatureMatrix build_feature_matrix(std::span<const data::TimeSeriesSample> samples,
                                   std::span<const std::string> variables,
                                   const std::vector<uq::UncertaintyMap>* maps = nullptr,
                                   std::optional<double> threshold = std::nullopt,
                                   std::size_t* imputed_cells = nullptr);

std::vector<int> labels_of(std::span<const data::TimeSeriesSample> samples);

/// MC maps on the uncorrupted samples (genuine missingness only).
std::vector<uq::UncertaintyMap> observed_uncertainty(const models::ImputerModel& model,
                                                     std::span<const data::TimeSeriesSample> samples, int passes,
                                                     std::uint64_t seed);

/// One row with no imputation followed by one row per calibrated threshold.
/// For every row a classifier is trained on `train` and scored on `val`.
std::vector<AuprcRow> threshold_sweep_auprc(std::span<const data::TimeSeriesSample> train,
                                            std::span<const data::TimeSeriesSample> val,
                                            std::span<const std::string> variables,
                                            const std::vector<uq::UncertaintyMap>& train_maps,
                                            const std::vector<uq::UncertaintyMap>& val_maps,
                                            const uq::ThresholdSet& thresholds, const GbdtConfig& classifier);

std::vector<AuprcRow> threshold_sweep_auprc(const models::ImputerModel& model, const uq::ThresholdSet& thresholds,
                                            const data::DatasetSplit& split, const GbdtConfig& classifier, int passes,
                                            std::uint64_t seed);

}  // namespace selim::downstream

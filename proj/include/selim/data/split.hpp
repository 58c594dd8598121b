#pragma once

#include "selim/data/dataset.hpp"

#include <nlohmann/json.hpp>

namespace selim::data {

struct Standardization {
  Vector mean;
  Vector std;
  // age, height, weight; sex is left as-is.
  std::array<double, 3> static_mean{0.0, 0.0, 0.0};
  std::array<double, 3> static_std{1.0, 1.0, 1.0};
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct DatasetSplit {
  std::vector<std::string> variables;
  std::vector<TimeSeriesSample> train;
  std::vector<TimeSeriesSample> val;
  std::vector<TimeSeriesSample> test;
  Standardization standardization;

  std::uint64_t hash() const;
};

struct SplitFractions {
  double train = 0.40;
  double val = 0.10;
};

/// Computes statistics from training observed cells only and applies them to
/// every split. Zero-variance variables get std 1.
Standardization fit_standardization(std::span<const TimeSeriesSample> train, Eigen::Index n_vars);
void apply_standardization(std::vector<TimeSeriesSample>& samples, const Standardization& st);

DatasetSplit split_and_standardize(const Dataset& ds, std::uint64_t seed, SplitFractions fractions = {});

}  // namespace selim::data

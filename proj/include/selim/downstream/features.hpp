#pragma once

#include "selim/data/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace selim::downstream {

/// Per (timestep, variable) feature block, in column order.
inline constexpr int kBlockWidth = 6;
inline constexpr int kStaticColumns = 4;

/// One row per patient: the four statics, then for every hour and variable
/// [value, missing indicator, running min, running max, running mean,
/// running missing count]. Missing entries are NaN.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> names;

  void write_csv(const std::filesystem::path& path) const;
};

std::vector<std::string> feature_names(std::span<const std::string> variables, Eigen::Index hours);

/// Running statistics use only non-missing (observed or imputed) values at
/// hours <= t; the counter counts residual-missing cells at hours <= t.
RowVector build_features(const Matrix& x_sel, const Mask& m_residual, const data::Statics& statics);

}  // namespace selim::downstream

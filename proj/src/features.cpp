#include "selim/downstream/features.hpp"

#include "selim/data/csv_io.hpp"

#include <fstream>

namespace selim::downstream {

std::vector<std::string> feature_names(std::span<const std::string> variables, Eigen::Index hours) {
  std::vector<std::string> names(data::kStaticNames.begin(), data::kStaticNames.end());
  static constexpr std::array<const char*, kBlockWidth> kSuffix = {"value", "missing", "hist_min",
                                                                   "hist_max", "hist_mean", "missing_count"};
  for (Eigen::Index t = 0; t < hours; ++t) {
    for (const auto& v : variables) {
      for (const char* s : kSuffix) names.push_back(v + "_t" + std::to_string(t) + "_" + s);
    }
  }
  return names;
}

RowVector build_features(const Matrix& x_sel, const Mask& m_residual, const data::Statics& statics) {
  require_same_shape(x_sel, m_residual, "build_features");
  const Eigen::Index T = x_sel.rows(), D = x_sel.cols();
  RowVector row(kStaticColumns + T * D * kBlockWidth);
  row(0) = statics.age;
  row(1) = statics.sex;
  row(2) = statics.height;
  row(3) = statics.weight;
  for (Eigen::Index d = 0; d < D; ++d) {
    double lo = 0.0, hi = 0.0, sum = 0.0;
    int seen = 0, missing = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const bool miss = m_residual(t, d);
      if (miss) {
        ++missing;
      } else {
        const double v = x_sel(t, d);
        lo = seen == 0 ? v : std::min(lo, v);
        hi = seen == 0 ? v : std::max(hi, v);
        sum += v;
        ++seen;
      }
      const Eigen::Index c = kStaticColumns + (t * D + d) * kBlockWidth;
      row(c) = miss ? kMissing : x_sel(t, d);
      row(c + 1) = miss ? 1.0 : 0.0;
      row(c + 2) = seen > 0 ? lo : kMissing;
      row(c + 3) = seen > 0 ? hi : kMissing;
      row(c + 4) = seen > 0 ? sum / seen : kMissing;
      row(c + 5) = missing;
    }
  }
  return row;
}

void FeatureMatrix::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (std::size_t k = 0; k < names.size(); ++k) os << (k ? "," : "") << names[k];
  os << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) os << ',';
      if (!std::isnan(values(r, c))) os << data::format_double(values(r, c));
    }
    os << '\n';
  }
}

}  // namespace selim::downstream

#include "selim/downstream/sweep.hpp"

#include "selim/random.hpp"

namespace selim::downstream {

FeatureMatrix build_feature_matrix(std::span<const data::TimeSeriesSample> samples,
                                   std::span<const std::string> variables,
                                   const std::vector<uq::UncertaintyMap>* maps, std::optional<double> threshold,
                                   std::size_t* imputed_cells) {
  if (samples.empty()) throw DataError("build_feature_matrix: no samples");
  if (maps && maps->size() != samples.size()) throw DimensionError("build_feature_matrix: one map per sample required");
  const Eigen::Index T = samples.front().hours();
  FeatureMatrix fm;
  fm.names = feature_names(variables, T);
  fm.values.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(fm.names.size()));
  std::size_t filled = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.hours() != T || s.variables() != static_cast<Eigen::Index>(variables.size())) {
      throw DimensionError("build_feature_matrix: sample " + s.patient_id + " has shape " + shape_str(s.hours(), s.variables()));
    }
    if (maps && threshold) {
      const auto sel = uq::selective_impute(s.values, s.missing, (*maps)[i], *threshold);
      filled += static_cast<std::size_t>(sel.imputed.count());
      fm.values.row(static_cast<Eigen::Index>(i)) = build_features(sel.x_sel, sel.m_residual, s.statics);
    } else {
      fm.values.row(static_cast<Eigen::Index>(i)) = build_features(s.values, s.missing, s.statics);
    }
  }
  if (imputed_cells) *imputed_cells = filled;
  return fm;
}

std::vector<int> labels_of(std::span<const data::TimeSeriesSample> samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

std::vector<uq::UncertaintyMap> observed_uncertainty(const models::ImputerModel& model,
                                                     std::span<const data::TimeSeriesSample> samples, int passes,
                                                     std::uint64_t seed) {
  std::vector<uq::UncertaintyMap> maps;
  maps.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    maps.push_back(uq::mc_sample(model, samples[i].values, samples[i].missing, passes, uq::sample_seed(seed, i)));
  }
  return maps;
}

namespace {

std::size_t genuine_missing(std::span<const data::TimeSeriesSample> samples) {
  std::size_t n = 0;
  for (const auto& s : samples) n += static_cast<std::size_t>(s.missing.count());
  return n;
}

double run_classifier(const FeatureMatrix& train, std::span<const int> y_train, const FeatureMatrix& val,
                      std::span<const int> y_val, const GbdtConfig& config) {
  const auto model = gbdt_train(train.values, y_train, config);
  const Vector p = model.predict_proba(val.values);
  return auprc(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), y_val);
}

}  // namespace

std::vector<AuprcRow> threshold_sweep_auprc(std::span<const data::TimeSeriesSample> train,
                                            std::span<const data::TimeSeriesSample> val,
                                            std::span<const std::string> variables,
                                            const std::vector<uq::UncertaintyMap>& train_maps,
                                            const std::vector<uq::UncertaintyMap>& val_maps,
                                            const uq::ThresholdSet& thresholds, const GbdtConfig& classifier) {
  if (thresholds.thresholds.size() != thresholds.quantiles.size()) {
    throw ConfigError("threshold set has mismatched quantiles and thresholds");
  }
  const auto y_train = labels_of(train);
  const auto y_val = labels_of(val);
  const double total_missing = static_cast<double>(genuine_missing(train) + genuine_missing(val));

  std::vector<AuprcRow> rows;
  AuprcRow base;
  base.baseline = true;
  base.auprc = run_classifier(build_feature_matrix(train, variables), y_train, build_feature_matrix(val, variables),
                              y_val, classifier);
  rows.push_back(base);

  for (std::size_t k = 0; k < thresholds.thresholds.size(); ++k) {
    const double t = thresholds.thresholds[k];
    std::size_t filled_train = 0, filled_val = 0;
    const auto f_train = build_feature_matrix(train, variables, &train_maps, t, &filled_train);
    const auto f_val = build_feature_matrix(val, variables, &val_maps, t, &filled_val);
    AuprcRow row;
    row.quantile = thresholds.quantiles[k];
    row.threshold = t;
    row.imputed_fraction =
        total_missing > 0 ? static_cast<double>(filled_train + filled_val) / total_missing : 0.0;
    row.auprc = run_classifier(f_train, y_train, f_val, y_val, classifier);
    rows.push_back(row);
  }
  return rows;
}

std::vector<AuprcRow> threshold_sweep_auprc(const models::ImputerModel& model, const uq::ThresholdSet& thresholds,
                                            const data::DatasetSplit& split, const GbdtConfig& classifier, int passes,
                                            std::uint64_t seed) {
  const auto train_maps = observed_uncertainty(model, split.train, passes, mix_seed(seed, 0xD5, 0));
  const auto val_maps = observed_uncertainty(model, split.val, passes, mix_seed(seed, 0xD5, 1));
  return threshold_sweep_auprc(split.train, split.val, split.variables, train_maps, val_maps, thresholds, classifier);
}

}  // namespace selim::downstream

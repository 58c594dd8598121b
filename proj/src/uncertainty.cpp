#include "selim/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace selim::uq {

UncertaintyMap summarize_passes(std::span<const Matrix> passes) {
  if (passes.size() < 2) throw ConfigError("MC sampling needs at least 2 passes, got " + std::to_string(passes.size()));
  const auto& first = passes.front();
  for (const auto& p : passes) require_same_shape(first, p, "summarize_passes");
  const double f = static_cast<double>(passes.size());
  UncertaintyMap u;
  u.passes = static_cast<int>(passes.size());
  u.mean = Matrix::Zero(first.rows(), first.cols());
  for (const auto& p : passes) u.mean += p;
  u.mean /= f;
  u.std = Matrix::Zero(first.rows(), first.cols());
  for (Eigen::Index i = 0; i < first.size(); ++i) {
    const double v0 = first.data()[i];
    bool agree = true;
    double ss = 0.0;
    for (const auto& p : passes) {
      const double v = p.data()[i];
      agree = agree && v == v0;
      ss += (v - u.mean.data()[i]) * (v - u.mean.data()[i]);
    }
    if (agree) {
      u.mean.data()[i] = v0;
      u.std.data()[i] = 0.0;
    } else {
      u.std.data()[i] = std::sqrt(ss / f);
    }
  }
  return u;
}

UncertaintyMap mc_sample(const models::ImputerModel& model, const Matrix& x, const Mask& m, int passes,
                         std::uint64_t seed) {
  if (passes < 2) throw ConfigError("MC sampling needs at least 2 passes, got " + std::to_string(passes));
  std::vector<Matrix> outs;
  outs.reserve(static_cast<std::size_t>(passes));
  for (int f = 1; f <= passes; ++f) {
    outs.push_back(model.predict(x, m, ad::DropoutMode::EvalStochastic, seed + static_cast<std::uint64_t>(f)));
  }
  return summarize_passes(outs);
}

std::uint64_t sample_seed(std::uint64_t base, std::size_t index) { return mix_seed(base, 0x3C, index); }

std::vector<UncertaintyMap> mc_sample_all(const models::ImputerModel& model, std::span<const CorruptedSample> corrupted,
                                          int passes, std::uint64_t seed) {
  std::vector<UncertaintyMap> maps;
  maps.reserve(corrupted.size());
  for (std::size_t i = 0; i < corrupted.size(); ++i) {
    maps.push_back(mc_sample(model, corrupted[i].x_cor, corrupted[i].m_cor, passes, sample_seed(seed, i)));
  }
  return maps;
}

std::vector<double> collect_uncertainty(std::span<const CorruptedSample> corrupted, std::span<const UncertaintyMap> maps) {
  if (corrupted.size() != maps.size()) throw ContractError("collect_uncertainty: sample/map count mismatch");
  std::vector<double> values;
  for (std::size_t k = 0; k < corrupted.size(); ++k) {
    require_same_shape(corrupted[k].synthetic, maps[k].std, "collect_uncertainty");
    for (Eigen::Index i = 0; i < corrupted[k].synthetic.size(); ++i) {
      if (corrupted[k].synthetic.data()[i]) values.push_back(maps[k].std.data()[i]);
    }
  }
  return values;
}

std::vector<double> collect_validation_uncertainty(const models::ImputerModel& model,
                                                   std::span<const TimeSeriesSample> val,
                                                   const missing::MechanismConfig& mechanism, int passes,
                                                   std::uint64_t seed) {
  const auto corrupted = models::corrupt_split(val, mechanism, 0xCA1);
  const auto maps = mc_sample_all(model, corrupted, passes, seed);
  auto values = collect_uncertainty(corrupted, maps);
  if (values.empty()) throw CalibrationError("validation split produced no synthetically masked cells");
  return values;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw CalibrationError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must be in [0,1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

nlohmann::json ThresholdSet::to_json() const {
  return {{"quantiles", quantiles},
          {"thresholds", thresholds},
          {"model_id", model_id},
          {"mechanism", mechanism},
          {"split_hash", split_hash}};
}

ThresholdSet ThresholdSet::from_json(const nlohmann::json& j) {
  ThresholdSet t;
  t.quantiles = j.at("quantiles").get<std::vector<double>>();
  t.thresholds = j.at("thresholds").get<std::vector<double>>();
  t.model_id = j.value("model_id", "");
  t.mechanism = j.value("mechanism", "");
  t.split_hash = j.value("split_hash", "");
  if (t.quantiles.size() != t.thresholds.size()) throw DataError("threshold file: quantile/threshold length mismatch");
  return t;
}

void ThresholdSet::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

ThresholdSet ThresholdSet::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  return from_json(nlohmann::json::parse(is));
}

ThresholdSet calibrate_thresholds(std::span<const double> values) {
  if (values.size() < 10) {
    throw CalibrationError("calibration needs at least 10 uncertainty values, got " + std::to_string(values.size()));
  }
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v) || v < 0.0) throw CalibrationError("uncertainty values must be finite and non-negative");
  }
  std::sort(sorted.begin(), sorted.end());
  ThresholdSet t;
  for (int k = 1; k <= 10; ++k) {
    const double q = static_cast<double>(k) / 10.0;
    t.quantiles.push_back(q);
    t.thresholds.push_back(k == 10 ? sorted.back() : quantile_sorted(sorted, q));
  }
  return t;
}

SelectiveImputation selective_impute(const Matrix& x_obs, const Mask& m_obs, const UncertaintyMap& umap, double t) {
  require_same_shape(x_obs, m_obs, "selective_impute");
  require_same_shape(x_obs, umap.std, "selective_impute");
  require_same_shape(x_obs, umap.mean, "selective_impute");
  SelectiveImputation out;
  out.x_sel = x_obs;
  out.m_residual = m_obs;
  out.imputed = Mask::Constant(m_obs.rows(), m_obs.cols(), false);
  for (Eigen::Index i = 0; i < x_obs.size(); ++i) {
    if (m_obs.data()[i] && umap.std.data()[i] <= t) {
      out.x_sel.data()[i] = umap.mean.data()[i];
      out.m_residual.data()[i] = false;
      out.imputed.data()[i] = true;
    }
  }
  return out;
}

std::vector<SelectiveMaeRow> selective_mae(std::span<const CorruptedSample> corrupted,
                                           std::span<const UncertaintyMap> maps, const ThresholdSet& thresholds) {
  if (corrupted.size() != maps.size()) throw ContractError("selective_mae: sample/map count mismatch");
  std::size_t total = 0;
  for (const auto& c : corrupted) total += static_cast<std::size_t>(c.synthetic.count());
  std::vector<SelectiveMaeRow> rows;
  for (std::size_t k = 0; k < thresholds.thresholds.size(); ++k) {
    const double t = thresholds.thresholds[k];
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < corrupted.size(); ++s) {
      const auto& c = corrupted[s];
      for (Eigen::Index i = 0; i < c.synthetic.size(); ++i) {
        if (c.synthetic.data()[i] && maps[s].std.data()[i] <= t) {
          err += std::abs(maps[s].mean.data()[i] - c.target.data()[i]);
          ++n;
        }
      }
    }
    SelectiveMaeRow row;
    row.quantile = thresholds.quantiles[k];
    row.threshold = t;
    row.imputed_cells = n;
    row.imputed_fraction = total > 0 ? static_cast<double>(n) / static_cast<double>(total) : 0.0;
    if (n > 0) row.mae = err / static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

std::vector<SelectiveMaeRow> selective_mae(const models::ImputerModel& model, std::span<const TimeSeriesSample> split,
                                           const missing::MechanismConfig& mechanism, const ThresholdSet& thresholds,
                                           int passes, std::uint64_t seed) {
  const auto corrupted = models::corrupt_split(split, mechanism, 0x5E1);
  const auto maps = mc_sample_all(model, corrupted, passes, seed);
  return selective_mae(corrupted, maps, thresholds);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman: need two equal-length series of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace selim::uq

#include "selim/missingness.hpp"

#include <cmath>

namespace selim::missing {

Mechanism parse_mechanism(const std::string& s) {
  if (s == "MCAR" || s == "mcar") return Mechanism::MCAR;
  if (s == "MAR" || s == "mar") return Mechanism::MAR;
  if (s == "MNAR" || s == "mnar") return Mechanism::MNAR;
  if (s == "BO" || s == "bo") return Mechanism::BO;
  if (s == "blockBO" || s == "blockbo" || s == "BlockBO") return Mechanism::BlockBO;
  throw ConfigError("unknown missingness mechanism '" + s + "'");
}

nlohmann::json to_json(const MechanismConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)},
                      {"target_rate", c.target_rate},
                      {"seed", c.seed},
                      {"observed_fraction", c.observed_fraction},
                      {"weight_scale", c.weight_scale},
                      {"block_min", c.block_min},
                      {"block_max", c.block_max},
                      {"zero_weights", c.zero_weights}};
  if (c.predictor_mcar_fraction) j["predictor_mcar_fraction"] = *c.predictor_mcar_fraction;
  return j;
}

MechanismConfig mechanism_from_json(const nlohmann::json& j, MechanismConfig c) {
  if (!j.is_object()) throw ConfigError("mechanism section must be an object");
  if (j.contains("kind")) c.kind = parse_mechanism(j.at("kind").get<std::string>());
  c.target_rate = j.value("target_rate", c.target_rate);
  c.seed = j.value("seed", c.seed);
  c.observed_fraction = j.value("observed_fraction", c.observed_fraction);
  c.weight_scale = j.value("weight_scale", c.weight_scale);
  c.block_min = j.value("block_min", c.block_min);
  c.block_max = j.value("block_max", c.block_max);
  c.zero_weights = j.value("zero_weights", c.zero_weights);
  if (j.contains("predictor_mcar_fraction")) c.predictor_mcar_fraction = j.at("predictor_mcar_fraction").get<double>();
  return c;
}

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::MCAR: return "MCAR";
    case Mechanism::MAR: return "MAR";
    case Mechanism::MNAR: return "MNAR";
    case Mechanism::BO: return "BO";
    case Mechanism::BlockBO: return "blockBO";
  }
  return "?";
}

namespace {

int effective_block_max(const MechanismConfig& c, Eigen::Index hours) {
  return c.block_max > 0 ? c.block_max : std::max(2, static_cast<int>(hours / 4));
}

std::size_t rounded_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void validate(const MechanismConfig& c, Eigen::Index hours) {
  if (!(c.target_rate >= 0.0 && c.target_rate <= 1.0)) throw ConfigError("target_rate must be in [0,1]");
  if (!(c.observed_fraction > 0.0 && c.observed_fraction < 1.0)) throw ConfigError("observed_fraction must be in (0,1)");
  if (c.predictor_mcar_fraction && !(*c.predictor_mcar_fraction >= 0.0 && *c.predictor_mcar_fraction < 1.0)) {
    throw ConfigError("predictor_mcar_fraction must be in [0,1)");
  }
  const int bmax = effective_block_max(c, hours);
  if (c.kind == Mechanism::BlockBO && (c.block_min < 1 || bmax < c.block_min || bmax > hours)) {
    throw ConfigError("blockBO length range [" + std::to_string(c.block_min) + "," + std::to_string(bmax) +
                      "] not within [1," + std::to_string(hours) + "]");
  }
}

CorruptedSample apply_synthetic_mask(const TimeSeriesSample& sample, const Mask& synthetic) {
  require_same_shape(sample.missing, synthetic, "apply_synthetic_mask");
  if ((synthetic && sample.missing).any()) {
    throw MechanismError("synthetic mask overlaps genuine missingness for patient " + sample.patient_id);
  }
  CorruptedSample c;
  c.target = sample.values;
  c.m_obs = sample.missing;
  c.synthetic = synthetic;
  c.m_cor = sample.missing || synthetic;
  c.x_cor = sample.values;
  for (Eigen::Index i = 0; i < c.x_cor.size(); ++i) {
    if (c.m_cor.data()[i]) c.x_cor.data()[i] = kMissing;
  }
  return c;
}

Mask gen_mcar(const TimeSeriesSample& sample, double rate, Rng& rng) {
  std::vector<Eigen::Index> eligible;
  for (Eigen::Index i = 0; i < sample.missing.size(); ++i) {
    if (!sample.missing.data()[i]) eligible.push_back(i);
  }
  Mask s = Mask::Constant(sample.missing.rows(), sample.missing.cols(), false);
  for (auto k : rng.sample_without_replacement(eligible.size(), rounded_count(rate, eligible.size()))) {
    s.data()[eligible[k]] = true;
  }
  return s;
}

Mask gen_bo(const TimeSeriesSample& sample, double rate, Rng& rng) {
  const auto T = static_cast<std::size_t>(sample.hours());
  Mask s = Mask::Constant(sample.missing.rows(), sample.missing.cols(), false);
  for (auto t : rng.sample_without_replacement(T, rounded_count(rate, T))) {
    s.row(static_cast<Eigen::Index>(t)).setConstant(true);
  }
  return s && !sample.missing;
}

Mask gen_blockbo(const TimeSeriesSample& sample, double rate, int block_min, int block_max, Rng& rng) {
  const long T = static_cast<long>(sample.hours());
  const long need = static_cast<long>(rounded_count(rate, static_cast<std::size_t>(T)));
  std::vector<bool> used;

  // A block [s, s+len) is placeable if it and its immediate neighbours are free.
  auto valid_starts = [&](long len) {
    std::vector<long> starts;
    for (long s = 0; s + len <= T; ++s) {
      bool ok = true;
      for (long t = std::max(0L, s - 1); t < std::min(T, s + len + 1) && ok; ++t) ok = !used[static_cast<std::size_t>(t)];
      if (ok) starts.push_back(s);
    }
    return starts;
  };

  // Lengths are drawn so the remainder is never a positive count below
  // block_min; only a total below block_min yields a single short block.
  auto try_place = [&] {
    used.assign(static_cast<std::size_t>(T), false);
    long count = 0;
    while (count < need) {
      const long left = need - count;
      std::vector<long> lengths;
      if (left < block_min) {
        lengths.push_back(left);
      } else {
        for (long len = block_min; len <= std::min<long>(block_max, left); ++len) {
          if (left - len == 0 || left - len >= block_min) lengths.push_back(len);
        }
      }
      std::vector<std::pair<long, long>> options;  // (length, start)
      for (long len : lengths) {
        for (long s : valid_starts(len)) options.emplace_back(len, s);
      }
      if (options.empty()) return count;
      // Uniform length first, then a uniform start among its placements.
      std::vector<long> feasible;
      for (const auto& o : options) {
        if (feasible.empty() || feasible.back() != o.first) feasible.push_back(o.first);
      }
      const long len = feasible[rng.below(feasible.size())];
      std::vector<long> starts;
      for (const auto& o : options) {
        if (o.first == len) starts.push_back(o.second);
      }
      const long s = starts[rng.below(starts.size())];
      for (long t = s; t < s + len; ++t) used[static_cast<std::size_t>(t)] = true;
      count += len;
    }
    return count;
  };

  long placed = 0;
  for (int attempt = 0; attempt < 100 && (placed = try_place()) < need; ++attempt) {
  }
  if (placed < need) {
    throw MechanismError("blockBO: cannot place another non-overlapping block for patient " + sample.patient_id +
                         " (" + std::to_string(placed) + " of " + std::to_string(need) + " timesteps placed)");
  }

  Mask m = Mask::Constant(sample.missing.rows(), sample.missing.cols(), false);
  for (long t = 0; t < T; ++t) {
    if (used[static_cast<std::size_t>(t)]) m.row(t).setConstant(true);
  }
  return m && !sample.missing;
}

namespace {

// Standardized predictor values; genuinely missing inputs take the column
// mean, which is 0 after standardization.
Matrix logistic_inputs(const TimeSeriesSample& sample, const LogisticMechanism& model) {
  const Eigen::Index T = sample.hours();
  Matrix inputs(T, static_cast<Eigen::Index>(model.predictors.size()));
  for (Eigen::Index t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < model.predictors.size(); ++k) {
      const Eigen::Index c = model.predictors[k];
      const double x = sample.missing(t, c) ? model.fill_means(c) : sample.values(t, c);
      inputs(t, static_cast<Eigen::Index>(k)) = (x - model.fill_means(c)) / model.input_scales(c);
    }
  }
  return inputs;
}

}  // namespace

Matrix logistic_probabilities(const TimeSeriesSample& sample, const LogisticMechanism& model) {
  Matrix logits = logistic_inputs(sample, model) * model.weights;
  return logits.unaryExpr([&](double z) { return sigmoid(z + model.intercept); });
}

LogisticMechanism fit_logistic(std::span<const TimeSeriesSample> split, const MechanismConfig& config) {
  if (split.empty()) throw ConfigError("logistic mechanism: empty split");
  const Eigen::Index D = split.front().variables();
  if (D < 2) throw ConfigError("logistic mechanism needs at least 2 variables");
  validate(config, split.front().hours());

  LogisticMechanism m;
  Rng rng(mix_seed(config.seed, 0xC01));
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(D));
  for (Eigen::Index d = 0; d < D; ++d) cols[static_cast<std::size_t>(d)] = d;
  rng.shuffle(cols);
  const auto n_pred = std::clamp<Eigen::Index>(std::llround(config.observed_fraction * static_cast<double>(D)), 1, D - 1);
  m.predictors.assign(cols.begin(), cols.begin() + n_pred);
  m.targets.assign(cols.begin() + n_pred, cols.end());
  std::sort(m.predictors.begin(), m.predictors.end());
  std::sort(m.targets.begin(), m.targets.end());

  m.weights.resize(n_pred, static_cast<Eigen::Index>(m.targets.size()));
  for (Eigen::Index i = 0; i < m.weights.size(); ++i) {
    m.weights.data()[i] = config.zero_weights ? 0.0 : config.weight_scale * rng.normal();
  }

  m.fill_means = Vector::Zero(D);
  m.input_scales = Vector::Ones(D);
  for (Eigen::Index d = 0; d < D; ++d) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : split) {
      for (Eigen::Index t = 0; t < s.hours(); ++t) {
        if (!s.missing(t, d)) {
          sum += s.values(t, d);
          sq += s.values(t, d) * s.values(t, d);
          ++n;
        }
      }
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
    m.fill_means(d) = mean;
    m.input_scales(d) = sd > 1e-12 ? sd : 1.0;
  }

  // Eligible logits (without intercept) for every observed target cell.
  std::vector<double> logits;
  double observed_total = 0.0, observed_predictor = 0.0;
  for (const auto& s : split) {
    observed_total += static_cast<double>((!s.missing).count());
    for (auto c : m.predictors) observed_predictor += static_cast<double>((!s.missing.col(c)).count());
    const Eigen::Index T = s.hours();
    const Matrix z = logistic_inputs(s, m) * m.weights;
    for (Eigen::Index t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < m.targets.size(); ++j) {
        if (!s.missing(t, m.targets[j])) logits.push_back(z(t, static_cast<Eigen::Index>(j)));
      }
    }
  }
  if (observed_total == 0.0) throw MechanismError("logistic mechanism: split has no observed cells");

  if (config.target_rate == 0.0) {
    m.intercept = -std::numeric_limits<double>::infinity();
    return m;
  }
  double desired = config.target_rate * observed_total;
  if (config.kind == Mechanism::MNAR) {
    m.predictor_mcar = config.predictor_mcar_fraction.value_or(config.target_rate);
    desired -= m.predictor_mcar * observed_predictor;
  }
  auto expected = [&](double b) {
    double acc = 0.0;
    for (double z : logits) acc += sigmoid(z + b);
    return acc;
  };
  const double lo_rate = expected(-10.0), hi_rate = expected(10.0);
  if (desired < lo_rate || desired > hi_rate) {
    throw ConfigError("logistic mechanism: cannot bracket target rate " + std::to_string(config.target_rate) +
                      " with intercept in [-10,10] (achievable " + std::to_string(lo_rate / observed_total) + " to " +
                      std::to_string(hi_rate / observed_total) + " from the logistic part)");
  }
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected(mid) < desired ? lo : hi) = mid;
  }
  m.intercept = 0.5 * (lo + hi);
  m.expected_rate = (expected(m.intercept) + m.predictor_mcar * observed_predictor) / observed_total;
  if (std::abs(m.expected_rate - config.target_rate) > 1e-3) {
    throw ConfigError("logistic mechanism: intercept calibration missed the target rate");
  }
  return m;
}

Mask gen_mar(const TimeSeriesSample& sample, const LogisticMechanism& model, Rng& rng) {
  const Matrix p = logistic_probabilities(sample, model);
  Mask s = Mask::Constant(sample.missing.rows(), sample.missing.cols(), false);
  for (Eigen::Index t = 0; t < sample.hours(); ++t) {
    for (std::size_t j = 0; j < model.targets.size(); ++j) {
      const Eigen::Index c = model.targets[j];
      const bool draw = rng.bernoulli(p(t, static_cast<Eigen::Index>(j)));
      if (!sample.missing(t, c) && draw) s(t, c) = true;
    }
  }
  return s;
}

Mask gen_mnar(const TimeSeriesSample& sample, const LogisticMechanism& model, Rng& rng) {
  // Target probabilities use the predictor values before they are masked.
  Mask s = gen_mar(sample, model, rng);
  for (Eigen::Index t = 0; t < sample.hours(); ++t) {
    for (auto c : model.predictors) {
      const bool draw = rng.bernoulli(model.predictor_mcar);
      if (!sample.missing(t, c) && draw) s(t, c) = true;
    }
  }
  return s;
}

MissingnessModel MissingnessModel::fit(std::span<const TimeSeriesSample> split, const MechanismConfig& config) {
  if (split.empty()) throw ConfigError("cannot fit a missingness mechanism on an empty split");
  validate(config, split.front().hours());
  MissingnessModel m;
  m.config_ = config;
  if (config.kind == Mechanism::MAR || config.kind == Mechanism::MNAR) m.logistic_ = fit_logistic(split, config);
  return m;
}

Mask MissingnessModel::draw(const TimeSeriesSample& sample, std::uint64_t sample_seed) const {
  if ((!sample.missing).count() == 0) {
    throw MechanismError("patient " + sample.patient_id + " has no observed cell to mask");
  }
  Rng rng(sample_seed);
  switch (config_.kind) {
    case Mechanism::MCAR: return gen_mcar(sample, config_.target_rate, rng);
    case Mechanism::BO: return gen_bo(sample, config_.target_rate, rng);
    case Mechanism::BlockBO:
      return gen_blockbo(sample, config_.target_rate, config_.block_min, effective_block_max(config_, sample.hours()),
                         rng);
    case Mechanism::MAR: return gen_mar(sample, *logistic_, rng);
    case Mechanism::MNAR: return gen_mnar(sample, *logistic_, rng);
  }
  throw ConfigError("unhandled mechanism");
}

CorruptedSample MissingnessModel::corrupt(const TimeSeriesSample& sample, std::uint64_t sample_seed) const {
  return apply_synthetic_mask(sample, draw(sample, sample_seed));
}

CorruptedSample corrupt(const TimeSeriesSample& sample, const MechanismConfig& config) {
  const auto model = MissingnessModel::fit(std::span<const TimeSeriesSample>(&sample, 1), config);
  return model.corrupt(sample, mix_seed(config.seed, 0xC0));
}

double synthetic_rate(std::span<const CorruptedSample> samples) {
  double s = 0.0, e = 0.0;
  for (const auto& c : samples) {
    s += static_cast<double>(c.synthetic.count());
    e += static_cast<double>((!c.m_obs).count());
  }
  return e > 0.0 ? s / e : 0.0;
}

}  // namespace selim::missing

#include "selim/data/synthetic.hpp"

#include "selim/random.hpp"

#include <Eigen/Cholesky>

#include <cstdio>

namespace selim::data {

namespace {

struct VitalProfile {
  double baseline;
  double noise;
  double drift_direction;
};

// Order matches kVitalNames.
constexpr std::array<VitalProfile, 6> kProfiles = {{
    {85.0, 12.0, 1.0},    // heart rate
    {80.0, 9.0, -1.0},    // mean arterial pressure
    {120.0, 14.0, -1.0},  // systolic
    {65.0, 8.0, -0.7},    // diastolic
    {18.0, 4.0, 1.0},     // respiratory rate
    {96.0, 1.8, -1.0},    // SpO2
}};

Matrix correlation_matrix(double rho) {
  const Eigen::Index d = static_cast<Eigen::Index>(kProfiles.size());
  Matrix c = Matrix::Constant(d, d, rho);
  const double bp = std::max(rho, 0.85);
  for (Eigen::Index i = 1; i <= 3; ++i) {
    for (Eigen::Index j = 1; j <= 3; ++j) c(i, j) = bp;
  }
  c.diagonal().setOnes();
  return c;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void validate(const GeneratorConfig& c) {
  if (c.hours < 2) throw ConfigError("generator: hours must be >= 2");
  if (!(c.ar_coefficient > -1.0 && c.ar_coefficient < 1.0)) throw ConfigError("generator: |ar_coefficient| must be < 1");
  if (!(c.cross_correlation >= 0.0 && c.cross_correlation < 1.0)) {
    throw ConfigError("generator: cross_correlation must be in [0,1)");
  }
  if (!(c.prevalence > 0.0 && c.prevalence < 1.0)) throw ConfigError("generator: prevalence must be in (0,1)");
  if (!(c.genuine_mcar_rate >= 0.0 && c.genuine_mcar_rate < 1.0)) {
    throw ConfigError("generator: genuine_mcar_rate must be in [0,1)");
  }
  if (!(c.block_probability >= 0.0 && c.block_probability <= 1.0)) {
    throw ConfigError("generator: block_probability must be in [0,1]");
  }
  if (c.max_blocks < 0 || c.block_min < 1 || c.block_max < c.block_min || c.block_max > c.hours) {
    throw ConfigError("generator: invalid block length range");
  }
  if (c.patient_offset_sd < 0.0) throw ConfigError("generator: patient_offset_sd must be >= 0");
}

Dataset generate_synthetic(std::size_t n_patients, std::uint64_t seed, const GeneratorConfig& config) {
  if (n_patients == 0) throw ConfigError("generator: n_patients must be >= 1");
  validate(config);

  const Eigen::Index T = config.hours;
  const Eigen::Index D = static_cast<Eigen::Index>(kProfiles.size());
  Eigen::LLT<Matrix> llt(correlation_matrix(config.cross_correlation));
  if (llt.info() != Eigen::Success) throw ConfigError("generator: correlation matrix is not positive definite");
  const Matrix L = llt.matrixL();
  const double phi = config.ar_coefficient;
  const double innovation = std::sqrt(1.0 - phi * phi);
  const Eigen::Index tail = std::max<Eigen::Index>(1, T / 4);

  Dataset ds;
  ds.hours = T;
  ds.variables.assign(kVitalNames.begin(), kVitalNames.end());
  ds.samples.resize(n_patients);
  std::vector<double> risk(n_patients);

  for (std::size_t p = 0; p < n_patients; ++p) {
    Rng rng(mix_seed(seed, p, 1));
    auto& s = ds.samples[p];
    char id[32];
    std::snprintf(id, sizeof(id), "p%07zu", p);
    s.patient_id = id;

    const double severity = rng.normal();
    Vector offset(D);
    for (Eigen::Index d = 0; d < D; ++d) offset(d) = config.patient_offset_sd * rng.normal();

    Matrix z(T, D);
    Vector eps(D);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index d = 0; d < D; ++d) eps(d) = rng.normal();
      const Vector shock = L * eps;
      if (t == 0) {
        z.row(0) = shock.transpose();
      } else {
        z.row(t) = phi * z.row(t - 1) + innovation * shock.transpose();
      }
    }

    s.values.resize(T, D);
    double deterioration = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double progress = static_cast<double>(t) / static_cast<double>(T - 1);
      for (Eigen::Index d = 0; d < D; ++d) {
        const auto& vp = kProfiles[static_cast<std::size_t>(d)];
        const double dev = offset(d) + z(t, d) + config.severity_drift * severity * vp.drift_direction * progress;
        s.values(t, d) = vp.baseline + vp.noise * dev;
        if (t >= T - tail) deterioration += vp.drift_direction * dev;
      }
    }
    risk[p] = deterioration / static_cast<double>(tail * D);

    s.missing = Mask::Constant(T, D, false);
    for (Eigen::Index i = 0; i < s.missing.size(); ++i) {
      s.missing.data()[i] = rng.bernoulli(config.genuine_mcar_rate);
    }
    for (int b = 0; b < config.max_blocks; ++b) {
      if (!rng.bernoulli(config.block_probability)) continue;
      const long len = rng.between(config.block_min, config.block_max);
      const long start = rng.between(0, static_cast<long>(T) - len);
      s.missing.middleRows(start, len).setConstant(true);
    }
    if (s.missing.all()) s.missing(0, 0) = false;
    for (Eigen::Index i = 0; i < s.values.size(); ++i) {
      if (s.missing.data()[i]) s.values.data()[i] = kMissing;
    }

    s.statics.age = std::clamp(65.0 + 15.0 * rng.normal(), 18.0, 95.0);
    s.statics.sex = rng.bernoulli(0.55) ? 1.0 : 0.0;
    s.statics.height = 170.0 + 10.0 * rng.normal();
    s.statics.weight = 80.0 + 15.0 * rng.normal();
    s.stay.los_hours = 30.0 + 6.0 + 48.0 * -std::log(1.0 - rng.uniform());
  }

  // Standardize the risk feature across the cohort, then calibrate the
  // intercept so the mean label probability equals the target prevalence.
  double mu = 0.0;
  for (double r : risk) mu += r;
  mu /= static_cast<double>(n_patients);
  double var = 0.0;
  for (double r : risk) var += (r - mu) * (r - mu);
  const double sd = std::sqrt(var / static_cast<double>(n_patients));
  for (double& r : risk) r = sd > 0.0 ? config.label_strength * (r - mu) / sd : 0.0;

  auto mean_prob = [&](double b) {
    double acc = 0.0;
    for (double r : risk) acc += sigmoid(b + r);
    return acc / static_cast<double>(n_patients);
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < config.prevalence ? lo : hi) = mid;
  }
  const double intercept = 0.5 * (lo + hi);

  for (std::size_t p = 0; p < n_patients; ++p) {
    Rng rng(mix_seed(seed, p, 2));
    auto& s = ds.samples[p];
    s.label = rng.bernoulli(sigmoid(intercept + risk[p])) ? 1 : 0;
    const double los = *s.stay.los_hours;
    s.stay.end_hour = los;
    if (s.label == 1) s.stay.death_hour = rng.uniform(30.0, los);
  }
  return ds;
}

}  // namespace selim::data

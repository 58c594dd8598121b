#pragma once

#include "selim/data/dataset.hpp"
#include "selim/random.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>

namespace selim::missing {

using data::TimeSeriesSample;

enum class Mechanism { MCAR, MAR, MNAR, BO, BlockBO };

Mechanism parse_mechanism(const std::string& s);
std::string to_string(Mechanism m);

struct MechanismConfig {
  Mechanism kind = Mechanism::MCAR;
  double target_rate = 0.30;
  std::uint64_t seed = 0;
  // MAR: fraction of columns kept fully observed. MNAR: fraction used as predictors.
  double observed_fraction = 0.5;
  double weight_scale = 1.0;
  // MNAR only; defaults to target_rate.
  std::optional<double> predictor_mcar_fraction;
  // blockBO block length range; block_max = 0 selects max(2, T/4).
  int block_min = 2;
  int block_max = 0;
  // Forces logistic weights to zero (degenerate-case checks).
  bool zero_weights = false;
};

void validate(const MechanismConfig& config, Eigen::Index hours);

nlohmann::json to_json(const MechanismConfig& config);
MechanismConfig mechanism_from_json(const nlohmann::json& j, MechanismConfig defaults = {});

/// Model input plus targets for one corrupted sample. `x_cor` holds NaN at
/// every M_cor cell; `target` keeps the original observed values.
struct CorruptedSample {
  Matrix x_cor;
  Matrix target;
  Mask m_obs;
  Mask m_cor;
  Mask synthetic;  // M_cor - M_obs
};

/// Builds the corrupted view from a synthetic mask. Throws if the mask
/// touches a genuinely missing cell.
CorruptedSample apply_synthetic_mask(const TimeSeriesSample& sample, const Mask& synthetic);

/// Exactly round(rate * E) of the E observed cells, uniformly without replacement.
Mask gen_mcar(const TimeSeriesSample& sample, double rate, Rng& rng);
/// round(rate * T) whole timesteps.
Mask gen_bo(const TimeSeriesSample& sample, double rate, Rng& rng);
/// Non-overlapping contiguous all-variable blocks covering exactly round(rate * T) timesteps,
/// separated by at least one unmasked timestep.
Mask gen_blockbo(const TimeSeriesSample& sample, double rate, int block_min, int block_max, Rng& rng);

/// Fitted logistic masking model shared by MAR and MNAR.
struct LogisticMechanism {
  std::vector<Eigen::Index> predictors;  // MAR: fully observed columns
  std::vector<Eigen::Index> targets;
  Matrix weights;   // predictors x targets
  double intercept = 0.0;
  Vector fill_means;    // column means used only as logistic inputs
  Vector input_scales;  // column standard deviations; inputs are z-scored
  double predictor_mcar = 0.0;  // MNAR only
  double expected_rate = 0.0;
};

/// Chooses the column partition and weights from config.seed and bisects the
/// intercept on [-10, 10] so the expected synthetic rate over `split` equals
/// target_rate.
LogisticMechanism fit_logistic(std::span<const TimeSeriesSample> split, const MechanismConfig& config);

/// Per-cell masking probability of the target columns.
Matrix logistic_probabilities(const TimeSeriesSample& sample, const LogisticMechanism& model);

Mask gen_mar(const TimeSeriesSample& sample, const LogisticMechanism& model, Rng& rng);
Mask gen_mnar(const TimeSeriesSample& sample, const LogisticMechanism& model, Rng& rng);

/// A mechanism ready to corrupt samples of one split.
class MissingnessModel {
 public:
  static MissingnessModel fit(std::span<const TimeSeriesSample> split, const MechanismConfig& config);

  Mask draw(const TimeSeriesSample& sample, std::uint64_t sample_seed) const;
  CorruptedSample corrupt(const TimeSeriesSample& sample, std::uint64_t sample_seed) const;

  const MechanismConfig& config() const { return config_; }
  const std::optional<LogisticMechanism>& logistic() const { return logistic_; }

 private:
  MechanismConfig config_;
  std::optional<LogisticMechanism> logistic_;
};

/// Single-sample convenience: MAR/MNAR are fitted on the sample alone.
CorruptedSample corrupt(const TimeSeriesSample& sample, const MechanismConfig& config);

/// |S| / |observed| over a collection of corrupted samples.
double synthetic_rate(std::span<const CorruptedSample> samples);

}  // namespace selim::missing

#pragma once

#include "selim/data/dataset.hpp"

namespace selim::data {

/// Parameters of the EHR-like generator. Vitals follow a cross-correlated
/// AR(1) process around physiologic baselines, with a per-patient severity
/// drift that also drives the mortality label.
struct GeneratorConfig {
  Eigen::Index hours = kDefaultHours;
  double ar_coefficient = 0.8;
  double cross_correlation = 0.6;
  double patient_offset_sd = 0.5;  // in units of each vital's noise scale
  double severity_drift = 1.5;     // drift over the window, noise-scale units
  double prevalence = 0.1;
  double label_strength = 2.5;
  double genuine_mcar_rate = 0.05;
  double block_probability = 0.5;  // chance of each candidate genuine block
  int max_blocks = 2;
  int block_min = 2;
  int block_max = 6;
};

void validate(const GeneratorConfig& config);

Dataset generate_synthetic(std::size_t n_patients, std::uint64_t seed, const GeneratorConfig& config = {});

}  // namespace selim::data

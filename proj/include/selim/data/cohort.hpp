#pragma once

#include "selim/data/dataset.hpp"

#include <nlohmann/json.hpp>

namespace selim::data {

struct CohortFilterConfig {
  bool negative_end_time = true;
  bool min_length_of_stay = true;
  bool early_death = true;
  bool min_measurements = true;
  bool contiguous_missingness = true;
  bool min_age = true;

  double min_los_hours = 30.0;
  double early_death_hours = 30.0;
  int min_measurement_count = 4;
  int max_contiguous_missing_hours = 12;
  double min_age_years = 18.0;

  static CohortFilterConfig none();
};

struct RuleOutcome {
  std::string rule;
  bool applied = true;
  std::size_t removed = 0;
  std::size_t skipped_for_missing_metadata = 0;
  std::string warning;
};

struct ExclusionReport {
  std::size_t input_patients = 0;
  std::size_t retained_patients = 0;
  std::vector<RuleOutcome> rules;

  nlohmann::json to_json() const;
};

/// Longest run of consecutive missing hours for a single variable column.
int longest_missing_run(const Mask& missing, Eigen::Index column);

/// Applies the rules in a fixed order; each patient is attributed to the first
/// rule that excludes it.
Dataset apply_cohort_filters(const Dataset& raw, const CohortFilterConfig& config, ExclusionReport& report);

}  // namespace selim::data

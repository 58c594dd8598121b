#include "selim/data/cohort.hpp"

#include <functional>

namespace selim::data {

CohortFilterConfig CohortFilterConfig::none() {
  CohortFilterConfig c;
  c.negative_end_time = c.min_length_of_stay = c.early_death = false;
  c.min_measurements = c.contiguous_missingness = c.min_age = false;
  return c;
}

nlohmann::json ExclusionReport::to_json() const {
  nlohmann::json j;
  j["input_patients"] = input_patients;
  j["retained_patients"] = retained_patients;
  j["rules"] = nlohmann::json::array();
  for (const auto& r : rules) {
    nlohmann::json jr{{"rule", r.rule},
                      {"applied", r.applied},
                      {"removed", r.removed},
                      {"skipped_for_missing_metadata", r.skipped_for_missing_metadata}};
    if (!r.warning.empty()) jr["warning"] = r.warning;
    j["rules"].push_back(std::move(jr));
  }
  return j;
}

int longest_missing_run(const Mask& missing, Eigen::Index column) {
  int best = 0, run = 0;
  for (Eigen::Index t = 0; t < missing.rows(); ++t) {
    run = missing(t, column) ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

namespace {

// Verdict of a rule for one patient: excluded, kept, or undecidable.
enum class Verdict { Keep, Exclude, Unknown };

struct Rule {
  std::string name;
  bool enabled;
  std::function<Verdict(const TimeSeriesSample&)> check;
};

}  // namespace

Dataset apply_cohort_filters(const Dataset& raw, const CohortFilterConfig& c, ExclusionReport& report) {
  const std::vector<Rule> rules = {
      {"negative_end_time", c.negative_end_time,
       [](const TimeSeriesSample& s) {
         if (!s.stay.end_hour) return Verdict::Unknown;
         return *s.stay.end_hour < 0.0 ? Verdict::Exclude : Verdict::Keep;
       }},
      {"length_of_stay", c.min_length_of_stay,
       [&c](const TimeSeriesSample& s) {
         if (!s.stay.los_hours) return Verdict::Unknown;
         return *s.stay.los_hours < c.min_los_hours ? Verdict::Exclude : Verdict::Keep;
       }},
      {"early_death", c.early_death,
       [&c](const TimeSeriesSample& s) {
         if (s.stay.death_hour) return *s.stay.death_hour < c.early_death_hours ? Verdict::Exclude : Verdict::Keep;
         return s.label == 1 ? Verdict::Unknown : Verdict::Keep;
       }},
      {"min_measurements", c.min_measurements,
       [&c](const TimeSeriesSample& s) {
         return (!s.missing).count() < c.min_measurement_count ? Verdict::Exclude : Verdict::Keep;
       }},
      {"contiguous_missingness", c.contiguous_missingness,
       [&c](const TimeSeriesSample& s) {
         for (Eigen::Index d = 0; d < s.missing.cols(); ++d) {
           if (longest_missing_run(s.missing, d) > c.max_contiguous_missing_hours) return Verdict::Exclude;
         }
         return Verdict::Keep;
       }},
      {"min_age", c.min_age,
       [&c](const TimeSeriesSample& s) { return s.statics.age < c.min_age_years ? Verdict::Exclude : Verdict::Keep; }},
  };

  report = ExclusionReport{};
  report.input_patients = raw.samples.size();
  std::vector<bool> keep(raw.samples.size(), true);
  for (const auto& rule : rules) {
    RuleOutcome outcome;
    outcome.rule = rule.name;
    outcome.applied = rule.enabled;
    if (rule.enabled) {
      std::size_t evaluated = 0;
      for (std::size_t i = 0; i < raw.samples.size(); ++i) {
        if (!keep[i]) continue;
        ++evaluated;
        switch (rule.check(raw.samples[i])) {
          case Verdict::Exclude:
            keep[i] = false;
            ++outcome.removed;
            break;
          case Verdict::Unknown:
            ++outcome.skipped_for_missing_metadata;
            break;
          case Verdict::Keep:
            break;
        }
      }
      if (outcome.skipped_for_missing_metadata > 0) {
        outcome.warning = "metadata missing for " + std::to_string(outcome.skipped_for_missing_metadata) + " of " +
                          std::to_string(evaluated) + " patients; rule skipped for them";
        if (outcome.skipped_for_missing_metadata == evaluated) outcome.applied = false;
      }
    }
    report.rules.push_back(std::move(outcome));
  }

  Dataset out;
  out.hours = raw.hours;
  out.variables = raw.variables;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (keep[i]) out.samples.push_back(raw.samples[i]);
  }
  report.retained_patients = out.samples.size();
  return out;
}

}  // namespace selim::data

#pragma once

#include "selim/core.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace selim::data {

inline const std::array<std::string, 6> kVitalNames = {
    "heart_rate", "mean_arterial_pressure", "systolic_bp", "diastolic_bp", "respiratory_rate", "spo2"};
inline const std::array<std::string, 4> kStaticNames = {"age", "sex", "height", "weight"};

inline constexpr Eigen::Index kDefaultHours = 24;
inline constexpr std::string_view kDatasetMagic = "SELIM-DS-v1";

struct Statics {
  double age = 0.0;
  double sex = 0.0;  // 0/1, never standardized
  double height = 0.0;
  double weight = 0.0;

  bool operator==(const Statics&) const = default;
};

/// Stay-level metadata consumed by the cohort filters. Absent fields disable
/// the corresponding rule with a warning.
struct StayInfo {
  std::optional<double> los_hours;
  std::optional<double> death_hour;
  std::optional<double> end_hour;

  bool operator==(const StayInfo&) const = default;
};

/// One patient window. Missing cells of `values` hold NaN; `missing` is the
/// authoritative mask (1 = missing).
struct TimeSeriesSample {
  std::string patient_id;
  Matrix values;
  Mask missing;
  Statics statics;
  int label = 0;
  StayInfo stay;

  Eigen::Index hours() const { return values.rows(); }
  Eigen::Index variables() const { return values.cols(); }
};

bool same_sample(const TimeSeriesSample& a, const TimeSeriesSample& b);

struct Dataset {
  std::vector<std::string> variables;
  Eigen::Index hours = kDefaultHours;
  std::vector<TimeSeriesSample> samples;
};

bool same_dataset(const Dataset& a, const Dataset& b);

/// Enforces the value/mask alignment: every missing cell holds NaN and every
/// observed cell is finite.
void validate_sample(const TimeSeriesSample& s);

/// FNV-1a over ids, values, masks, statics and labels; stable across runs.
std::uint64_t content_hash(std::span<const TimeSeriesSample> samples);
std::string hash_hex(std::uint64_t h);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace selim::data

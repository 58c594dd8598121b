#pragma once

#include "selim/data/dataset.hpp"

#include <filesystem>

namespace selim::data {

/// Long-format inputs: measurements (patient_id,hour,variable,value), statics
/// (patient_id,age,sex,height,weight[,los_hours,death_hour,end_hour]) and
/// labels (patient_id,label). Patients are ordered as in the statics file.
struct CsvSchema {
  std::filesystem::path measurements;
  std::filesystem::path statics;
  std::filesystem::path labels;
  std::vector<std::string> variables{kVitalNames.begin(), kVitalNames.end()};
  Eigen::Index hours = kDefaultHours;
};

Dataset ingest_csv(const CsvSchema& schema);

/// Writes the three CSV files named in `schema`; only observed cells are emitted.
void export_csv(const Dataset& ds, const CsvSchema& schema);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);
double parse_double(std::string_view s, const std::string& context);

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace selim::data

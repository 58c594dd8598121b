#include "selim/data/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

namespace selim::data {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(context + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

namespace {

struct CsvFile {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line number, fields)
};

CsvFile read_csv(const std::filesystem::path& path, std::size_t min_columns) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  CsvFile f;
  f.path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (f.header.empty()) {
      f.header = std::move(fields);
      if (f.header.size() < min_columns) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected at least " +
                        std::to_string(min_columns) + " columns in header");
      }
      continue;
    }
    if (fields.size() != f.header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(f.header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    f.rows.emplace_back(lineno, std::move(fields));
  }
  if (f.header.empty()) throw DataError(path.string() + ": empty file");
  return f;
}

std::string where(const CsvFile& f, std::size_t lineno) { return f.path.string() + ":" + std::to_string(lineno); }

std::optional<double> optional_field(const CsvFile& f, std::size_t lineno, const std::vector<std::string>& row,
                                     std::size_t col) {
  if (col >= row.size() || row[col].empty()) return std::nullopt;
  return parse_double(row[col], where(f, lineno));
}

}  // namespace

Dataset ingest_csv(const CsvSchema& schema) {
  const Eigen::Index T = schema.hours;
  const Eigen::Index D = static_cast<Eigen::Index>(schema.variables.size());
  if (T <= 0 || D <= 0) throw ConfigError("csv schema: hours and variables must be non-empty");
  std::unordered_map<std::string, Eigen::Index> var_index;
  for (Eigen::Index d = 0; d < D; ++d) var_index[schema.variables[static_cast<std::size_t>(d)]] = d;

  Dataset ds;
  ds.hours = T;
  ds.variables = schema.variables;
  std::unordered_map<std::string, std::size_t> patient_index;

  const CsvFile statics = read_csv(schema.statics, 5);
  for (const auto& [lineno, row] : statics.rows) {
    TimeSeriesSample s;
    s.patient_id = row[0];
    if (s.patient_id.empty()) throw DataError(where(statics, lineno) + ": empty patient_id");
    if (patient_index.count(s.patient_id)) {
      throw DataError(where(statics, lineno) + ": duplicate patient '" + s.patient_id + "'");
    }
    const std::string ctx = where(statics, lineno);
    s.statics.age = parse_double(row[1], ctx);
    s.statics.sex = parse_double(row[2], ctx);
    s.statics.height = parse_double(row[3], ctx);
    s.statics.weight = parse_double(row[4], ctx);
    s.stay.los_hours = optional_field(statics, lineno, row, 5);
    s.stay.death_hour = optional_field(statics, lineno, row, 6);
    s.stay.end_hour = optional_field(statics, lineno, row, 7);
    s.values = Matrix::Constant(T, D, kMissing);
    s.missing = Mask::Constant(T, D, true);
    patient_index[s.patient_id] = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }

  const CsvFile labels = read_csv(schema.labels, 2);
  std::vector<bool> has_label(ds.samples.size(), false);
  for (const auto& [lineno, row] : labels.rows) {
    auto it = patient_index.find(row[0]);
    if (it == patient_index.end()) throw DataError(where(labels, lineno) + ": unknown patient '" + row[0] + "'");
    const double v = parse_double(row[1], where(labels, lineno));
    if (v != 0.0 && v != 1.0) throw DataError(where(labels, lineno) + ": label must be 0 or 1");
    if (has_label[it->second]) throw DataError(where(labels, lineno) + ": duplicate label for '" + row[0] + "'");
    ds.samples[it->second].label = static_cast<int>(v);
    has_label[it->second] = true;
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!has_label[i]) throw DataError(schema.labels.string() + ": no label for patient '" + ds.samples[i].patient_id + "'");
  }

  const CsvFile meas = read_csv(schema.measurements, 4);
  std::set<std::tuple<std::size_t, Eigen::Index, Eigen::Index>> seen;
  for (const auto& [lineno, row] : meas.rows) {
    const std::string ctx = where(meas, lineno);
    auto pit = patient_index.find(row[0]);
    if (pit == patient_index.end()) throw DataError(ctx + ": unknown patient '" + row[0] + "'");
    const double hour_f = parse_double(row[1], ctx);
    const auto hour = static_cast<Eigen::Index>(hour_f);
    if (static_cast<double>(hour) != hour_f || hour < 0 || hour >= T) {
      throw DataError(ctx + ": hour '" + row[1] + "' outside [0," + std::to_string(T) + ")");
    }
    auto vit = var_index.find(row[2]);
    if (vit == var_index.end()) throw DataError(ctx + ": schema error, unknown variable '" + row[2] + "'");
    if (!seen.emplace(pit->second, hour, vit->second).second) {
      throw DataError(ctx + ": duplicate measurement (" + row[0] + "," + row[1] + "," + row[2] + ")");
    }
    if (row[3].empty()) continue;
    const double v = parse_double(row[3], ctx);
    if (!std::isfinite(v)) throw DataError(ctx + ": non-finite value");
    auto& s = ds.samples[pit->second];
    s.values(hour, vit->second) = v;
    s.missing(hour, vit->second) = false;
  }
  for (const auto& s : ds.samples) validate_sample(s);
  return ds;
}

void export_csv(const Dataset& ds, const CsvSchema& schema) {
  std::ofstream ms(schema.measurements), ss(schema.statics), ls(schema.labels);
  if (!ms || !ss || !ls) throw DataError("cannot open CSV outputs for writing");
  ms << "patient_id,hour,variable,value\n";
  ss << "patient_id,age,sex,height,weight,los_hours,death_hour,end_hour\n";
  ls << "patient_id,label\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& s : ds.samples) {
    for (Eigen::Index t = 0; t < s.hours(); ++t) {
      for (Eigen::Index d = 0; d < s.variables(); ++d) {
        if (s.missing(t, d)) continue;
        ms << s.patient_id << ',' << t << ',' << ds.variables[static_cast<std::size_t>(d)] << ','
           << format_double(s.values(t, d)) << '\n';
      }
    }
    ss << s.patient_id << ',' << format_double(s.statics.age) << ',' << format_double(s.statics.sex) << ','
       << format_double(s.statics.height) << ',' << format_double(s.statics.weight) << ',' << opt(s.stay.los_hours)
       << ',' << opt(s.stay.death_hour) << ',' << opt(s.stay.end_hour) << '\n';
    ls << s.patient_id << ',' << s.label << '\n';
  }
}

}  // namespace selim::data

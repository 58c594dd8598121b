#include "selim/data/dataset.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace selim::data {

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(T v) {
    bytes(&v, sizeof(T));
  }
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated dataset cache");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  std::string s(get<std::uint32_t>(is), '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(s.size()))) throw DataError("truncated dataset cache");
  return s;
}

void put_optional(std::ostream& os, const std::optional<double>& v) {
  put<std::uint8_t>(os, v.has_value() ? 1 : 0);
  put<double>(os, v.value_or(0.0));
}

std::optional<double> get_optional(std::istream& is) {
  const auto has = get<std::uint8_t>(is);
  const auto v = get<double>(is);
  if (has) return v;
  return std::nullopt;
}

}  // namespace

bool same_sample(const TimeSeriesSample& a, const TimeSeriesSample& b) {
  if (a.patient_id != b.patient_id || a.label != b.label || !(a.statics == b.statics) || !(a.stay == b.stay)) {
    return false;
  }
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) return false;
  if ((a.missing != b.missing).any()) return false;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    if (a.missing.data()[i]) continue;
    if (std::bit_cast<std::uint64_t>(a.values.data()[i]) != std::bit_cast<std::uint64_t>(b.values.data()[i])) {
      return false;
    }
  }
  return true;
}

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.variables != b.variables || a.hours != b.hours || a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (!same_sample(a.samples[i], b.samples[i])) return false;
  }
  return true;
}

void validate_sample(const TimeSeriesSample& s) {
  require_same_shape(s.values, s.missing, "sample");
  for (Eigen::Index i = 0; i < s.values.size(); ++i) {
    const bool miss = s.missing.data()[i];
    const double v = s.values.data()[i];
    if (miss && !std::isnan(v)) {
      throw DataError("patient " + s.patient_id + ": missing cell holds a stale value");
    }
    if (!miss && !std::isfinite(v)) {
      throw DataError("patient " + s.patient_id + ": observed cell is not finite");
    }
  }
  if (s.label != 0 && s.label != 1) throw DataError("patient " + s.patient_id + ": label must be 0 or 1");
}

std::uint64_t content_hash(std::span<const TimeSeriesSample> samples) {
  Fnv1a f;
  f.value<std::uint64_t>(samples.size());
  for (const auto& s : samples) {
    f.bytes(s.patient_id.data(), s.patient_id.size());
    f.value<std::uint64_t>(static_cast<std::uint64_t>(s.values.rows()));
    f.value<std::uint64_t>(static_cast<std::uint64_t>(s.values.cols()));
    for (Eigen::Index i = 0; i < s.values.size(); ++i) {
      const bool miss = s.missing.data()[i];
      f.value<std::uint8_t>(miss ? 1 : 0);
      if (!miss) f.value<double>(s.values.data()[i]);
    }
    f.value(s.statics.age);
    f.value(s.statics.sex);
    f.value(s.statics.height);
    f.value(s.statics.weight);
    f.value<std::int32_t>(s.label);
  }
  return f.h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << kDatasetMagic << '\n';
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ds.hours));
  put<std::uint64_t>(os, ds.variables.size());
  for (const auto& v : ds.variables) put_string(os, v);
  put<std::uint64_t>(os, ds.samples.size());
  for (const auto& s : ds.samples) {
    put_string(os, s.patient_id);
    os.write(reinterpret_cast<const char*>(s.values.data()),
             static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    for (Eigen::Index i = 0; i < s.missing.size(); ++i) put<std::uint8_t>(os, s.missing.data()[i] ? 1 : 0);
    put(os, s.statics.age);
    put(os, s.statics.sex);
    put(os, s.statics.height);
    put(os, s.statics.weight);
    put<std::int32_t>(os, s.label);
    put_optional(os, s.stay.los_hours);
    put_optional(os, s.stay.death_hour);
    put_optional(os, s.stay.end_hour);
  }
  if (!os) throw DataError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset cache " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != kDatasetMagic) throw DataError("bad dataset header in " + path.string());
  Dataset ds;
  ds.hours = static_cast<Eigen::Index>(get<std::uint64_t>(is));
  const auto n_vars = get<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < n_vars; ++k) ds.variables.push_back(get_string(is));
  const auto n = get<std::uint64_t>(is);
  ds.samples.reserve(n);
  const auto d = static_cast<Eigen::Index>(n_vars);
  for (std::uint64_t k = 0; k < n; ++k) {
    TimeSeriesSample s;
    s.patient_id = get_string(is);
    s.values.resize(ds.hours, d);
    if (!is.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)))) {
      throw DataError("truncated dataset cache");
    }
    s.missing.resize(ds.hours, d);
    for (Eigen::Index i = 0; i < s.missing.size(); ++i) s.missing.data()[i] = get<std::uint8_t>(is) != 0;
    s.statics.age = get<double>(is);
    s.statics.sex = get<double>(is);
    s.statics.height = get<double>(is);
    s.statics.weight = get<double>(is);
    s.label = get<std::int32_t>(is);
    s.stay.los_hours = get_optional(is);
    s.stay.death_hour = get_optional(is);
    s.stay.end_hour = get_optional(is);
    validate_sample(s);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace selim::data

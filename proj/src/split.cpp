#include "selim/data/split.hpp"

#include "selim/random.hpp"

#include <cmath>

namespace selim::data {

nlohmann::json Standardization::to_json() const {
  nlohmann::json j;
  j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
  j["std"] = std::vector<double>(std.data(), std.data() + std.size());
  j["static_mean"] = static_mean;
  j["static_std"] = static_std;
  j["warnings"] = warnings;
  return j;
}

std::uint64_t DatasetSplit::hash() const {
  const std::uint64_t a = content_hash(train), b = content_hash(val), c = content_hash(test);
  return mix_seed(a, b, c);
}

namespace {

double static_value(const Statics& s, int k) { return k == 0 ? s.age : (k == 1 ? s.height : s.weight); }
double& static_ref(Statics& s, int k) { return k == 0 ? s.age : (k == 1 ? s.height : s.weight); }

}  // namespace

Standardization fit_standardization(std::span<const TimeSeriesSample> train, Eigen::Index n_vars) {
  Standardization st;
  st.mean = Vector::Zero(n_vars);
  st.std = Vector::Ones(n_vars);
  for (Eigen::Index d = 0; d < n_vars; ++d) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : train) {
      for (Eigen::Index t = 0; t < s.hours(); ++t) {
        if (!s.missing(t, d)) {
          sum += s.values(t, d);
          ++n;
        }
      }
    }
    if (n == 0) {
      st.warnings.push_back("variable " + std::to_string(d) + " has no observed training cells; using mean 0, std 1");
      continue;
    }
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& s : train) {
      for (Eigen::Index t = 0; t < s.hours(); ++t) {
        if (!s.missing(t, d)) ss += (s.values(t, d) - mu) * (s.values(t, d) - mu);
      }
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    st.mean(d) = mu;
    if (sd > 0.0) {
      st.std(d) = sd;
    } else {
      st.warnings.push_back("variable " + std::to_string(d) + " has zero variance; std clamped to 1");
    }
  }
  for (int k = 0; k < 3; ++k) {
    if (train.empty()) break;
    double sum = 0.0;
    for (const auto& s : train) sum += static_value(s.statics, k);
    const double mu = sum / static_cast<double>(train.size());
    double ss = 0.0;
    for (const auto& s : train) ss += (static_value(s.statics, k) - mu) * (static_value(s.statics, k) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(train.size()));
    st.static_mean[static_cast<std::size_t>(k)] = mu;
    st.static_std[static_cast<std::size_t>(k)] = sd > 0.0 ? sd : 1.0;
    if (!(sd > 0.0)) st.warnings.push_back("static " + std::to_string(k) + " has zero variance; std clamped to 1");
  }
  return st;
}

void apply_standardization(std::vector<TimeSeriesSample>& samples, const Standardization& st) {
  for (auto& s : samples) {
    for (Eigen::Index t = 0; t < s.hours(); ++t) {
      for (Eigen::Index d = 0; d < s.variables(); ++d) {
        if (!s.missing(t, d)) s.values(t, d) = (s.values(t, d) - st.mean(d)) / st.std(d);
      }
    }
    for (int k = 0; k < 3; ++k) {
      double& v = static_ref(s.statics, k);
      v = (v - st.static_mean[static_cast<std::size_t>(k)]) / st.static_std[static_cast<std::size_t>(k)];
    }
  }
}

DatasetSplit split_and_standardize(const Dataset& ds, std::uint64_t seed, SplitFractions fractions) {
  if (fractions.train <= 0.0 || fractions.val < 0.0 || fractions.train + fractions.val > 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
  }
  const std::size_t n = ds.samples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5b1));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n))));

  DatasetSplit split;
  split.variables = ds.variables;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = ds.samples[order[k]];
    if (k < n_train) {
      split.train.push_back(s);
    } else if (k < n_train + n_val) {
      split.val.push_back(s);
    } else {
      split.test.push_back(s);
    }
  }
  split.standardization = fit_standardization(split.train, static_cast<Eigen::Index>(ds.variables.size()));
  apply_standardization(split.train, split.standardization);
  apply_standardization(split.val, split.standardization);
  apply_standardization(split.test, split.standardization);
  return split;
}

}  // namespace selim::data

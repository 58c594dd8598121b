// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include "support/gradcheck.hpp"

#include "selim/experiment/run.hpp"
#include "selim/log.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace selim;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      detail << what << "; ";
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// AC1 -----------------------------------------------------------------------

void ac1(Verdict& v) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_op;
  const auto ops = testing::all_op_cases();
  for (const auto& op : ops) {
    const auto r = testing::check_op(op, 20, 0xAC1);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_op = op.name;
    }
    v.require(r.max_rel_error < 1e-4, op.name + " rel error " + std::to_string(r.max_rel_error));
  }
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, "runtime " + std::to_string(secs) + "s");
  v.detail << ops.size() << " ops x 20 trials, max rel error " << worst << " (" << worst_op << "), " << secs << "s";
}

// AC2 -----------------------------------------------------------------------

std::vector<data::TimeSeriesSample> fully_observed_samples(std::size_t n, std::uint64_t seed) {
  data::GeneratorConfig g;
  g.hours = 24;
  g.genuine_mcar_rate = 0.0;
  g.block_probability = 0.0;
  return data::generate_synthetic(n, seed, g).samples;
}

void ac2(Verdict& v) {
  const auto t0 = Clock::now();
  const auto samples = fully_observed_samples(2000, 0xAC2);
  v.require(samples.front().hours() == 24 && samples.front().variables() == 6, "sample shape is not 24x6");
  for (auto kind : {missing::Mechanism::MCAR, missing::Mechanism::BO, missing::Mechanism::BlockBO,
                    missing::Mechanism::MAR, missing::Mechanism::MNAR}) {
    missing::MechanismConfig cfg;
    cfg.kind = kind;
    cfg.target_rate = 0.30;
    cfg.seed = 0xAC2;
    const auto model = missing::MissingnessModel::fit(samples, cfg);
    std::vector<missing::CorruptedSample> cs;
    cs.reserve(samples.size());
    std::size_t off_rounding = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      cs.push_back(model.corrupt(samples[i], i));
      const auto& c = cs.back();
      const double observed = static_cast<double>((!c.m_obs).count());
      const double per_sample = static_cast<double>(c.synthetic.count()) / observed;
      // Per-sample rounding: whole cells for MCAR, whole timesteps for BO/blockBO.
      const double unit = kind == missing::Mechanism::MCAR ? 1.0 / observed : 1.0 / static_cast<double>(c.m_obs.rows());
      if (std::abs(per_sample - 0.30) > 0.5 * unit + 1e-12) ++off_rounding;
    }
    const double rate = missing::synthetic_rate(cs);
    const auto name = missing::to_string(kind);
    if (kind == missing::Mechanism::MAR || kind == missing::Mechanism::MNAR) {
      v.require(std::abs(rate - 0.30) <= 0.02, name + " rate " + std::to_string(rate));
    } else {
      v.require(off_rounding == 0, name + ": " + std::to_string(off_rounding) + " samples off the rounded rate");
    }
    v.detail << name << "=" << rate << " ";
  }
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, "runtime " + std::to_string(secs) + "s");
  v.detail << "(" << secs << "s)";
}

// AC3 -----------------------------------------------------------------------

data::TimeSeriesSample random_sample(Eigen::Index T, Eigen::Index D, double genuine, Rng& rng) {
  data::TimeSeriesSample s;
  s.values.resize(T, D);
  s.missing.resize(T, D);
  for (Eigen::Index t = 0; t < T; ++t) {
    // Keep one observed cell per timestep so a masked timestep is visible.
    const auto keep = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(D)));
    for (Eigen::Index d = 0; d < D; ++d) {
      s.missing(t, d) = d != keep && rng.bernoulli(genuine);
      s.values(t, d) = s.missing(t, d) ? kMissing : rng.normal();
    }
  }
  return s;
}

// Rows touched by the synthetic mask, each required to cover every observed cell.
std::vector<bool> full_rows(const missing::CorruptedSample& c, bool& partial) {
  std::vector<bool> rows(static_cast<std::size_t>(c.synthetic.rows()), false);
  for (Eigen::Index t = 0; t < c.synthetic.rows(); ++t) {
    if (!c.synthetic.row(t).any()) continue;
    rows[static_cast<std::size_t>(t)] = true;
    for (Eigen::Index d = 0; d < c.synthetic.cols(); ++d) {
      if (!c.m_obs(t, d) && !c.synthetic(t, d)) partial = true;
    }
  }
  return rows;
}

std::string check_trial(int trial, Rng& rng) {
  const missing::Mechanism kinds[] = {missing::Mechanism::MCAR, missing::Mechanism::MAR, missing::Mechanism::MNAR,
                                      missing::Mechanism::BO, missing::Mechanism::BlockBO};
  const auto kind = kinds[trial % 5];
  const auto T = static_cast<Eigen::Index>(rng.between(12, 48));
  const auto D = static_cast<Eigen::Index>(rng.between(2, 8));
  const double genuine = rng.uniform(0.0, 0.3);
  std::vector<data::TimeSeriesSample> split;
  for (int i = 0; i < 12; ++i) split.push_back(random_sample(T, D, genuine, rng));
  missing::MechanismConfig cfg;
  cfg.kind = kind;
  cfg.seed = rng.next_u64();
  cfg.target_rate = rng.uniform(0.05, kind == missing::Mechanism::MAR || kind == missing::Mechanism::MNAR ? 0.25 : 0.4);
  const auto model = missing::MissingnessModel::fit(split, cfg);
  const int block_max = std::max<int>(2, static_cast<int>(T / 4));
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto c = model.corrupt(split[i], rng.next_u64());
    if ((c.synthetic && c.m_obs).any()) return "synthetic overlaps genuine missingness";
    if (!(c.m_cor == (c.m_obs || c.synthetic)).all()) return "M_cor is not M_obs plus the synthetic mask";
    bool partial = false;
    const auto rows = full_rows(c, partial);
    const auto n_rows = std::count(rows.begin(), rows.end(), true);
    const auto expected_rows = std::lround(cfg.target_rate * static_cast<double>(T));
    if (kind == missing::Mechanism::BO) {
      if (partial) return "BO mask is not full-width";
      if (n_rows != expected_rows) return "BO timestep count";
    } else if (kind == missing::Mechanism::BlockBO) {
      if (partial) return "blockBO block is not all-variable";
      if (n_rows != expected_rows) return "blockBO timestep count";
      int short_runs = 0;
      for (std::size_t t = 0; t < rows.size();) {
        if (!rows[t]) {
          ++t;
          continue;
        }
        std::size_t e = t;
        while (e < rows.size() && rows[e]) ++e;
        const auto len = static_cast<int>(e - t);
        if (len > block_max) return "blockBO block length " + std::to_string(len);
        // Only the final block may be truncated below the minimum.
        if (len < cfg.block_min && ++short_runs > 1) return "blockBO has more than one short block";
        t = e;
      }
    } else if (kind == missing::Mechanism::MAR) {
      for (auto col : model.logistic()->predictors) {
        if (c.synthetic.col(col).any()) return "MAR masked an observed-subset column";
      }
    }
  }
  return "";
}

void ac3(Verdict& v) {
  Rng rng(0xAC3);
  int passed = 0;
  std::string first_failure;
  for (int trial = 0; trial < 1000; ++trial) {
    std::string why;
    try {
      why = check_trial(trial, rng);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (why.empty()) {
      ++passed;
    } else if (first_failure.empty()) {
      first_failure = "trial " + std::to_string(trial) + ": " + why;
    }
  }
  v.require(passed == 1000, first_failure);
  v.detail << passed << "/1000 randomized trials";
}

// AC4 -----------------------------------------------------------------------

models::ModelConfig small_model() {
  models::ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.d_inner = 16;
  c.n_heads = 2;
  c.seed = 0xAC4;
  return c;
}

void ac4(Verdict& v) {
  auto cfg = small_model();
  cfg.dropout_rate = 0.0;
  const models::ImputerModel model(cfg, 24, 6);
  data::GeneratorConfig g;
  const auto ds = data::generate_synthetic(20, 0xAC4, g);
  double max_u = 0.0;
  for (const auto& s : ds.samples) max_u = std::max(max_u, uq::mc_sample(model, s.values, s.missing, 16, 7).std.maxCoeff());
  v.require(max_u == 0.0, "U not identically zero without dropout: " + std::to_string(max_u));

  Rng rng(0xAC4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a(5, 4), b(5, 4);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.normal() * 5.0;
      b.data()[i] = rng.normal() * 5.0;
    }
    const std::vector<Matrix> passes = {a, b};
    const auto u = uq::summarize_passes(passes);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double m = (a.data()[i] + b.data()[i]) / 2.0;
      const double closed = std::sqrt(((a.data()[i] - m) * (a.data()[i] - m) + (b.data()[i] - m) * (b.data()[i] - m)) / 2.0);
      worst = std::max(worst, std::abs(u.std.data()[i] - closed));
    }
  }
  v.require(worst <= 1e-12, "F=2 deviation " + std::to_string(worst));
  v.detail << "max U without dropout " << max_u << ", F=2 max deviation " << worst;
}

// AC5 -----------------------------------------------------------------------

double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

void ac5(Verdict& v) {
  std::vector<double> values = {7, 3, 10, 1, 5, 9, 2, 8, 6, 4};
  const auto t = uq::calibrate_thresholds(values);
  std::size_t exact = 0;
  for (int k = 1; k <= 10; ++k) exact += t.thresholds[static_cast<std::size_t>(k - 1)] == oracle_quantile(values, k / 10.0);
  v.require(exact == 10, std::to_string(exact) + "/10 thresholds match the oracle");

  // Nested sets and full imputation on real MC maps with genuine missingness.
  const models::ImputerModel model(small_model(), 24, 6);
  const auto ds = data::generate_synthetic(30, 0xAC5);
  std::vector<uq::UncertaintyMap> maps;
  std::vector<double> us;
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& s = ds.samples[k];
    maps.push_back(uq::mc_sample(model, s.values, s.missing, 8, k));
    for (Eigen::Index i = 0; i < s.missing.size(); ++i) {
      if (s.missing.data()[i]) us.push_back(maps.back().std.data()[i]);
    }
  }
  const auto cal = uq::calibrate_thresholds(us);
  bool nested = true, full = true;
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& s = ds.samples[k];
    Mask prev = Mask::Constant(s.hours(), s.variables(), false);
    for (double th : cal.thresholds) {
      const auto sel = uq::selective_impute(s.values, s.missing, maps[k], th);
      nested = nested && !(prev && !sel.imputed).any();
      prev = sel.imputed;
    }
    Matrix all = s.values;
    for (Eigen::Index i = 0; i < all.size(); ++i) {
      if (s.missing.data()[i]) all.data()[i] = maps[k].mean.data()[i];
    }
    const auto last = uq::selective_impute(s.values, s.missing, maps[k], cal.thresholds.back());
    full = full && std::memcmp(last.x_sel.data(), all.data(), sizeof(double) * static_cast<std::size_t>(all.size())) == 0 &&
           !last.m_residual.any();
  }
  v.require(nested, "imputed sets not nested");
  v.require(full, "t100 differs from full imputation");
  v.detail << exact << "/10 oracle matches, " << us.size() << " genuine-missing cells, nested=" << nested
           << ", t100 bit-exact=" << full;
}

// AC6, AC7, AC9 share one trained SAITS model ------------------------------

experiment::RunConfig main_config() {
  experiment::RunConfig c;
  c.seed = 1;
  c.dataset.n_patients = 2000;
  c.mechanism.kind = missing::Mechanism::MCAR;
  c.mechanism.target_rate = 0.30;
  c.model.arch = models::Arch::Saits;
  c.model.epochs = 30;
  c.model.patience = 10;
  c.uncertainty.passes = 16;
  c.derive_seeds();
  return c;
}

void ac6(Verdict& v, experiment::Pipeline& p) {
  const auto t0 = Clock::now();
  const auto& cfg = p.config();
  const auto table = experiment::mae_curve(p.model(), p.split().test, cfg.mechanism, p.thresholds(),
                                           cfg.uncertainty.passes, cfg.uncertainty_seed());
  std::vector<double> q, mae;
  for (const auto& r : table.rows) {
    if (r.quantile && r.value) {
      q.push_back(*r.quantile);
      mae.push_back(*r.value);
    }
  }
  v.require(q.size() == 10, "curve has " + std::to_string(q.size()) + " defined points");
  if (q.size() < 2) return;
  const double rho = uq::spearman(q, mae);
  v.require(rho >= 0.8, "Spearman " + std::to_string(rho));
  v.require(mae.back() > mae.front(), "MAE(t100) <= MAE(t10)");
  v.detail << "Spearman " << rho << ", MAE(t10)=" << mae.front() << ", MAE(t100)=" << mae.back() << ", "
           << seconds_since(t0) << "s including training";
}

void ac7(Verdict& v, experiment::Pipeline& p) {
  const auto& cfg = p.config();
  const auto table =
      experiment::auprc_curve(p.model(), p.thresholds(), p.split(), cfg.downstream, cfg.uncertainty.passes,
                              cfg.uncertainty_seed());
  v.require(table.rows.size() == 11, "row count " + std::to_string(table.rows.size()));
  if (table.rows.empty()) return;
  const auto labels = downstream::labels_of(p.split().val);
  const double prevalence =
      static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(labels.size());
  double best = -1.0;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const double a = table.rows[k].value.value_or(-1.0);
    v.require(a >= prevalence && a <= 1.0, table.rows[k].label + " AUPRC " + std::to_string(a) + " outside [prevalence, 1]");
    if (k > 0) best = std::max(best, a);
  }
  const double base = table.rows[0].value.value_or(-1.0);
  v.require(table.rows[0].label == experiment::kBaselineLabel, "first row is not the no-imputation baseline");
  v.require(best >= base, "max over thresholds " + std::to_string(best) + " < t0 " + std::to_string(base));
  v.detail << "11 rows, prevalence " << prevalence << ", AUPRC(t0)=" << base << ", max over t10..t100=" << best;
}

// AC8 -----------------------------------------------------------------------

double pr_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> cuts = s;
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double area = 0.0, prev_recall = 0.0;
  for (double c : cuts) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= c) (y[i] ? tp : fp) += 1.0;
    }
    area += (tp / pos - prev_recall) * tp / (tp + fp);
    prev_recall = tp / pos;
  }
  return area;
}

void ac8(Verdict& v) {
  Rng rng(0xAC8);
  std::size_t cases = 0, mismatches = 0;
  double worst = 0.0;
  for (int n = 1; n <= 8; ++n) {
    for (int labeling = 1; labeling < (1 << n); ++labeling) {
      std::vector<int> y(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = (labeling >> i) & 1;
      for (int draw = 0; draw < 3; ++draw) {
        std::vector<double> s(static_cast<std::size_t>(n));
        // Draw 0 has distinct scores; later draws force ties.
        for (auto& x : s) x = draw == 0 ? rng.uniform() : static_cast<double>(rng.between(0, draw + 1));
        const double err = std::abs(downstream::auprc(s, y) - pr_oracle(s, y));
        worst = std::max(worst, err);
        mismatches += err > 1e-12 ? 1 : 0;
        ++cases;
        const double p = static_cast<double>(std::count(y.begin(), y.end(), 1)) / n;
        const double constant = downstream::auprc(std::vector<double>(static_cast<std::size_t>(n), 0.5), y);
        mismatches += std::abs(constant - p) > 1e-12 ? 1 : 0;
      }
    }
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  v.detail << cases << " scored labelings of 1..8 points, max deviation " << worst;
}

// AC9 -----------------------------------------------------------------------

void ac9(Verdict& v, experiment::Pipeline& p) {
  const auto t0 = Clock::now();
  auto tcfg = p.config().model;
  tcfg.arch = models::Arch::Transformer;
  const auto transformer = models::train(tcfg, p.split().train, p.split().val, p.config().mechanism);
  const auto table = experiment::baseline_compare(p.split(), p.config().mechanism, {&transformer, &p.model()});
  double mean_mae = -1.0;
  for (const auto& r : table.rows) {
    if (r.label == "mean") mean_mae = *r.value;
  }
  for (const auto& r : table.rows) {
    v.detail << r.label << "=" << *r.value << " ";
    if (r.label == "transformer" || r.label == "saits") {
      v.require(*r.value < mean_mae, r.label + " does not beat mean imputation");
    }
  }
  v.require(table.rows.size() == 4, "expected mean, forward_fill, transformer, saits rows");
  v.detail << "(" << seconds_since(t0) << "s)";
}

// AC10 ----------------------------------------------------------------------

void ac10(Verdict& v) {
  const auto root = fs::temp_directory_path() / "selim_acceptance_ac10";
  fs::remove_all(root);
  experiment::RunConfig c;
  c.seed = 10;
  c.dataset.n_patients = 200;
  c.model = small_model();
  c.model.epochs = 4;
  c.uncertainty.passes = 4;
  c.output.dir = root / "original";
  c.derive_seeds();
  std::size_t artifacts = 0;
  for (const char* command : {"train", "calibrate", "mae-curve", "auprc-curve"}) {
    const auto outcome = experiment::run_command(command, c);
    artifacts += outcome.manifest_json.at("artifacts").size();
    const auto report = experiment::rerun(outcome.manifest, root / "replay");
    for (const auto& name : report.mismatched) v.require(false, std::string(command) + ": " + name + " differs");
  }
  v.require(artifacts > 0, "no artifacts recorded");
  v.detail << artifacts << " artifacts (checkpoints, thresholds, result tables) replayed from manifests";
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  int failures = 0;
  auto report = [&](const char* id, const std::function<void(Verdict&)>& body) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      body(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s %s  %s [%.1fs]\n", id, v.pass ? "PASS" : "FAIL", v.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  };
  report("AC1", ac1);
  report("AC2", ac2);
  report("AC3", ac3);
  report("AC4", ac4);
  report("AC5", ac5);
  experiment::Pipeline pipeline(main_config());
  report("AC6", [&](Verdict& v) { ac6(v, pipeline); });
  report("AC7", [&](Verdict& v) { ac7(v, pipeline); });
  report("AC8", ac8);
  report("AC9", [&](Verdict& v) { ac9(v, pipeline); });
  report("AC10", ac10);
  return failures == 0 ? 0 : 1;
}

#include "selim/experiment/experiment.hpp"

#include "selim/data/csv_io.hpp"
#include "selim/log.hpp"
#include "selim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace selim::experiment {

nlohmann::json Grid::to_json() const {
  std::vector<std::string> sched;
  for (auto s : schedulers) sched.push_back(ad::to_string(s));
  return {{"scheduler", sched}, {"lr", learning_rates}, {"n_layers", n_layers},
          {"d_model", d_model}, {"d_inner", d_inner},   {"n_heads", n_heads}};
}

Grid Grid::from_json(const nlohmann::json& j) {
  Grid g;
  if (j.contains("scheduler")) {
    g.schedulers.clear();
    for (const auto& s : j.at("scheduler")) g.schedulers.push_back(ad::parse_schedule(s.get<std::string>()));
  }
  if (j.contains("lr")) g.learning_rates = j.at("lr").get<std::vector<double>>();
  if (j.contains("n_layers")) g.n_layers = j.at("n_layers").get<std::vector<int>>();
  if (j.contains("d_model")) g.d_model = j.at("d_model").get<std::vector<int>>();
  if (j.contains("d_inner")) g.d_inner = j.at("d_inner").get<std::vector<int>>();
  if (j.contains("n_heads")) g.n_heads = j.at("n_heads").get<std::vector<int>>();
  return g;
}

std::vector<models::ModelConfig> enumerate_grid(const Grid& grid, const models::ModelConfig& base) {
  std::vector<models::ModelConfig> out;
  for (auto s : grid.schedulers)
    for (double lr : grid.learning_rates)
      for (int layers : grid.n_layers)
        for (int dm : grid.d_model)
          for (int di : grid.d_inner)
            for (int h : grid.n_heads) {
              auto c = base;
              c.scheduler = s;
              c.lr = lr;
              c.n_layers = layers;
              c.d_model = dm;
              c.d_inner = di;
              c.n_heads = h;
              out.push_back(c);
            }
  if (out.empty()) throw ConfigError("hyperparameter grid is empty");
  return out;
}

std::vector<models::ModelConfig> random_subset(const std::vector<models::ModelConfig>& configs, std::size_t k,
                                               std::uint64_t seed) {
  if (k == 0) throw ConfigError("random grid subset size must be >= 1");
  if (k >= configs.size()) return configs;
  Rng rng(mix_seed(seed, 0x6D1D));
  auto idx = rng.sample_without_replacement(configs.size(), k);
  std::sort(idx.begin(), idx.end());
  std::vector<models::ModelConfig> out;
  for (auto i : idx) out.push_back(configs[i]);
  return out;
}

SweepResult sweep(const data::DatasetSplit& split, const missing::MechanismConfig& mechanism,
                  const std::vector<models::ModelConfig>& configs) {
  if (configs.empty()) throw ConfigError("sweep: no configurations");
  SweepResult result;
  bool any = false;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    SweepRun run;
    run.config = configs[i];
    try {
      const auto model = models::train(configs[i], split.train, split.val, mechanism);
      run.val_mae = model.history.best_val_mae;
      run.epochs_run = static_cast<int>(model.history.epochs.size());
      if (!std::isfinite(*run.val_mae)) {
        run.val_mae.reset();
        run.error = "no finite validation MAE";
      }
    } catch (const TrainingError& e) {
      run.error = e.what();
      log_warning("sweep: configuration " + std::to_string(i) + " diverged: " + e.what());
    }
    if (run.val_mae && (!any || *run.val_mae < result.best_val_mae)) {
      any = true;
      result.best = run.config;
      result.best_val_mae = *run.val_mae;
    }
    result.runs.push_back(std::move(run));
  }
  if (!any) throw TrainingError("sweep: all " + std::to_string(configs.size()) + " runs diverged");
  return result;
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? data::format_double(*v) : std::string(); }

std::optional<double> opt_parse(const std::string& s, const std::string& ctx) {
  if (s.empty()) return std::nullopt;
  return data::parse_double(s, ctx);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

}  // namespace

std::string ResultTable::to_csv() const {
  std::ostringstream os;
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DataError("result metadata '" + k + "' cannot be written as CSV");
    }
    os << "# " << k << '=' << v << '\n';
  }
  os << "label,quantile,threshold,imputed_fraction," << metric << '\n';
  for (const auto& r : rows) {
    if (r.label.find_first_of(",\n\"") != std::string::npos) throw DataError("result label '" + r.label + "' is not CSV-safe");
    os << r.label << ',' << opt_str(r.quantile) << ',' << opt_str(r.threshold) << ',' << opt_str(r.imputed_fraction)
       << ',' << opt_str(r.value) << '\n';
  }
  return os.str();
}

ResultTable ResultTable::from_csv(const std::string& text) {
  ResultTable t;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!header && line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("result CSV line " + std::to_string(line_no) + ": bad metadata");
      t.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    const auto cells = data::split_csv_line(line);
    if (cells.size() != 5) {
      throw DataError("result CSV line " + std::to_string(line_no) + ": expected 5 columns, got " +
                      std::to_string(cells.size()));
    }
    if (!header) {
      if (cells[0] != "label" || cells[1] != "quantile" || cells[2] != "threshold" || cells[3] != "imputed_fraction") {
        throw DataError("result CSV line " + std::to_string(line_no) + ": unexpected header");
      }
      t.metric = cells[4];
      header = true;
      continue;
    }
    const std::string ctx = "result CSV line " + std::to_string(line_no);
    t.rows.push_back({cells[0], opt_parse(cells[1], ctx), opt_parse(cells[2], ctx), opt_parse(cells[3], ctx),
                      opt_parse(cells[4], ctx)});
  }
  if (!header) throw DataError("result CSV has no header");
  return t;
}

void ResultTable::write_csv(const std::filesystem::path& path) const { write_text(path, to_csv()); }

ResultTable ResultTable::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_csv(ss.str());
}

std::string ResultTable::to_svg(const std::string& title) const {
  constexpr double W = 480, H = 320, L = 60, R = 20, Tm = 40, B = 50;
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.quantile && r.value) pts.emplace_back(*r.quantile, *r.value);
  }
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (!pts.empty()) {
    x0 = x1 = pts.front().first;
    y0 = y1 = pts.front().second;
    for (auto [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tm - B); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << xml_escape(title) << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">threshold quantile</text>\n"
     << "<text x=\"14\" y=\"" << (Tm + H - B) / 2 << "\" transform=\"rotate(-90 14 " << (Tm + H - B) / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(metric) << "</text>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << py(y0) << "\" text-anchor=\"end\" font-size=\"10\">"
     << data::format_double(y0) << "</text>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << py(y1) << "\" text-anchor=\"end\" font-size=\"10\">"
     << data::format_double(y1) << "</text>\n";
  if (!pts.empty()) {
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) os << (k ? " " : "") << px(pts[k].first) << ',' << py(pts[k].second);
    os << "\"/>\n";
    for (auto [x, y] : pts) os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void ResultTable::write_svg(const std::filesystem::path& path, const std::string& title) const {
  write_text(path, to_svg(title));
}

void ResultTable::check_quantiles() const {
  std::optional<double> prev;
  for (const auto& r : rows) {
    if (!r.quantile) continue;
    if (prev && !(*r.quantile > *prev)) throw ContractError("result table quantiles are not strictly increasing");
    prev = r.quantile;
  }
}

ResultTable to_table(const std::vector<uq::SelectiveMaeRow>& rows) {
  ResultTable t;
  t.metric = "mae";
  for (const auto& r : rows) {
    t.rows.push_back({"t" + std::to_string(static_cast<int>(std::lround(r.quantile * 100))), r.quantile, r.threshold,
                      r.imputed_fraction, r.mae});
  }
  return t;
}

ResultTable to_table(const std::vector<downstream::AuprcRow>& rows) {
  ResultTable t;
  t.metric = "auprc";
  for (const auto& r : rows) {
    ResultRow row;
    row.label = r.baseline ? kBaselineLabel : "t" + std::to_string(static_cast<int>(std::lround(r.quantile * 100)));
    row.quantile = r.quantile;
    row.threshold = r.threshold;
    row.imputed_fraction = r.imputed_fraction;
    row.value = r.auprc;
    t.rows.push_back(row);
  }
  return t;
}

ResultTable mae_curve(const models::ImputerModel& model, std::span<const data::TimeSeriesSample> split,
                      const missing::MechanismConfig& mechanism, const uq::ThresholdSet& thresholds, int passes,
                      std::uint64_t seed) {
  auto t = to_table(uq::selective_mae(model, split, mechanism, thresholds, passes, seed));
  t.metadata["model"] = models::to_string(model.config().arch);
  t.metadata["model_id"] = model.id();
  t.metadata["mechanism"] = missing::to_string(mechanism.kind);
  t.metadata["passes"] = std::to_string(passes);
  t.check_quantiles();
  return t;
}

ResultTable auprc_curve(const models::ImputerModel& model, const uq::ThresholdSet& thresholds,
                        const data::DatasetSplit& split, const downstream::GbdtConfig& classifier, int passes,
                        std::uint64_t seed) {
  auto t = to_table(downstream::threshold_sweep_auprc(model, thresholds, split, classifier, passes, seed));
  t.metadata["model"] = models::to_string(model.config().arch);
  t.metadata["model_id"] = model.id();
  t.metadata["mechanism"] = thresholds.mechanism;
  t.metadata["passes"] = std::to_string(passes);
  t.metadata["split_hash"] = data::hash_hex(split.hash());
  t.check_quantiles();
  return t;
}

Vector training_means(std::span<const data::TimeSeriesSample> train, Eigen::Index n_vars) {
  Vector sum = Vector::Zero(n_vars), count = Vector::Zero(n_vars);
  for (const auto& s : train) {
    for (Eigen::Index t = 0; t < s.hours(); ++t) {
      for (Eigen::Index d = 0; d < n_vars; ++d) {
        if (!s.missing(t, d)) {
          sum(d) += s.values(t, d);
          count(d) += 1.0;
        }
      }
    }
  }
  for (Eigen::Index d = 0; d < n_vars; ++d) sum(d) = count(d) > 0 ? sum(d) / count(d) : 0.0;
  return sum;
}

Matrix mean_impute(const Matrix& x, const Mask& m, const Vector& means) {
  require_same_shape(x, m, "mean_impute");
  Matrix out = x;
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index d = 0; d < x.cols(); ++d)
      if (m(t, d)) out(t, d) = means(d);
  return out;
}

Matrix forward_fill(const Matrix& x, const Mask& m, const Vector& fallback) {
  require_same_shape(x, m, "forward_fill");
  Matrix out = x;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    Eigen::Index first = -1;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      if (!m(t, d)) {
        first = t;
        break;
      }
    }
    if (first < 0) {
      out.col(d).setConstant(fallback(d));
      continue;
    }
    double last = x(first, d);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      if (!m(t, d)) last = x(t, d);
      else out(t, d) = last;
    }
  }
  return out;
}

double synthetic_mae(std::span<const missing::CorruptedSample> corrupted, std::span<const Matrix> predictions) {
  if (corrupted.size() != predictions.size()) throw DimensionError("synthetic_mae: one prediction per sample required");
  double err = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < corrupted.size(); ++i) {
    const auto& c = corrupted[i];
    require_same_shape(predictions[i], c.synthetic, "synthetic_mae");
    for (Eigen::Index t = 0; t < c.synthetic.rows(); ++t)
      for (Eigen::Index d = 0; d < c.synthetic.cols(); ++d)
        if (c.synthetic(t, d)) {
          err += std::abs(predictions[i](t, d) - c.target(t, d));
          ++n;
        }
  }
  if (n == 0) throw DataError("synthetic_mae: no synthetically masked cells");
  return err / static_cast<double>(n);
}

ResultTable baseline_compare(const data::DatasetSplit& split, const missing::MechanismConfig& mechanism,
                             const std::vector<const models::ImputerModel*>& models) {
  const auto D = static_cast<Eigen::Index>(split.variables.size());
  const auto corrupted = models::corrupt_split(split.test, mechanism, 0xBA5E);
  const Vector means = training_means(split.train, D);

  std::vector<Matrix> mean_pred, ffill_pred;
  for (const auto& c : corrupted) {
    mean_pred.push_back(mean_impute(c.x_cor, c.m_cor, means));
    ffill_pred.push_back(forward_fill(c.x_cor, c.m_cor, means));
  }
  ResultTable t;
  t.metric = "mae";
  t.metadata["mechanism"] = missing::to_string(mechanism.kind);
  t.metadata["split"] = "test";
  t.metadata["split_hash"] = data::hash_hex(split.hash());
  t.rows.push_back({"mean", std::nullopt, std::nullopt, std::nullopt, synthetic_mae(corrupted, mean_pred)});
  t.rows.push_back({"forward_fill", std::nullopt, std::nullopt, std::nullopt, synthetic_mae(corrupted, ffill_pred)});
  for (const auto* m : models) {
    const auto pred = m->predict_batch(corrupted);
    t.rows.push_back({models::to_string(m->config().arch), std::nullopt, std::nullopt, std::nullopt,
                      synthetic_mae(corrupted, pred)});
  }
  return t;
}

}  // namespace selim::experiment

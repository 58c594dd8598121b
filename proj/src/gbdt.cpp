#include "selim/downstream/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace selim::downstream {

nlohmann::json GbdtConfig::to_json() const {
  return {{"n_trees", n_trees},   {"max_depth", max_depth},         {"learning_rate", learning_rate},
          {"n_bins", n_bins},     {"lambda", lambda},               {"min_samples_leaf", min_samples_leaf},
          {"min_child_hessian", min_child_hessian}, {"seed", seed}};
}

GbdtConfig GbdtConfig::from_json(const nlohmann::json& j) {
  GbdtConfig c;
  c.n_trees = j.value("n_trees", c.n_trees);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.n_bins = j.value("n_bins", c.n_bins);
  c.lambda = j.value("lambda", c.lambda);
  c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
  c.min_child_hessian = j.value("min_child_hessian", c.min_child_hessian);
  c.seed = j.value("seed", c.seed);
  return c;
}

double Tree::predict(const double* row) const {
  int k = 0;
  while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(k)];
    const double x = row[n.feature];
    const bool go_left = std::isnan(x) ? n.default_left : x <= n.threshold;
    k = go_left ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(k)].value;
}

double GbdtModel::predict_margin(const double* row) const {
  double s = base_score;
  for (const auto& t : trees) s += t.predict(row);
  return s;
}

Vector GbdtModel::predict_proba(const Matrix& features) const {
  Vector p(features.rows());
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    p(r) = 1.0 / (1.0 + std::exp(-predict_margin(features.row(r).data())));
  }
  return p;
}

nlohmann::json GbdtModel::to_json() const {
  nlohmann::json j;
  j["base_score"] = base_score;
  j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"leaf", n.value}});
      } else {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"default_left", n.default_left},
                         {"left", n.left},
                         {"right", n.right}});
      }
    }
    j["trees"].push_back(std::move(nodes));
  }
  return j;
}

GbdtModel GbdtModel::from_json(const nlohmann::json& j) {
  GbdtModel m;
  m.base_score = j.at("base_score").get<double>();
  for (const auto& jt : j.at("trees")) {
    Tree t;
    for (const auto& jn : jt) {
      TreeNode n;
      if (jn.contains("leaf")) {
        n.value = jn.at("leaf").get<double>();
      } else {
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.default_left = jn.at("default_left").get<bool>();
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
      }
      t.nodes.push_back(n);
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

namespace {

constexpr std::uint16_t kMissingBin = 0xFFFF;

struct BinnedData {
  std::vector<std::vector<double>> edges;        // per feature: candidate thresholds
  std::vector<std::vector<std::uint16_t>> bins;  // per feature, per (canonical) row
};

std::vector<double> bin_edges(std::vector<double> vals, int n_bins) {
  std::sort(vals.begin(), vals.end());
  std::vector<double> uniq = vals;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> edges;
  if (uniq.size() <= static_cast<std::size_t>(n_bins)) {
    edges.assign(uniq.begin(), uniq.end());
  } else {
    for (int k = 1; k < n_bins; ++k) {
      edges.push_back(vals[static_cast<std::size_t>(k) * vals.size() / static_cast<std::size_t>(n_bins)]);
    }
    edges.push_back(uniq.back());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }
  // The largest value cannot separate anything.
  if (!edges.empty() && edges.back() == uniq.back()) edges.pop_back();
  return edges;
}

std::uint16_t bin_of(const std::vector<double>& edges, double x) {
  if (std::isnan(x)) return kMissingBin;
  return static_cast<std::uint16_t>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;
  bool missing_left = true;
};

struct Builder {
  const BinnedData& data;
  const GbdtConfig& cfg;
  const std::vector<double>& grad;
  const std::vector<double>& hess;
  Tree tree;

  double leaf_weight(double g, double h) const { return -g / (h + cfg.lambda); }
  double score(double g, double h) const { return g * g / (h + cfg.lambda); }

  int build(std::vector<std::size_t>& rows, int depth, std::vector<double>& scores) {
    double G = 0.0, H = 0.0;
    for (auto r : rows) {
      G += grad[r];
      H += hess[r];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    SplitCandidate best;
    if (depth < cfg.max_depth && rows.size() >= 2 * static_cast<std::size_t>(cfg.min_samples_leaf)) {
      best = find_split(rows, G, H);
    }
    if (best.feature < 0) {
      const double w = cfg.learning_rate * leaf_weight(G, H);
      tree.nodes[static_cast<std::size_t>(id)].value = w;
      for (auto r : rows) scores[r] += w;
      return id;
    }

    const auto& fb = data.bins[static_cast<std::size_t>(best.feature)];
    std::vector<std::size_t> left, right;
    for (auto r : rows) {
      const auto b = fb[r];
      const bool go_left = b == kMissingBin ? best.missing_left : b <= best.bin;
      (go_left ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(left, depth + 1, scores);
    const int rr = build(right, depth + 1, scores);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = data.edges[static_cast<std::size_t>(best.feature)][static_cast<std::size_t>(best.bin)];
    node.default_left = best.missing_left;
    node.left = l;
    node.right = rr;
    return id;
  }

  SplitCandidate find_split(const std::vector<std::size_t>& rows, double G, double H) const {
    SplitCandidate best;
    const double parent = score(G, H);
    const auto min_n = static_cast<std::size_t>(cfg.min_samples_leaf);
    std::vector<double> hg, hh;
    std::vector<std::size_t> hn;
    for (std::size_t f = 0; f < data.bins.size(); ++f) {
      const auto& edges = data.edges[f];
      if (edges.empty()) continue;
      const std::size_t nb = edges.size() + 1;
      hg.assign(nb, 0.0);
      hh.assign(nb, 0.0);
      hn.assign(nb, 0);
      double mg = 0.0, mh = 0.0;
      std::size_t mn = 0;
      const auto& fb = data.bins[f];
      for (auto r : rows) {
        const auto b = fb[r];
        if (b == kMissingBin) {
          mg += grad[r];
          mh += hess[r];
          ++mn;
        } else {
          hg[b] += grad[r];
          hh[b] += hess[r];
          ++hn[b];
        }
      }
      double lg = 0.0, lh = 0.0;
      std::size_t ln = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        lg += hg[b];
        lh += hh[b];
        ln += hn[b];
        const std::size_t n_obs = rows.size() - mn;
        if (ln == 0 || ln == n_obs) continue;
        for (int side = 0; side < (mn > 0 ? 2 : 1); ++side) {
          // side 0: missing right, side 1: missing left.
          const bool miss_left = side == 1;
          const double gl = lg + (miss_left ? mg : 0.0), hl = lh + (miss_left ? mh : 0.0);
          const std::size_t nl = ln + (miss_left ? mn : 0);
          const double gr = G - gl, hr = H - hl;
          const std::size_t nr = rows.size() - nl;
          if (nl < min_n || nr < min_n || hl < cfg.min_child_hessian || hr < cfg.min_child_hessian) continue;
          const double gain = score(gl, hl) + score(gr, hr) - parent;
          if (gain > best.gain + 1e-12) {
            best.gain = gain;
            best.feature = static_cast<int>(f);
            best.bin = static_cast<int>(b);
            best.missing_left = mn > 0 ? miss_left : nl >= nr;
          }
        }
      }
    }
    return best;
  }
};

}  // namespace

GbdtModel gbdt_train(const Matrix& X, std::span<const int> labels, const GbdtConfig& cfg) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (labels.size() != n) throw DimensionError("gbdt_train: feature rows and labels differ");
  if (n == 0) throw TrainingError("gbdt_train: no rows");
  if (cfg.n_trees < 0 || cfg.max_depth < 0 || cfg.n_bins < 2 || cfg.n_bins > 4096 || cfg.min_samples_leaf < 1 ||
      !(cfg.learning_rate > 0.0) || cfg.lambda < 0.0) {
    throw ConfigError("gbdt: invalid configuration");
  }
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw TrainingError("gbdt_train: labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == n) throw TrainingError("gbdt_train: labels contain a single class");

  const auto F = static_cast<std::size_t>(X.cols());
  BinnedData data;
  data.edges.resize(F);
  std::vector<std::vector<std::uint16_t>> raw_bins(F, std::vector<std::uint16_t>(n));
  for (std::size_t f = 0; f < F; ++f) {
    std::vector<double> vals;
    for (std::size_t r = 0; r < n; ++r) {
      const double x = X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
      if (!std::isnan(x)) vals.push_back(x + 0.0);  // -0 and +0 bin alike; keep the edge sign canonical
    }
    data.edges[f] = bin_edges(std::move(vals), cfg.n_bins);
    for (std::size_t r = 0; r < n; ++r) {
      raw_bins[f][r] = bin_of(data.edges[f], X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)));
    }
  }

  // Canonical row order: rows equal in every bin and in the label are
  // interchangeable, so accumulating in this order makes training
  // independent of the input row order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t f = 0; f < F; ++f) {
      if (raw_bins[f][a] != raw_bins[f][b]) return raw_bins[f][a] < raw_bins[f][b];
    }
    return labels[a] < labels[b];
  });
  data.bins.assign(F, std::vector<std::uint16_t>(n));
  std::vector<int> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t f = 0; f < F; ++f) data.bins[f][k] = raw_bins[f][order[k]];
    y[k] = labels[order[k]];
  }
  raw_bins.clear();

  GbdtModel model;
  const double prior = static_cast<double>(pos) / static_cast<double>(n);
  model.base_score = std::log(prior / (1.0 - prior));
  std::vector<double> scores(n, model.base_score), grad(n), hess(n);
  for (int t = 0; t < cfg.n_trees; ++t) {
    for (std::size_t k = 0; k < n; ++k) {
      const double p = 1.0 / (1.0 + std::exp(-scores[k]));
      grad[k] = p - static_cast<double>(y[k]);
      hess[k] = std::max(p * (1.0 - p), 1e-16);
    }
    Builder b{data, cfg, grad, hess, {}};
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    b.build(rows, 0, scores);
    model.trees.push_back(std::move(b.tree));
  }
  return model;
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auprc: scores and labels differ in length");
  std::size_t positives = 0;
  for (int y : labels) positives += y == 1 ? 1 : 0;
  if (positives == 0) throw CalibrationError("auprc undefined: no positive labels");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

}  // namespace selim::downstream

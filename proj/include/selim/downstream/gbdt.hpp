#pragma once

#include "selim/core.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace selim::downstream {

struct GbdtConfig {
  int n_trees = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  int n_bins = 64;
  double lambda = 1.0;
  int min_samples_leaf = 20;
  double min_child_hessian = 1e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static GbdtConfig from_json(const nlohmann::json& j);
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const double* row) const;
};

/// Gradient-boosted regression trees on the logistic loss. Missing values
/// (NaN) follow each split's learned default direction.
class GbdtModel {
 public:
  double base_score = 0.0;
  std::vector<Tree> trees;

  double predict_margin(const double* row) const;
  Vector predict_proba(const Matrix& features) const;

  nlohmann::json to_json() const;
  static GbdtModel from_json(const nlohmann::json& j);
};

/// Histogram-based training; independent of the order of training rows.
GbdtModel gbdt_train(const Matrix& features, std::span<const int> labels, const GbdtConfig& config);

/// Average precision with tied scores grouped into one PR point.
double auprc(std::span<const double> scores, std::span<const int> labels);

}  // namespace selim::downstream

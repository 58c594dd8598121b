#pragma once

#include "selim/missingness.hpp"
#include "selim/tensor/autograd.hpp"
#include "selim/tensor/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace selim::models {

using data::TimeSeriesSample;
using missing::CorruptedSample;

enum class Arch { Transformer, Saits };

Arch parse_arch(const std::string& s);
std::string to_string(Arch a);

struct ModelConfig {
  Arch arch = Arch::Saits;
  int n_layers = 2;
  int d_model = 64;
  int d_inner = 64;
  int n_heads = 4;
  double dropout_rate = 0.1;
  double lr = 0.001;
  ad::Schedule scheduler = ad::Schedule::None;
  int epochs = 100;
  int batch_size = 64;
  int patience = 10;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig defaults);
  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError. A zero dropout rate is accepted for the degenerate
/// no-dropout case, where MC sampling yields zero spread everywhere.
void validate(const ModelConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_mit = 0.0;
  double val_mae = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_mae = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Stage outputs of one forward evaluation. For SAITS-lite `stages` holds the
/// two block estimates and the gated combination; the transformer has one.
struct ForwardResult {
  std::vector<ad::Var> stages;
  ad::Var combined;
};

/// Zero-filled values and masks of several samples stacked along rows.
struct StackedBatch {
  Matrix x;       // M_cor cells zeroed
  Matrix mask;    // M_cor as 0/1
  Matrix target;  // original values, genuine-missing cells zeroed
  Matrix synthetic;  // 0/1
  Matrix observed;   // 0/1, cells with M_cor = 0
  Eigen::Index block = 0;
};

StackedBatch stack(std::span<const CorruptedSample> samples);
StackedBatch stack(std::span<const CorruptedSample* const> samples);

class ImputerModel {
 public:
  ImputerModel(const ModelConfig& config, Eigen::Index hours, Eigen::Index n_vars);

  /// Builds the forward graph for a stacked batch. When `track_gradients` is
  /// false the parameters enter the graph as constants.
  ForwardResult forward(ad::Graph& graph, const StackedBatch& batch, ad::DropoutState& dropout, bool track_gradients);
  ForwardResult forward(ad::Graph& graph, const StackedBatch& batch, ad::DropoutState& dropout) const;

  /// Full T x D prediction for one sample; NaN cells of `x_cor` are zero-filled.
  Matrix predict(const Matrix& x_cor, const Mask& m_cor, ad::DropoutMode mode, std::uint64_t seed) const;

  /// Deterministic predictions for many corrupted samples, evaluated in batches.
  std::vector<Matrix> predict_batch(std::span<const CorruptedSample> samples, std::size_t batch_size = 64) const;

  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

  const ModelConfig& config() const { return config_; }
  Eigen::Index hours() const { return hours_; }
  Eigen::Index n_vars() const { return n_vars_; }
  std::size_t n_stages() const { return config_.arch == Arch::Saits ? 3 : 1; }

  TrainingHistory history;

  void save(const std::filesystem::path& checkpoint, const std::filesystem::path& config_json) const;
  static ImputerModel load(const std::filesystem::path& checkpoint, const std::filesystem::path& config_json);
  /// FNV-1a of all parameter bytes, hex.
  std::string id() const;

 private:
  struct Layer {
    std::size_t qkv_w, qkv_b, out_w, out_b, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
  };
  struct Encoder {
    std::size_t emb_w, emb_b;
    std::vector<Layer> layers;
    std::size_t head_w, head_b;
  };

  std::size_t add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng, char init);
  Encoder make_encoder(const std::string& prefix, Eigen::Index in_width, Rng& rng);
  ForwardResult forward_with(ad::Graph& g, const StackedBatch& batch, ad::DropoutState& dropout,
                             const std::vector<ad::Var>& p) const;
  ad::Var run_encoder(ad::Graph& g, const Encoder& enc, ad::Var input, Eigen::Index block, ad::DropoutState& dropout,
                      const std::vector<ad::Var>& p) const;

  ModelConfig config_;
  Eigen::Index hours_;
  Eigen::Index n_vars_;
  std::vector<ad::Parameter> params_;
  std::vector<Encoder> encoders_;
  std::size_t gate_w_ = 0, gate_b_ = 0;
  Matrix positional_;
};

/// Sinusoidal positional encoding, hours x d_model.
Matrix positional_encoding(Eigen::Index hours, Eigen::Index d_model);

struct LossTerms {
  ad::Var total;
  double mit = 0.0;
  double ort = 0.0;
  std::size_t masked_cells = 0;
};

/// MIT (MAE of the combined output on synthetically masked cells) plus ORT
/// (mean over stages of MAE on cells still observed), weighted 1:1.
LossTerms imputation_loss(ad::Graph& graph, const ForwardResult& out, const StackedBatch& batch);

/// Value-only form of the same loss on plain matrices (missing target cells may hold NaN).
double saits_loss(std::span<const Matrix> stages, const Matrix& combined, const Matrix& x_obs, const Mask& m_obs,
                  const Mask& m_cor);

/// MAE of deterministic predictions over synthetically masked cells.
double masked_mae(const ImputerModel& model, std::span<const CorruptedSample> samples);

/// Trains from a fresh initialization; returns the validation-best snapshot.
ImputerModel train(const ModelConfig& config, std::span<const TimeSeriesSample> train_set,
                   std::span<const TimeSeriesSample> val_set, const missing::MechanismConfig& mechanism);

/// Continues training an existing model in place.
void train(ImputerModel& model, std::span<const TimeSeriesSample> train_set, std::span<const TimeSeriesSample> val_set,
           const missing::MechanismConfig& mechanism);

/// Fixed validation corruption used for model selection.
std::vector<CorruptedSample> corrupt_split(std::span<const TimeSeriesSample> split,
                                           const missing::MechanismConfig& mechanism, std::uint64_t stream);

}  // namespace selim::models

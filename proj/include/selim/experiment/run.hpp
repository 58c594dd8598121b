#pragma once

#include "selim/data/cohort.hpp"
#include "selim/data/csv_io.hpp"
#include "selim/data/synthetic.hpp"
#include "selim/experiment/experiment.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace selim::experiment {

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | csv | file
  std::size_t n_patients = 2000;
  data::GeneratorConfig generator;
  std::filesystem::path path;  // for source = file
  data::CsvSchema csv;         // for source = csv
  bool cohort_filters = true;  // csv only
};

struct UncertaintySection {
  int passes = uq::kDefaultPasses;
  std::filesystem::path thresholds;  // reuse a calibrated set instead of recalibrating
};

struct SweepSection {
  Grid grid;
  std::optional<std::size_t> subset;  // randomized grid search size
};

struct OutputSection {
  std::filesystem::path dir = "out";
  bool svg = true;
};

/// Declarative run configuration. A single global seed drives every random
/// stream; the per-component seeds are derived from it.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  missing::MechanismConfig mechanism;
  models::ModelConfig model;
  std::filesystem::path checkpoint;  // reuse a trained model instead of training
  UncertaintySection uncertainty;
  downstream::GbdtConfig downstream;
  SweepSection sweep;
  OutputSection output;

  /// Re-derives component seeds from `seed`.
  void derive_seeds();
  std::uint64_t split_seed() const;
  std::uint64_t uncertainty_seed() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

inline constexpr const char* kSeedEnv = "SELIM_SEED";

/// Reads a JSON run config; a set SELIM_SEED replaces the global seed.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_seed_override(RunConfig& config, const char* env_value);

/// Lazily materialized stages of an experiment.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config);

  const RunConfig& config() const { return config_; }
  const data::Dataset& dataset();
  const std::optional<data::ExclusionReport>& exclusion_report();
  const data::DatasetSplit& split();
  const models::ImputerModel& model();
  bool model_trained_here() const { return trained_here_; }
  const uq::ThresholdSet& thresholds();
  bool thresholds_calibrated_here() const { return calibrated_here_; }

 private:
  RunConfig config_;
  std::optional<data::Dataset> dataset_;
  std::optional<data::ExclusionReport> report_;
  std::optional<data::DatasetSplit> split_;
  std::unique_ptr<models::ImputerModel> model_;
  std::optional<uq::ThresholdSet> thresholds_;
  bool trained_here_ = false;
  bool calibrated_here_ = false;
};

inline constexpr const char* kCommands[] = {"generate", "ingest",     "mask",        "train",    "sweep",
                                            "calibrate", "mae-curve", "auprc-curve", "baselines"};

bool is_command(const std::string& name);

struct RunOutcome {
  std::string run_id;
  std::filesystem::path run_dir;
  std::filesystem::path manifest;
  nlohmann::json manifest_json;
};

/// Executes one command under <out>/runs/<run_id>/ and writes an
/// append-only manifest to <out>/manifests/<run_id>.json.
RunOutcome run_command(const std::string& command, const RunConfig& config);

/// FNV-1a of a file's bytes, hex.
std::string file_hash(const std::filesystem::path& path);

struct RerunReport {
  RunOutcome outcome;
  std::vector<std::string> mismatched;  // artifact names that differ
  bool identical() const { return mismatched.empty(); }
};

/// Re-executes the command recorded in a manifest with its stored config,
/// writing under `out_dir`, and compares every artifact byte for byte.
RerunReport rerun(const std::filesystem::path& manifest, const std::filesystem::path& out_dir);

}  // namespace selim::experiment

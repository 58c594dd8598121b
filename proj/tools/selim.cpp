// Command-line driver for the imputation experiments.
#include "selim/experiment/run.hpp"
#include "selim/log.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace {

namespace ex = selim::experiment;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kTraining = 4,
  kCalibration = 5,
  kMechanism = 6,
  kNotReproduced = 7,
};

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patients;
  std::string dataset;
  std::string mechanism;
  std::optional<double> rate;
  std::string arch;
  std::optional<int> epochs;
  std::optional<int> passes;
  std::string checkpoint;
  std::string thresholds;
  std::optional<std::size_t> subset;
  bool no_svg = false;
};

const char* describe(const std::string& name) {
  if (name == "generate") return "generate a synthetic ICU cohort";
  if (name == "ingest") return "load a CSV cohort and apply the exclusion rules";
  if (name == "mask") return "draw synthetic missingness masks for every split";
  if (name == "train") return "train an imputation model";
  if (name == "sweep") return "grid or randomized hyperparameter search";
  if (name == "calibrate") return "calibrate uncertainty thresholds on the validation split";
  if (name == "mae-curve") return "selective MAE per threshold on the test split";
  if (name == "auprc-curve") return "downstream AUPRC per threshold, plus no imputation";
  return "masked-cell MAE against mean and forward-fill imputation";
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "global seed (SELIM_SEED takes precedence)");
  cmd->add_option("--patients", o.patients, "synthetic cohort size");
  cmd->add_option("--dataset", o.dataset, "dataset file written by generate or ingest")->check(CLI::ExistingFile);
  cmd->add_option("--mechanism", o.mechanism, "MCAR, MAR, MNAR, BO or blockBO");
  cmd->add_option("--rate", o.rate, "synthetic missingness rate");
  cmd->add_option("--arch", o.arch, "saits or transformer");
  cmd->add_option("--epochs", o.epochs, "maximum training epochs");
  cmd->add_option("--passes", o.passes, "Monte Carlo dropout passes");
  cmd->add_option("--checkpoint", o.checkpoint, "trained model checkpoint (model.ckpt)")->check(CLI::ExistingFile);
  cmd->add_option("--thresholds", o.thresholds, "calibrated thresholds.json")->check(CLI::ExistingFile);
  cmd->add_option("--subset", o.subset, "randomized grid search size");
  cmd->add_flag("--no-svg", o.no_svg, "skip SVG plots");
}

ex::RunConfig resolve(const Overrides& o) {
  ex::RunConfig c = o.config.empty() ? ex::RunConfig::from_json(nlohmann::json::object()) : ex::load_run_config(o.config);
  if (o.seed && !std::getenv(ex::kSeedEnv)) {
    c.seed = *o.seed;
    c.derive_seeds();
  }
  if (o.config.empty()) ex::apply_seed_override(c, std::getenv(ex::kSeedEnv));
  if (!o.out.empty()) c.output.dir = o.out;
  if (o.patients) c.dataset.n_patients = *o.patients;
  if (!o.dataset.empty()) {
    c.dataset.source = "file";
    c.dataset.path = o.dataset;
  }
  if (!o.mechanism.empty()) c.mechanism.kind = selim::missing::parse_mechanism(o.mechanism);
  if (o.rate) c.mechanism.target_rate = *o.rate;
  if (!o.arch.empty()) c.model.arch = selim::models::parse_arch(o.arch);
  if (o.epochs) c.model.epochs = *o.epochs;
  if (o.passes) c.uncertainty.passes = *o.passes;
  if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
  if (!o.thresholds.empty()) c.uncertainty.thresholds = o.thresholds;
  if (o.subset) c.sweep.subset = *o.subset;
  if (o.no_svg) c.output.svg = false;
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware selective imputation experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

  Overrides o;
  std::string command;
  for (const char* name : ex::kCommands) {
    auto* cmd = app.add_subcommand(name, describe(name));
    add_common(cmd, o);
    cmd->callback([&command, name] { command = name; });
  }
  std::string manifest, rerun_out;
  auto* rerun = app.add_subcommand("rerun", "re-execute a run from its manifest and compare artifacts");
  rerun->add_option("manifest", manifest, "manifest JSON")->required()->check(CLI::ExistingFile);
  rerun->add_option("-o,--out", rerun_out, "output directory for the replay")->required();
  rerun->callback([&command] { command = "rerun"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  if (command == "rerun") {
    const auto report = ex::rerun(manifest, rerun_out);
    std::cout << report.outcome.manifest.string() << '\n';
    if (!report.identical()) {
      for (const auto& name : report.mismatched) std::cerr << "artifact differs: " << name << '\n';
      return kNotReproduced;
    }
    std::cout << "all artifacts bit-identical\n";
    return kOk;
  }
  const auto outcome = ex::run_command(command, resolve(o));
  std::cout << outcome.manifest.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const selim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const selim::MechanismError& e) {
    std::cerr << "mechanism error: " << e.what() << '\n';
    return kMechanism;
  } catch (const selim::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const selim::TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kTraining;
  } catch (const selim::CalibrationError& e) {
    std::cerr << "calibration error: " << e.what() << '\n';
    return kCalibration;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
}

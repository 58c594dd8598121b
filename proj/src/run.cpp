#include "selim/experiment/run.hpp"

#include "selim/log.hpp"
#include "selim/random.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace selim::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json generator_to_json(const data::GeneratorConfig& g) {
  return {{"hours", g.hours},
          {"ar_coefficient", g.ar_coefficient},
          {"cross_correlation", g.cross_correlation},
          {"patient_offset_sd", g.patient_offset_sd},
          {"severity_drift", g.severity_drift},
          {"prevalence", g.prevalence},
          {"label_strength", g.label_strength},
          {"genuine_mcar_rate", g.genuine_mcar_rate},
          {"block_probability", g.block_probability},
          {"max_blocks", g.max_blocks},
          {"block_min", g.block_min},
          {"block_max", g.block_max}};
}

data::GeneratorConfig generator_from_json(const json& j) {
  data::GeneratorConfig g;
  g.hours = j.value("hours", g.hours);
  g.ar_coefficient = j.value("ar_coefficient", g.ar_coefficient);
  g.cross_correlation = j.value("cross_correlation", g.cross_correlation);
  g.patient_offset_sd = j.value("patient_offset_sd", g.patient_offset_sd);
  g.severity_drift = j.value("severity_drift", g.severity_drift);
  g.prevalence = j.value("prevalence", g.prevalence);
  g.label_strength = j.value("label_strength", g.label_strength);
  g.genuine_mcar_rate = j.value("genuine_mcar_rate", g.genuine_mcar_rate);
  g.block_probability = j.value("block_probability", g.block_probability);
  g.max_blocks = j.value("max_blocks", g.max_blocks);
  g.block_min = j.value("block_min", g.block_min);
  g.block_max = j.value("block_max", g.block_max);
  return g;
}

std::string abs_or_empty(const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace

void RunConfig::derive_seeds() {
  mechanism.seed = mix_seed(seed, 3);
  model.seed = mix_seed(seed, 4);
  downstream.seed = mix_seed(seed, 6);
}

std::uint64_t RunConfig::split_seed() const { return mix_seed(seed, 2); }
std::uint64_t RunConfig::uncertainty_seed() const { return mix_seed(seed, 5); }

json RunConfig::to_json() const {
  json ds = {{"source", dataset.source},
             {"n_patients", dataset.n_patients},
             {"generator", generator_to_json(dataset.generator)},
             {"path", dataset.path.string()},
             {"cohort_filters", dataset.cohort_filters},
             {"csv",
              {{"measurements", dataset.csv.measurements.string()},
               {"statics", dataset.csv.statics.string()},
               {"labels", dataset.csv.labels.string()},
               {"variables", dataset.csv.variables},
               {"hours", dataset.csv.hours}}}};
  json model_j = model.to_json();
  model_j["checkpoint"] = checkpoint.string();
  json sw = {{"grid", sweep.grid.to_json()}};
  if (sweep.subset) sw["subset"] = *sweep.subset;
  return {{"seed", seed},
          {"dataset", ds},
          {"mechanism", missing::to_json(mechanism)},
          {"model", model_j},
          {"uncertainty", {{"passes", uncertainty.passes}, {"thresholds", uncertainty.thresholds.string()}}},
          {"downstream", downstream.to_json()},
          {"sweep", sw},
          {"output", {{"dir", output.dir.string()}, {"svg", output.svg}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> kSections = {"seed",       "dataset",    "mechanism", "model",
                                                  "uncertainty", "downstream", "sweep",     "output"};
  for (const auto& [key, _] : j.items()) {
    if (!kSections.count(key)) throw ConfigError("run config: unknown section '" + key + "'");
  }
  RunConfig c;
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.dataset.source = d.value("source", c.dataset.source);
    c.dataset.n_patients = d.value("n_patients", c.dataset.n_patients);
    if (d.contains("generator")) c.dataset.generator = generator_from_json(d.at("generator"));
    c.dataset.path = d.value("path", std::string());
    c.dataset.cohort_filters = d.value("cohort_filters", c.dataset.cohort_filters);
    if (d.contains("csv")) {
      const auto& s = d.at("csv");
      c.dataset.csv.measurements = s.value("measurements", std::string());
      c.dataset.csv.statics = s.value("statics", std::string());
      c.dataset.csv.labels = s.value("labels", std::string());
      if (s.contains("variables")) c.dataset.csv.variables = s.at("variables").get<std::vector<std::string>>();
      c.dataset.csv.hours = s.value("hours", c.dataset.csv.hours);
    }
    if (c.dataset.source != "synthetic" && c.dataset.source != "csv" && c.dataset.source != "file") {
      throw ConfigError("dataset.source must be synthetic, csv or file, got '" + c.dataset.source + "'");
    }
  }
  if (j.contains("mechanism")) c.mechanism = missing::mechanism_from_json(j.at("mechanism"));
  if (j.contains("model")) {
    c.model = models::ModelConfig::from_json(j.at("model"));
    c.checkpoint = j.at("model").value("checkpoint", std::string());
  }
  if (j.contains("uncertainty")) {
    c.uncertainty.passes = j.at("uncertainty").value("passes", c.uncertainty.passes);
    c.uncertainty.thresholds = j.at("uncertainty").value("thresholds", std::string());
  }
  if (j.contains("downstream")) c.downstream = downstream::GbdtConfig::from_json(j.at("downstream"));
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    if (s.contains("grid")) c.sweep.grid = Grid::from_json(s.at("grid"));
    if (s.contains("subset") && !s.at("subset").is_null()) c.sweep.subset = s.at("subset").get<std::size_t>();
  }
  if (j.contains("output")) {
    c.output.dir = j.at("output").value("dir", c.output.dir.string());
    c.output.svg = j.at("output").value("svg", c.output.svg);
  }
  c.derive_seeds();
  return c;
}

void apply_seed_override(RunConfig& config, const char* env_value) {
  if (!env_value || !*env_value) return;
  try {
    std::size_t used = 0;
    const std::string s(env_value);
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    config.seed = v;
  } catch (const std::exception&) {
    throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + env_value + "'");
  }
  config.derive_seeds();
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read run config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("run config " + path.string() + ": " + e.what());
  }
  auto c = RunConfig::from_json(j);
  apply_seed_override(c, std::getenv(kSeedEnv));
  return c;
}

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {}

const data::Dataset& Pipeline::dataset() {
  if (dataset_) return *dataset_;
  const auto& d = config_.dataset;
  if (d.source == "synthetic") {
    if (d.n_patients == 0) throw ConfigError("dataset.n_patients must be positive");
    dataset_ = data::generate_synthetic(d.n_patients, mix_seed(config_.seed, 1), d.generator);
  } else if (d.source == "file") {
    if (d.path.empty()) throw ConfigError("dataset.path is required for source 'file'");
    dataset_ = data::load_dataset(d.path);
  } else {
    if (d.csv.measurements.empty() || d.csv.statics.empty() || d.csv.labels.empty()) {
      throw ConfigError("dataset.csv needs measurements, statics and labels paths");
    }
    auto raw = data::ingest_csv(d.csv);
    data::ExclusionReport report;
    dataset_ = data::apply_cohort_filters(raw, d.cohort_filters ? data::CohortFilterConfig{}
                                                                : data::CohortFilterConfig::none(),
                                          report);
    report_ = std::move(report);
  }
  return *dataset_;
}

const std::optional<data::ExclusionReport>& Pipeline::exclusion_report() {
  dataset();
  return report_;
}

const data::DatasetSplit& Pipeline::split() {
  if (!split_) split_ = data::split_and_standardize(dataset(), config_.split_seed());
  return *split_;
}

const models::ImputerModel& Pipeline::model() {
  if (model_) return *model_;
  const auto& s = split();
  if (!config_.checkpoint.empty()) {
    auto json_path = config_.checkpoint;
    json_path.replace_extension(".json");
    model_ = std::make_unique<models::ImputerModel>(models::ImputerModel::load(config_.checkpoint, json_path));
    if (model_->hours() != s.train.front().hours() ||
        model_->n_vars() != static_cast<Eigen::Index>(s.variables.size())) {
      throw ConfigError("checkpoint " + config_.checkpoint.string() + " does not match the dataset shape");
    }
  } else {
    log_info("training " + models::to_string(config_.model.arch) + " for up to " +
             std::to_string(config_.model.epochs) + " epochs");
    model_ = std::make_unique<models::ImputerModel>(models::train(config_.model, s.train, s.val, config_.mechanism));
    trained_here_ = true;
  }
  return *model_;
}

const uq::ThresholdSet& Pipeline::thresholds() {
  if (thresholds_) return *thresholds_;
  const auto& m = model();
  if (!config_.uncertainty.thresholds.empty()) {
    thresholds_ = uq::ThresholdSet::load(config_.uncertainty.thresholds);
    if (thresholds_->model_id != m.id()) {
      throw ConfigError("thresholds in " + config_.uncertainty.thresholds.string() + " belong to model " +
                        thresholds_->model_id + ", not " + m.id());
    }
  } else {
    const auto& s = split();
    const auto values = uq::collect_validation_uncertainty(m, s.val, config_.mechanism, config_.uncertainty.passes,
                                                           config_.uncertainty_seed());
    auto t = uq::calibrate_thresholds(values);
    t.model_id = m.id();
    t.mechanism = missing::to_string(config_.mechanism.kind);
    t.split_hash = data::hash_hex(s.hash());
    thresholds_ = std::move(t);
    calibrated_here_ = true;
  }
  return *thresholds_;
}

bool is_command(const std::string& name) {
  for (const char* c : kCommands) {
    if (name == c) return true;
  }
  return false;
}

std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return data::hash_hex(h);
}

namespace {

class RunWriter {
 public:
  RunWriter(const fs::path& out, const std::string& command) : out_(out) {
    fs::create_directories(out_ / "manifests");
    fs::create_directories(out_ / "runs");
    for (int n = 1;; ++n) {
      std::ostringstream id;
      id << command << '-' << std::setw(4) << std::setfill('0') << n;
      if (!fs::exists(out_ / "manifests" / (id.str() + ".json")) && !fs::exists(out_ / "runs" / id.str())) {
        run_id_ = id.str();
        break;
      }
    }
    run_dir_ = out_ / "runs" / run_id_;
    fs::create_directories(run_dir_);
  }

  fs::path path(const std::string& file) const { return run_dir_ / file; }

  void record(const std::string& name, const std::string& file) {
    artifacts_[name] = {{"path", fs::relative(path(file), out_).generic_string()}, {"fnv1a", file_hash(path(file))}};
  }

  const std::string& id() const { return run_id_; }
  const fs::path& dir() const { return run_dir_; }
  const json& artifacts() const { return artifacts_; }

  fs::path manifest_path() const { return out_ / "manifests" / (run_id_ + ".json"); }

 private:
  fs::path out_;
  std::string run_id_;
  fs::path run_dir_;
  json artifacts_ = json::object();
};

void write_history(const fs::path& path, const models::TrainingHistory& h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_loss,train_mit,val_mae\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << data::format_double(e.train_loss) << ',' << data::format_double(e.train_mit) << ','
       << data::format_double(e.val_mae) << '\n';
  }
}

void save_model(Pipeline& p, RunWriter& w) {
  const auto& m = p.model();
  m.save(w.path("model.ckpt"), w.path("model.json"));
  write_history(w.path("history.csv"), m.history);
  w.record("checkpoint", "model.ckpt");
  w.record("model_config", "model.json");
  w.record("history", "history.csv");
}

void save_table(const ResultTable& t, RunWriter& w, const std::string& stem, const std::string& title, bool svg) {
  t.write_csv(w.path(stem + ".csv"));
  w.record(stem, stem + ".csv");
  if (svg) {
    t.write_svg(w.path(stem + ".svg"), title);
    w.record(stem + "_svg", stem + ".svg");
  }
}

json dataset_summary(const data::Dataset& ds) {
  std::size_t pos = 0, missing = 0, cells = 0;
  for (const auto& s : ds.samples) {
    pos += static_cast<std::size_t>(s.label);
    missing += static_cast<std::size_t>(s.missing.count());
    cells += static_cast<std::size_t>(s.missing.size());
  }
  return {{"patients", ds.samples.size()},
          {"hours", ds.hours},
          {"variables", ds.variables},
          {"positives", pos},
          {"genuine_missing_rate", cells ? static_cast<double>(missing) / static_cast<double>(cells) : 0.0},
          {"content_hash", data::hash_hex(data::content_hash(ds.samples))}};
}

void write_masks(Pipeline& p, RunWriter& w) {
  const auto& s = p.split();
  const auto& mech = p.config().mechanism;
  std::ofstream os(w.path("masks.csv"), std::ios::binary);
  if (!os) throw DataError("cannot write " + w.path("masks.csv").string());
  os << "split,patient_id,hour,variable\n";
  json rates = json::object();
  const std::pair<const char*, const std::vector<data::TimeSeriesSample>*> parts[] = {
      {"train", &s.train}, {"val", &s.val}, {"test", &s.test}};
  std::uint64_t stream = 0x3A5C;
  for (const auto& [name, samples] : parts) {
    const auto corrupted = models::corrupt_split(*samples, mech, stream++);
    for (std::size_t i = 0; i < corrupted.size(); ++i) {
      const auto& c = corrupted[i];
      for (Eigen::Index t = 0; t < c.synthetic.rows(); ++t)
        for (Eigen::Index d = 0; d < c.synthetic.cols(); ++d)
          if (c.synthetic(t, d)) os << name << ',' << (*samples)[i].patient_id << ',' << t << ',' << s.variables[static_cast<std::size_t>(d)] << '\n';
    }
    rates[name] = missing::synthetic_rate(corrupted);
  }
  os.close();
  w.record("masks", "masks.csv");
  write_json(w.path("mask_summary.json"), {{"mechanism", missing::to_json(mech)}, {"realized_rate", rates}});
  w.record("mask_summary", "mask_summary.json");
}

json sweep_to_json(const SweepResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j = {{"config", run.config.to_json()}, {"epochs_run", run.epochs_run}};
    j["val_mae"] = run.val_mae ? json(*run.val_mae) : json(nullptr);
    if (!run.error.empty()) j["error"] = run.error;
    runs.push_back(j);
  }
  return {{"best", r.best.to_json()}, {"best_val_mae", r.best_val_mae}, {"runs", runs}};
}

}  // namespace

RunOutcome run_command(const std::string& command, const RunConfig& config) {
  if (!is_command(command)) throw ConfigError("unknown command '" + command + "'");
  Pipeline p(config);
  RunWriter w(config.output.dir, command);
  const std::string started = now_utc();
  const bool svg = config.output.svg;

  if (command == "generate" || command == "ingest") {
    if (command == "ingest" && config.dataset.source != "csv") throw ConfigError("ingest needs dataset.source = csv");
    const auto& ds = p.dataset();
    data::save_dataset(w.path("dataset.bin"), ds);
    w.record("dataset", "dataset.bin");
    write_json(w.path("dataset_summary.json"), dataset_summary(ds));
    w.record("dataset_summary", "dataset_summary.json");
    if (p.exclusion_report()) {
      write_json(w.path("exclusions.json"), p.exclusion_report()->to_json());
      w.record("exclusions", "exclusions.json");
    }
    if (command == "generate") {
      data::CsvSchema schema;
      schema.measurements = w.path("measurements.csv");
      schema.statics = w.path("statics.csv");
      schema.labels = w.path("labels.csv");
      schema.variables = ds.variables;
      schema.hours = ds.hours;
      data::export_csv(ds, schema);
      w.record("measurements_csv", "measurements.csv");
      w.record("statics_csv", "statics.csv");
      w.record("labels_csv", "labels.csv");
    }
  } else if (command == "mask") {
    write_masks(p, w);
  } else if (command == "train") {
    save_model(p, w);
    write_json(w.path("standardization.json"), p.split().standardization.to_json());
    w.record("standardization", "standardization.json");
  } else if (command == "sweep") {
    auto configs = enumerate_grid(config.sweep.grid, config.model);
    if (config.sweep.subset) configs = random_subset(configs, *config.sweep.subset, mix_seed(config.seed, 7));
    const auto result = sweep(p.split(), config.mechanism, configs);
    write_json(w.path("sweep.json"), sweep_to_json(result));
    w.record("sweep", "sweep.json");
  } else if (command == "calibrate") {
    if (p.model_trained_here() || config.checkpoint.empty()) {
      p.model();
      save_model(p, w);
    }
    p.thresholds().save(w.path("thresholds.json"));
    w.record("thresholds", "thresholds.json");
  } else {
    const auto& m = p.model();
    if (p.model_trained_here()) save_model(p, w);
    if (command == "mae-curve") {
      const auto& t = p.thresholds();
      if (p.thresholds_calibrated_here()) {
        t.save(w.path("thresholds.json"));
        w.record("thresholds", "thresholds.json");
      }
      auto table = mae_curve(m, p.split().test, config.mechanism, t, config.uncertainty.passes,
                             config.uncertainty_seed());
      table.metadata["split"] = "test";
      save_table(table, w, "mae_curve", "Selective MAE vs uncertainty threshold", svg);
    } else if (command == "auprc-curve") {
      const auto& t = p.thresholds();
      if (p.thresholds_calibrated_here()) {
        t.save(w.path("thresholds.json"));
        w.record("thresholds", "thresholds.json");
      }
      auto table = auprc_curve(m, t, p.split(), config.downstream, config.uncertainty.passes,
                               config.uncertainty_seed());
      save_table(table, w, "auprc_curve", "Validation AUPRC vs uncertainty threshold", svg);
    } else {
      // baselines: the configured model plus the other architecture.
      auto other_cfg = config.model;
      other_cfg.arch = m.config().arch == models::Arch::Saits ? models::Arch::Transformer : models::Arch::Saits;
      const auto other = models::train(other_cfg, p.split().train, p.split().val, config.mechanism);
      std::vector<const models::ImputerModel*> trained = {&m, &other};
      if (m.config().arch == models::Arch::Saits) std::swap(trained[0], trained[1]);
      save_table(baseline_compare(p.split(), config.mechanism, trained), w, "baselines", "", false);
    }
  }

  json inputs = json::object();
  if (!config.checkpoint.empty()) inputs["checkpoint"] = {{"path", abs_or_empty(config.checkpoint)},
                                                          {"fnv1a", file_hash(config.checkpoint)}};
  if (!config.uncertainty.thresholds.empty()) {
    inputs["thresholds"] = {{"path", abs_or_empty(config.uncertainty.thresholds)},
                            {"fnv1a", file_hash(config.uncertainty.thresholds)}};
  }
  if (config.dataset.source == "file") {
    inputs["dataset"] = {{"path", abs_or_empty(config.dataset.path)}, {"fnv1a", file_hash(config.dataset.path)}};
  }

  // Inputs are stored as absolute paths so the manifest can be replayed from anywhere.
  RunConfig stored = config;
  if (!stored.checkpoint.empty()) stored.checkpoint = abs_or_empty(stored.checkpoint);
  if (!stored.uncertainty.thresholds.empty()) stored.uncertainty.thresholds = abs_or_empty(stored.uncertainty.thresholds);
  if (!stored.dataset.path.empty()) stored.dataset.path = abs_or_empty(stored.dataset.path);
  for (auto* f : {&stored.dataset.csv.measurements, &stored.dataset.csv.statics, &stored.dataset.csv.labels}) {
    if (!f->empty()) *f = abs_or_empty(*f);
  }
  stored.output.dir = abs_or_empty(stored.output.dir);

  json manifest = {{"run_id", w.id()},
                   {"command", command},
                   {"started_at", started},
                   {"finished_at", now_utc()},
                   {"config", stored.to_json()},
                   {"seeds",
                    {{"global", config.seed},
                     {"split", config.split_seed()},
                     {"mechanism", config.mechanism.seed},
                     {"model", config.model.seed},
                     {"uncertainty", config.uncertainty_seed()},
                     {"downstream", config.downstream.seed}}},
                   {"passes", config.uncertainty.passes},
                   {"mechanism", missing::to_string(config.mechanism.kind)},
                   {"inputs", inputs},
                   {"artifacts", w.artifacts()}};
  if (p.model_trained_here() || command == "train") manifest["model_config"] = config.model.to_json();
  manifest["dataset_id"] = data::hash_hex(data::content_hash(p.dataset().samples));
  if (command != "generate" && command != "ingest") manifest["split_hash"] = data::hash_hex(p.split().hash());
  if (fs::exists(w.manifest_path())) throw DataError("manifest " + w.manifest_path().string() + " already exists");
  write_json(w.manifest_path(), manifest);
  return {w.id(), w.dir(), w.manifest_path(), manifest};
}

RerunReport rerun(const fs::path& manifest_path, const fs::path& out_dir) {
  std::ifstream is(manifest_path);
  if (!is) throw ConfigError("cannot read manifest " + manifest_path.string());
  json original;
  try {
    original = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("manifest " + manifest_path.string() + ": " + e.what());
  }
  auto config = RunConfig::from_json(original.at("config"));
  const auto old_out = fs::path(original.at("config").at("output").at("dir").get<std::string>());
  config.output.dir = out_dir;

  RerunReport report;
  report.outcome = run_command(original.at("command").get<std::string>(), config);
  const auto& fresh = report.outcome.manifest_json.at("artifacts");
  for (const auto& [name, art] : original.at("artifacts").items()) {
    if (!fresh.contains(name) || fresh.at(name).at("fnv1a") != art.at("fnv1a")) {
      report.mismatched.push_back(name);
      continue;
    }
    // Hash equality is confirmed byte for byte when the original file is still present.
    const auto a = old_out / art.at("path").get<std::string>();
    const auto b = out_dir / fresh.at(name).at("path").get<std::string>();
    if (fs::exists(a)) {
      std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
      const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
      if (sa != sb) report.mismatched.push_back(name);
    }
  }
  for (const auto& [name, _] : fresh.items()) {
    if (!original.at("artifacts").contains(name)) report.mismatched.push_back(name);
  }
  return report;
}

}  // namespace selim::experiment

#include "selim/data/cohort.hpp"
#include "selim/data/csv_io.hpp"
#include "selim/data/split.hpp"
#include "selim/data/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace selim::data {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("selim_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

TimeSeriesSample full_sample(const std::string& id, Eigen::Index T = 24, Eigen::Index D = 6) {
  TimeSeriesSample s;
  s.patient_id = id;
  s.values = Matrix::Constant(T, D, 1.0);
  s.missing = Mask::Constant(T, D, false);
  s.statics = {40.0, 1.0, 170.0, 70.0};
  s.stay.los_hours = 48.0;
  s.stay.end_hour = 48.0;
  return s;
}

TEST(Synthetic, DeterministicForFixedSeed) {
  const auto a = generate_synthetic(50, 9), b = generate_synthetic(50, 9);
  EXPECT_TRUE(same_dataset(a, b));
  EXPECT_FALSE(same_dataset(a, generate_synthetic(50, 10)));
}

TEST(Synthetic, ShapesAndMaskAlignment) {
  const auto ds = generate_synthetic(30, 1);
  ASSERT_EQ(ds.samples.size(), 30u);
  EXPECT_EQ(ds.variables.size(), 6u);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.values.rows(), 24);
    EXPECT_EQ(s.values.cols(), 6);
    EXPECT_NO_THROW(validate_sample(s));
    EXPECT_TRUE(std::isfinite(s.statics.age) && std::isfinite(s.statics.height) && std::isfinite(s.statics.weight));
  }
}

TEST(Synthetic, PrevalenceNearTarget) {
  const auto ds = generate_synthetic(10000, 21);
  double pos = 0;
  for (const auto& s : ds.samples) pos += s.label;
  EXPECT_GE(pos / 1e4, 0.08);
  EXPECT_LE(pos / 1e4, 0.12);
}

TEST(Synthetic, ZeroArCoefficientGivesUncorrelatedSteps) {
  // Patient offsets and the severity drift are shared across hours by design;
  // they are switched off to isolate the temporal process.
  GeneratorConfig cfg;
  cfg.ar_coefficient = 0.0;
  cfg.patient_offset_sd = 0.0;
  cfg.severity_drift = 0.0;
  const auto ds = generate_synthetic(10000, 5, cfg);
  for (Eigen::Index d = 0; d < 6; ++d) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, n = 0;
    for (const auto& s : ds.samples) {
      for (Eigen::Index t = 1; t < s.hours(); ++t) {
        if (s.missing(t - 1, d) || s.missing(t, d)) continue;
        const double x = s.values(t - 1, d), y = s.values(t, d);
        sx += x, sy += y, sxx += x * x, syy += y * y, sxy += x * y, n += 1;
      }
    }
    const double cov = sxy / n - sx / n * sy / n;
    const double r = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
    EXPECT_GE(r, -0.05) << d;
    EXPECT_LE(r, 0.05) << d;
  }
}

TEST(Synthetic, DefaultArProcessIsAutocorrelated) {
  const auto ds = generate_synthetic(2000, 5);
  double num = 0, den = 0;
  for (const auto& s : ds.samples) {
    const double mu = 80.0;
    for (Eigen::Index t = 1; t < s.hours(); ++t) {
      if (s.missing(t - 1, 0) || s.missing(t, 0)) continue;
      num += (s.values(t - 1, 0) - mu) * (s.values(t, 0) - mu);
      den += (s.values(t, 0) - mu) * (s.values(t, 0) - mu);
    }
  }
  EXPECT_GT(num / den, 0.5);
}

TEST(Synthetic, InvalidConfigIsConfigError) {
  GeneratorConfig cfg;
  cfg.prevalence = 1.5;
  EXPECT_THROW(generate_synthetic(10, 1, cfg), ConfigError);
  EXPECT_THROW(generate_synthetic(0, 1), ConfigError);
  cfg = {};
  cfg.ar_coefficient = 1.0;
  EXPECT_THROW(generate_synthetic(10, 1, cfg), ConfigError);
}

struct CsvFixture : ::testing::Test {
  fs::path dir = temp_dir("csv");
  CsvSchema schema;
  void SetUp() override {
    schema.measurements = dir / "m.csv";
    schema.statics = dir / "s.csv";
    schema.labels = dir / "l.csv";
    schema.variables = {"heart_rate", "spo2"};
    schema.hours = 3;
    write_file(schema.statics, "patient_id,age,sex,height,weight\na,50,1,170,70\nb,60,0,160,60\n");
    write_file(schema.labels, "patient_id,label\na,0\nb,1\n");
  }
};

TEST_F(CsvFixture, AbsentRowsAndEmptyValuesAreMissing) {
  write_file(schema.measurements,
             "patient_id,hour,variable,value\na,0,heart_rate,80\na,1,heart_rate,\nb,2,spo2,97.5\n");
  const auto ds = ingest_csv(schema);
  ASSERT_EQ(ds.samples.size(), 2u);
  const auto& a = ds.samples[0];
  EXPECT_FALSE(a.missing(0, 0));
  EXPECT_EQ(a.values(0, 0), 80.0);
  EXPECT_TRUE(a.missing(1, 0));
  EXPECT_TRUE(std::isnan(a.values(1, 0)));
  EXPECT_EQ(a.missing.count(), 5);
  EXPECT_EQ(ds.samples[1].values(2, 1), 97.5);
  EXPECT_EQ(ds.samples[1].label, 1);
}

TEST_F(CsvFixture, DuplicateKeyIsNamed) {
  write_file(schema.measurements, "patient_id,hour,variable,value\na,0,spo2,90\na,0,spo2,91\n");
  try {
    ingest_csv(schema);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(a,0,spo2)"), std::string::npos) << e.what();
  }
}

TEST_F(CsvFixture, UnknownVariableIsSchemaError) {
  write_file(schema.measurements, "patient_id,hour,variable,value\na,0,lactate,2\n");
  try {
    ingest_csv(schema);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("schema error"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("lactate"), std::string::npos);
  }
}

TEST_F(CsvFixture, MalformedRowReportsLineNumber) {
  write_file(schema.measurements, "patient_id,hour,variable,value\na,0,spo2,90\na,1,spo2,abc\n");
  try {
    ingest_csv(schema);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(CsvRoundTrip, ExportThenIngestIsIdentical) {
  const auto dir = temp_dir("csv_roundtrip");
  const auto ds = generate_synthetic(40, 3);
  CsvSchema schema;
  schema.measurements = dir / "m.csv";
  schema.statics = dir / "s.csv";
  schema.labels = dir / "l.csv";
  export_csv(ds, schema);
  EXPECT_TRUE(same_dataset(ingest_csv(schema), ds));
}

TEST(DatasetCache, RoundTripAndMagic) {
  const auto dir = temp_dir("cache");
  const auto ds = generate_synthetic(20, 4);
  save_dataset(dir / "d.bin", ds);
  EXPECT_TRUE(same_dataset(load_dataset(dir / "d.bin"), ds));
  std::ifstream is(dir / "d.bin", std::ios::binary);
  std::string magic(kDatasetMagic.size(), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  EXPECT_EQ(magic, kDatasetMagic);
  write_file(dir / "bad.bin", "garbage");
  EXPECT_THROW(load_dataset(dir / "bad.bin"), DataError);
}

TEST(DatasetValidation, StaleValueAtMissingCellIsRejected) {
  auto s = full_sample("x");
  s.missing(2, 3) = true;
  EXPECT_THROW(validate_sample(s), DataError);
  s.values(2, 3) = kMissing;
  EXPECT_NO_THROW(validate_sample(s));
}

Dataset cohort_of(std::vector<TimeSeriesSample> samples) {
  Dataset ds;
  ds.variables.assign(kVitalNames.begin(), kVitalNames.end());
  ds.samples = std::move(samples);
  return ds;
}

TEST(Cohort, ThirteenHourGapExcluded) {
  auto gap = full_sample("gap");
  gap.missing.block(5, 0, 13, 1).setConstant(true);
  gap.values.block(5, 0, 13, 1).setConstant(kMissing);
  auto ok = full_sample("ok");
  ok.missing.block(5, 0, 12, 1).setConstant(true);
  ok.values.block(5, 0, 12, 1).setConstant(kMissing);
  ExclusionReport report;
  const auto out = apply_cohort_filters(cohort_of({gap, ok}), {}, report);
  ASSERT_EQ(out.samples.size(), 1u);
  EXPECT_EQ(out.samples[0].patient_id, "ok");
  for (const auto& r : report.rules) {
    EXPECT_EQ(r.removed, r.rule == "contiguous_missingness" ? 1u : 0u) << r.rule;
  }
}

TEST(Cohort, EachRuleExcludesItsCase) {
  auto minor = full_sample("minor");
  minor.statics.age = 17;
  auto short_stay = full_sample("short");
  short_stay.stay.los_hours = 29.5;
  auto early = full_sample("early");
  early.stay.death_hour = 20;
  auto negative = full_sample("neg");
  negative.stay.end_hour = -1;
  auto sparse = full_sample("sparse", 24, 1);
  sparse.values = Matrix::Constant(24, 1, kMissing);
  sparse.missing = Mask::Constant(24, 1, true);
  for (int t : {0, 4, 8}) {
    sparse.missing(t, 0) = false;
    sparse.values(t, 0) = 1.0;
  }
  CohortFilterConfig cfg;
  cfg.contiguous_missingness = false;
  for (auto* s : {&minor, &short_stay, &early, &negative}) {
    ExclusionReport report;
    EXPECT_TRUE(apply_cohort_filters(cohort_of({*s}), cfg, report).samples.empty()) << s->patient_id;
  }
  Dataset one_var;
  one_var.variables = {"heart_rate"};
  one_var.samples = {sparse};
  ExclusionReport report;
  EXPECT_TRUE(apply_cohort_filters(one_var, cfg, report).samples.empty());
}

TEST(Cohort, RuleOrderAttributesFirstMatch) {
  auto both = full_sample("both");
  both.statics.age = 10;
  both.stay.los_hours = 5;
  ExclusionReport report;
  apply_cohort_filters(cohort_of({both}), {}, report);
  for (const auto& r : report.rules) EXPECT_EQ(r.removed, r.rule == "length_of_stay" ? 1u : 0u) << r.rule;
  EXPECT_EQ(report.input_patients, 1u);
  EXPECT_EQ(report.retained_patients, 0u);
}

TEST(Cohort, AllRulesDisabledLeavesDatasetUnchanged) {
  const auto ds = generate_synthetic(60, 8);
  auto weird = ds;
  weird.samples[0].statics.age = 3;
  weird.samples[1].stay.los_hours = 1;
  ExclusionReport report;
  EXPECT_TRUE(same_dataset(apply_cohort_filters(weird, CohortFilterConfig::none(), report), weird));
}

TEST(Cohort, MissingMetadataSkipsRuleWithWarning) {
  auto s = full_sample("nolos");
  s.stay.los_hours.reset();
  ExclusionReport report;
  const auto out = apply_cohort_filters(cohort_of({s}), {}, report);
  EXPECT_EQ(out.samples.size(), 1u);
  bool warned = false;
  for (const auto& r : report.rules) {
    if (r.rule == "length_of_stay") {
      EXPECT_EQ(r.skipped_for_missing_metadata, 1u);
      warned = !r.warning.empty();
    }
  }
  EXPECT_TRUE(warned);
  EXPECT_TRUE(report.to_json().contains("rules"));
}

TEST(Split, HundredPatientsGiveFortyTenFifty) {
  const auto split = split_and_standardize(generate_synthetic(100, 2), 7);
  EXPECT_EQ(split.train.size(), 40u);
  EXPECT_EQ(split.val.size(), 10u);
  EXPECT_EQ(split.test.size(), 50u);
}

TEST(Split, DisjointAndDeterministic) {
  const auto ds = generate_synthetic(300, 2);
  const auto a = split_and_standardize(ds, 7), b = split_and_standardize(ds, 7);
  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& s : *part) EXPECT_TRUE(seen.insert(s.patient_id).second) << s.patient_id;
  }
  EXPECT_EQ(seen.size(), 300u);
  EXPECT_EQ(a.hash(), b.hash());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].patient_id, b.train[i].patient_id);
  EXPECT_NE(split_and_standardize(ds, 8).hash(), a.hash());
}

TEST(Split, TrainingCellsStandardized) {
  const auto split = split_and_standardize(generate_synthetic(500, 3), 1);
  for (Eigen::Index d = 0; d < 6; ++d) {
    double sum = 0, sq = 0, n = 0;
    for (const auto& s : split.train) {
      for (Eigen::Index t = 0; t < s.hours(); ++t) {
        if (!s.missing(t, d)) sum += s.values(t, d), sq += s.values(t, d) * s.values(t, d), n += 1;
      }
    }
    const double mu = sum / n;
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_NEAR(std::sqrt(sq / n - mu * mu), 1.0, 1e-6);
  }
}

TEST(Split, StatisticsComeFromTrainingOnly) {
  const auto ds = generate_synthetic(200, 3);
  const auto split = split_and_standardize(ds, 1);
  // Recompute from the raw training patients.
  std::set<std::string> train_ids;
  for (const auto& s : split.train) train_ids.insert(s.patient_id);
  std::vector<TimeSeriesSample> raw_train;
  for (const auto& s : ds.samples)
    if (train_ids.count(s.patient_id)) raw_train.push_back(s);
  const auto st = fit_standardization(raw_train, 6);
  EXPECT_TRUE(st.mean.isApprox(split.standardization.mean, 1e-14));
  EXPECT_TRUE(st.std.isApprox(split.standardization.std, 1e-14));
  // Sex is never standardized.
  for (const auto& s : split.test) EXPECT_TRUE(s.statics.sex == 0.0 || s.statics.sex == 1.0);
}

TEST(Split, ZeroVarianceClampedWithWarning) {
  std::vector<TimeSeriesSample> train = {full_sample("a"), full_sample("b")};
  const auto st = fit_standardization(train, 6);
  EXPECT_EQ(st.std(0), 1.0);
  EXPECT_FALSE(st.warnings.empty());
}

}  // namespace
}  // namespace selim::data

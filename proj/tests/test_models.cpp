#include "support/gradcheck.hpp"

#include "selim/data/split.hpp"
#include "selim/data/synthetic.hpp"
#include "selim/models/imputer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace selim::models {
namespace {

ModelConfig small_config(Arch arch = Arch::Saits) {
  ModelConfig c;
  c.arch = arch;
  c.n_layers = 1;
  c.d_model = 8;
  c.d_inner = 8;
  c.n_heads = 2;
  c.epochs = 5;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

/// AR-correlated standardized data restricted to the first D vitals.
data::DatasetSplit small_split(std::size_t n, Eigen::Index T, Eigen::Index D, std::uint64_t seed = 1) {
  data::GeneratorConfig g;
  g.hours = T;
  g.block_probability = 0.0;
  auto ds = data::generate_synthetic(n, seed, g);
  ds.variables.resize(static_cast<std::size_t>(D));
  for (auto& s : ds.samples) {
    s.values = Matrix(s.values.leftCols(D));
    s.missing = Mask(s.missing.leftCols(D));
  }
  return data::split_and_standardize(ds, seed);
}

missing::MechanismConfig mcar(std::uint64_t seed = 11) {
  missing::MechanismConfig m;
  m.kind = missing::Mechanism::MCAR;
  m.seed = seed;
  return m;
}

TEST(Forward, OutputShapeMatchesInput) {
  for (auto arch : {Arch::Saits, Arch::Transformer}) {
    ImputerModel model(small_config(arch), 24, 6);
    const Matrix x = Matrix::Zero(24, 6);
    const Mask m = Mask::Constant(24, 6, false);
    const Matrix y = model.predict(x, m, ad::DropoutMode::EvalDeterministic, 0);
    EXPECT_EQ(y.rows(), 24);
    EXPECT_EQ(y.cols(), 6);
  }
}

TEST(Forward, DeterministicModeIsBitExact) {
  ImputerModel model(small_config(), 24, 6);
  const Matrix x = Matrix::Zero(24, 6);
  const Mask m = Mask::Constant(24, 6, false);
  EXPECT_EQ(model.predict(x, m, ad::DropoutMode::EvalDeterministic, 1),
            model.predict(x, m, ad::DropoutMode::EvalDeterministic, 2));
}

TEST(Forward, StochasticModeDependsOnSeed) {
  ImputerModel model(small_config(), 24, 6);
  Rng rng(5);
  Matrix x(24, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Mask m = Mask::Constant(24, 6, false);
  const Matrix a = model.predict(x, m, ad::DropoutMode::EvalStochastic, 1);
  const Matrix b = model.predict(x, m, ad::DropoutMode::EvalStochastic, 2);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a, model.predict(x, m, ad::DropoutMode::EvalStochastic, 1));
}

TEST(Forward, MissingCellsAreZeroFilled) {
  ImputerModel model(small_config(), 6, 3);
  Matrix x = Matrix::Zero(6, 3);
  Mask m = Mask::Constant(6, 3, false);
  m(2, 1) = true;
  Matrix with_nan = x;
  with_nan(2, 1) = kMissing;
  EXPECT_EQ(model.predict(with_nan, m, ad::DropoutMode::EvalDeterministic, 0),
            model.predict(x, m, ad::DropoutMode::EvalDeterministic, 0));
}

TEST(Forward, ShapeMismatchIsContractError) {
  ImputerModel model(small_config(), 24, 6);
  EXPECT_THROW(model.predict(Matrix::Zero(24, 5), Mask::Constant(24, 5, false), ad::DropoutMode::EvalDeterministic, 0),
               ContractError);
}

TEST(Structure, DropoutFollowsEveryHiddenLinearLayer) {
  for (auto arch : {Arch::Saits, Arch::Transformer}) {
    auto cfg = small_config(arch);
    cfg.n_layers = 2;
    ImputerModel model(cfg, 6, 3);
    const auto split = small_split(10, 6, 3);
    const auto corrupted = corrupt_split(split.train, mcar(), 1);
    const auto batch = stack(std::span<const missing::CorruptedSample>(corrupted));
    ad::Graph g;
    ad::DropoutState st(0.1, ad::DropoutMode::TrainStochastic, 1);
    model.forward(g, batch, st, false);
    std::size_t hidden = 0, heads = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& n = g.node(i);
      if (n.label != "hidden" && n.label != "head") continue;
      bool dropped = false;
      for (std::size_t j = i + 1; j < g.size(); ++j) {
        const auto& c = g.node(j);
        if (c.kind == "dropout" && c.parents.size() == 1 && c.parents[0] == i) dropped = true;
      }
      if (n.label == "hidden") {
        ++hidden;
        EXPECT_TRUE(dropped) << "hidden node " << i << " (" << n.kind << ")";
      } else {
        ++heads;
        EXPECT_FALSE(dropped) << "output head " << i;
      }
    }
    // embedding + per layer (qkv, attention out, ffn1, ffn2) per encoder
    const std::size_t encoders = arch == Arch::Saits ? 2 : 1;
    EXPECT_EQ(hidden, encoders * (1 + 4 * 2));
    EXPECT_EQ(heads, arch == Arch::Saits ? 3u : 1u);
  }
}

TEST(Loss, PerfectReconstructionIsZero) {
  Rng rng(1);
  Matrix x(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Mask m_obs = Mask::Constant(6, 3, false), m_cor = m_obs;
  m_cor(1, 1) = m_cor(4, 2) = true;
  const std::vector<Matrix> stages = {x, x, x};
  EXPECT_EQ(saits_loss(stages, x, x, m_obs, m_cor), 0.0);
}

TEST(Loss, CombinedOffByOneOnMaskedCells) {
  const Matrix x = Matrix::Constant(6, 3, 0.5);
  Mask m_obs = Mask::Constant(6, 3, false), m_cor = m_obs;
  m_obs(0, 0) = m_cor(0, 0) = true;  // genuinely missing, ignored
  Matrix x_obs = x;
  x_obs(0, 0) = kMissing;
  m_cor(1, 1) = m_cor(2, 2) = m_cor(5, 0) = true;  // k = 3 synthetic cells
  Matrix combined = x;
  combined(1, 1) += 1.0;
  combined(2, 2) += 1.0;
  combined(5, 0) += 1.0;
  const std::vector<Matrix> stages = {x, x, combined};
  EXPECT_DOUBLE_EQ(saits_loss(stages, combined, x_obs, m_obs, m_cor), 1.0);
}

TEST(Loss, SingleStageOrtAveragesOverThatStage) {
  const Matrix x = Matrix::Zero(4, 2);
  Mask m = Mask::Constant(4, 2, false), m_cor = m;
  m_cor(0, 0) = true;
  Matrix pred = x;
  pred(3, 1) = 0.7;  // observed cell off by 0.7, 7 observed cells
  const std::vector<Matrix> stages = {pred};
  EXPECT_DOUBLE_EQ(saits_loss(stages, pred, x, m, m_cor), 0.7 / 7.0);
}

TEST(Loss, NoSyntheticCellsContributesZeroMit) {
  const Matrix x = Matrix::Ones(4, 2);
  const Mask m = Mask::Constant(4, 2, false);
  const std::vector<Matrix> stages = {x};
  EXPECT_EQ(saits_loss(stages, x, x, m, m), 0.0);
}

TEST(Loss, GraphLossMatchesValueForm) {
  ImputerModel model(small_config(), 6, 3);
  const auto split = small_split(10, 6, 3);
  const auto corrupted = corrupt_split(split.train, mcar(), 1);
  const std::span<const missing::CorruptedSample> one(&corrupted[0], 1);
  const auto batch = stack(one);
  ad::Graph g;
  ad::DropoutState st(0.1, ad::DropoutMode::EvalDeterministic, 0);
  const auto out = model.forward(g, batch, st, false);
  const auto terms = imputation_loss(g, out, batch);
  std::vector<Matrix> stages;
  for (const auto& s : out.stages) stages.push_back(s.value());
  EXPECT_NEAR(terms.total.value()(0, 0),
              saits_loss(stages, out.combined.value(), corrupted[0].target, corrupted[0].m_obs, corrupted[0].m_cor),
              1e-12);
}

TEST(Loss, PermutationEquivariantOverBatch) {
  ImputerModel model(small_config(), 6, 3);
  const auto split = small_split(20, 6, 3);
  auto corrupted = corrupt_split(split.train, mcar(), 1);
  auto loss_of = [&](const std::vector<missing::CorruptedSample>& cs) {
    const auto batch = stack(std::span<const missing::CorruptedSample>(cs));
    ad::Graph g;
    ad::DropoutState st(0.1, ad::DropoutMode::EvalDeterministic, 0);
    return imputation_loss(g, model.forward(g, batch, st, false), batch).total.value()(0, 0);
  };
  const double a = loss_of(corrupted);
  std::reverse(corrupted.begin(), corrupted.end());
  EXPECT_NEAR(loss_of(corrupted), a, 1e-12);
}

TEST(Gradients, WholeModelMatchesFiniteDifferences) {
  auto cfg = small_config();
  cfg.d_model = 4;
  cfg.d_inner = 4;
  ImputerModel model(cfg, 6, 2);
  const auto split = small_split(10, 6, 2);
  const auto corrupted = corrupt_split(split.train, mcar(), 1);
  const auto batch = stack(std::span<const missing::CorruptedSample>(corrupted.data(), 2));
  // Check a handful of parameters end to end through the MAE loss.
  auto& params = model.parameters();
  std::vector<ad::Parameter*> picked;
  for (auto& p : params) {
    if (p.name.find("qkv.w") != std::string::npos || p.name.find("gate.w") != std::string::npos ||
        p.name.find("ff1.w") != std::string::npos) {
      picked.push_back(&p);
    }
  }
  ASSERT_FALSE(picked.empty());
  auto loss_value = [&] {
    ad::Graph g;
    ad::DropoutState st(0.0, ad::DropoutMode::EvalDeterministic, 0);
    return imputation_loss(g, model.forward(g, batch, st, true), batch).total.value()(0, 0);
  };
  for (auto& p : params) p.zero_grad();
  {
    ad::Graph g;
    ad::DropoutState st(0.0, ad::DropoutMode::EvalDeterministic, 0);
    g.backward(imputation_loss(g, model.forward(g, batch, st, true), batch).total);
  }
  double worst = 0.0;
  for (auto* p : picked) {
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p->value.size(), 6); ++i) {
      double& w = p->value.data()[i];
      const double w0 = w;
      w = w0 + 1e-5;
      const double fp = loss_value();
      w = w0 - 1e-5;
      const double fm = loss_value();
      w = w0;
      const double num = (fp - fm) / 2e-5, ana = p->grad.data()[i];
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
    }
  }
  // MAE has kinks; a kink within h of a sample point would show as a large
  // error, which the random data avoids with overwhelming probability.
  EXPECT_LT(worst, 1e-4);
}

TEST(Training, LearnsOnTinyCorrelatedData) {
  // 80 patients give 32 training samples at the 40% split.
  const auto split = small_split(80, 8, 3, 4);
  ASSERT_EQ(split.train.size(), 32u);
  auto cfg = small_config();
  cfg.d_model = 16;
  cfg.d_inner = 16;
  cfg.epochs = 30;
  cfg.patience = 30;
  cfg.lr = 0.005;
  ImputerModel init(cfg, 8, 3);
  const auto fixed = corrupt_split(split.train, mcar(), 0x77);
  const double before = masked_mae(init, fixed);
  const auto trained = train(cfg, split.train, split.val, mcar());
  const double after = masked_mae(trained, fixed);
  EXPECT_LE(after, 0.8 * before) << before << " -> " << after;
}

TEST(Training, ZeroEpochsReturnsInitialization) {
  const auto split = small_split(30, 6, 3);
  auto cfg = small_config();
  cfg.epochs = 0;
  const ImputerModel init(cfg, 6, 3);
  const auto trained = train(cfg, split.train, split.val, mcar());
  ASSERT_EQ(trained.parameters().size(), init.parameters().size());
  for (std::size_t i = 0; i < init.parameters().size(); ++i) {
    EXPECT_EQ(trained.parameters()[i].value, init.parameters()[i].value);
  }
  EXPECT_TRUE(trained.history.epochs.empty());
}

TEST(Training, IdenticalSeedsGiveIdenticalHistory) {
  const auto split = small_split(40, 6, 3);
  const auto a = train(small_config(), split.train, split.val, mcar());
  const auto b = train(small_config(), split.train, split.val, mcar());
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    EXPECT_EQ(a.history.epochs[e].train_loss, b.history.epochs[e].train_loss);
    EXPECT_EQ(a.history.epochs[e].val_mae, b.history.epochs[e].val_mae);
  }
  EXPECT_EQ(a.id(), b.id());
}

TEST(Training, ReturnsValidationBestSnapshot) {
  const auto split = small_split(60, 6, 3);
  auto cfg = small_config();
  cfg.epochs = 8;
  cfg.lr = 0.005;
  cfg.scheduler = ad::Schedule::Cosine;
  const auto model = train(cfg, split.train, split.val, mcar());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : model.history.epochs) best = std::min(best, e.val_mae);
  EXPECT_EQ(model.history.best_val_mae, best);
  const auto val = corrupt_split(split.val, mcar(), 0x7A1);
  EXPECT_DOUBLE_EQ(masked_mae(model, val), best);
}

TEST(Training, EarlyStoppingHonoursPatience) {
  const auto split = small_split(40, 6, 3);
  auto cfg = small_config();
  cfg.epochs = 200;
  cfg.patience = 2;
  cfg.lr = 0.005;
  const auto model = train(cfg, split.train, split.val, mcar());
  const auto n = static_cast<int>(model.history.epochs.size());
  if (model.history.stopped_early) {
    EXPECT_EQ(n - 1 - model.history.best_epoch, cfg.patience);
  }
  EXPECT_LT(n, 200);
}

TEST(Training, DivergenceAbortsWithConfig) {
  const auto split = small_split(20, 6, 3);
  auto cfg = small_config();
  cfg.lr = 1e300;
  try {
    train(cfg, split.train, split.val, mcar());
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("d_model"), std::string::npos) << e.what();
  }
}

TEST(Config, ValidationAndJson) {
  auto c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_config();
  c.scheduler = ad::Schedule::Cosine;
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  EXPECT_THROW(parse_arch("lstm"), ConfigError);
}

TEST(Checkpoint, SaveLoadReproducesPredictions) {
  const auto split = small_split(30, 6, 3);
  const auto model = train(small_config(), split.train, split.val, mcar());
  const auto dir = std::filesystem::temp_directory_path();
  model.save(dir / "selim_model.ckpt", dir / "selim_model.json");
  const auto loaded = ImputerModel::load(dir / "selim_model.ckpt", dir / "selim_model.json");
  EXPECT_EQ(loaded.id(), model.id());
  const auto& s = split.test[0];
  EXPECT_EQ(loaded.predict(s.values, s.missing, ad::DropoutMode::EvalStochastic, 9),
            model.predict(s.values, s.missing, ad::DropoutMode::EvalStochastic, 9));
}

TEST(PositionalEncoding, SinusoidalValues) {
  const Matrix pe = positional_encoding(4, 6);
  EXPECT_DOUBLE_EQ(pe(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe(1, 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe(2, 2), std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0)), 1e-15);
}

}  // namespace
}  // namespace selim::models

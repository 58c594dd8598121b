#include "selim/models/imputer.hpp"

#include "selim/log.hpp"
#include "selim/tensor/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace selim::models {

Arch parse_arch(const std::string& s) {
  if (s == "transformer" || s == "Transformer" || s == "attention") return Arch::Transformer;
  if (s == "saits" || s == "SAITS") return Arch::Saits;
  throw ConfigError("unknown architecture '" + s + "'");
}

std::string to_string(Arch a) { return a == Arch::Saits ? "saits" : "transformer"; }

nlohmann::json ModelConfig::to_json() const {
  return {{"arch", to_string(arch)},       {"n_layers", n_layers},   {"d_model", d_model},
          {"d_inner", d_inner},            {"n_heads", n_heads},     {"dropout_rate", dropout_rate},
          {"lr", lr},                      {"scheduler", ad::to_string(scheduler)},
          {"epochs", epochs},              {"batch_size", batch_size}, {"patience", patience},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

ModelConfig ModelConfig::from_json(const nlohmann::json& j, ModelConfig c) {
  if (j.contains("arch")) c.arch = parse_arch(j.at("arch").get<std::string>());
  if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<int>();
  if (j.contains("d_model")) c.d_model = j.at("d_model").get<int>();
  if (j.contains("d_inner")) c.d_inner = j.at("d_inner").get<int>();
  if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<int>();
  if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("scheduler")) {
    c.scheduler = j.at("scheduler").is_null() ? ad::Schedule::None
                                              : ad::parse_schedule(j.at("scheduler").get<std::string>());
  }
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("patience")) c.patience = j.at("patience").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void validate(const ModelConfig& c) {
  if (c.n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (c.d_model < 1 || c.d_inner < 1 || c.n_heads < 1) throw ConfigError("model widths must be positive");
  if (c.d_model % c.n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(c.d_model) + " not divisible by n_heads " + std::to_string(c.n_heads));
  }
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0,1)");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.epochs < 0 || c.batch_size < 1 || c.patience < 1) throw ConfigError("epochs/batch_size/patience out of range");
}

Matrix positional_encoding(Eigen::Index hours, Eigen::Index d_model) {
  Matrix pe(hours, d_model);
  for (Eigen::Index t = 0; t < hours; ++t) {
    for (Eigen::Index i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      pe(t, i) = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

namespace {

double zero_if_nan(double v) { return std::isnan(v) ? 0.0 : v; }

template <typename Range>
StackedBatch stack_impl(const Range& samples, std::size_t n) {
  if (n == 0) throw ContractError("cannot stack an empty batch");
  const CorruptedSample& first = *samples[0];
  const Eigen::Index T = first.x_cor.rows(), D = first.x_cor.cols();
  StackedBatch b;
  b.block = T;
  const auto rows = static_cast<Eigen::Index>(n) * T;
  b.x.resize(rows, D);
  b.mask.resize(rows, D);
  b.target.resize(rows, D);
  b.synthetic.resize(rows, D);
  b.observed.resize(rows, D);
  for (std::size_t k = 0; k < n; ++k) {
    const CorruptedSample& s = *samples[k];
    if (s.x_cor.rows() != T || s.x_cor.cols() != D) {
      throw DimensionError("stack: sample " + std::to_string(k) + " has shape " + shape_str(s.x_cor.rows(), s.x_cor.cols()));
    }
    const auto off = static_cast<Eigen::Index>(k) * T;
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index d = 0; d < D; ++d) {
        const bool mcor = s.m_cor(t, d);
        b.x(off + t, d) = mcor ? 0.0 : zero_if_nan(s.x_cor(t, d));
        b.mask(off + t, d) = mcor ? 1.0 : 0.0;
        b.target(off + t, d) = zero_if_nan(s.target(t, d));
        b.synthetic(off + t, d) = s.synthetic(t, d) ? 1.0 : 0.0;
        b.observed(off + t, d) = mcor ? 0.0 : 1.0;
      }
    }
  }
  return b;
}

}  // namespace

StackedBatch stack(std::span<const CorruptedSample> samples) {
  std::vector<const CorruptedSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_impl(ptrs, ptrs.size());
}

StackedBatch stack(std::span<const CorruptedSample* const> samples) { return stack_impl(samples, samples.size()); }

ImputerModel::ImputerModel(const ModelConfig& config, Eigen::Index hours, Eigen::Index n_vars)
    : config_(config), hours_(hours), n_vars_(n_vars) {
  validate(config_);
  if (hours < 1 || n_vars < 1) throw ConfigError("model needs positive hours and variable count");
  Rng rng(mix_seed(config_.seed, 0x1417));
  const std::size_t n_enc = config_.arch == Arch::Saits ? 2 : 1;
  for (std::size_t e = 0; e < n_enc; ++e) encoders_.push_back(make_encoder("enc" + std::to_string(e), 2 * n_vars_, rng));
  if (config_.arch == Arch::Saits) {
    gate_w_ = add_param("gate.w", 3 * n_vars_, n_vars_, rng, 'x');
    gate_b_ = add_param("gate.b", 1, n_vars_, rng, '0');
  }
  positional_ = positional_encoding(hours_, config_.d_model);
}

std::size_t ImputerModel::add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng, char init) {
  Matrix v(rows, cols);
  if (init == 'x') {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-a, a);
  } else if (init == '1') {
    v.setOnes();
  } else {
    v.setZero();
  }
  params_.emplace_back(name, std::move(v));
  return params_.size() - 1;
}

ImputerModel::Encoder ImputerModel::make_encoder(const std::string& prefix, Eigen::Index in_width, Rng& rng) {
  const Eigen::Index d = config_.d_model, f = config_.d_inner;
  Encoder enc;
  enc.emb_w = add_param(prefix + ".embed.w", in_width, d, rng, 'x');
  enc.emb_b = add_param(prefix + ".embed.b", 1, d, rng, '0');
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Layer L;
    L.qkv_w = add_param(p + ".qkv.w", d, 3 * d, rng, 'x');
    L.qkv_b = add_param(p + ".qkv.b", 1, 3 * d, rng, '0');
    L.out_w = add_param(p + ".attn_out.w", d, d, rng, 'x');
    L.out_b = add_param(p + ".attn_out.b", 1, d, rng, '0');
    L.ln1_g = add_param(p + ".ln1.g", 1, d, rng, '1');
    L.ln1_b = add_param(p + ".ln1.b", 1, d, rng, '0');
    L.ff1_w = add_param(p + ".ff1.w", d, f, rng, 'x');
    L.ff1_b = add_param(p + ".ff1.b", 1, f, rng, '0');
    L.ff2_w = add_param(p + ".ff2.w", f, d, rng, 'x');
    L.ff2_b = add_param(p + ".ff2.b", 1, d, rng, '0');
    L.ln2_g = add_param(p + ".ln2.g", 1, d, rng, '1');
    L.ln2_b = add_param(p + ".ln2.b", 1, d, rng, '0');
    enc.layers.push_back(L);
  }
  enc.head_w = add_param(prefix + ".head.w", d, n_vars_, rng, 'x');
  enc.head_b = add_param(prefix + ".head.b", 1, n_vars_, rng, '0');
  return enc;
}

ad::Var ImputerModel::run_encoder(ad::Graph& g, const Encoder& enc, ad::Var input, Eigen::Index block,
                                  ad::DropoutState& dropout, const std::vector<ad::Var>& p) const {
  using namespace ad;
  const Eigen::Index d = config_.d_model;
  const Eigen::Index dh = d / config_.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix pe(input.rows(), d);
  for (Eigen::Index k = 0; k < input.rows() / block; ++k) pe.middleRows(k * block, block) = positional_;

  Var emb = linear(input, p[enc.emb_w], p[enc.emb_b]);
  g.set_label(emb, "hidden");
  Var h = add(ad::dropout(emb, dropout), g.constant(std::move(pe)));

  for (const auto& L : enc.layers) {
    Var qkv = linear(h, p[L.qkv_w], p[L.qkv_b]);
    g.set_label(qkv, "hidden");
    qkv = ad::dropout(qkv, dropout);
    std::vector<Var> heads;
    for (int k = 0; k < config_.n_heads; ++k) {
      Var q = slice_cols(qkv, k * dh, dh);
      Var key = slice_cols(qkv, d + k * dh, dh);
      Var v = slice_cols(qkv, 2 * d + k * dh, dh);
      Var weights = softmax_rows(scale(block_matmul_nt(q, key, block), att_scale));
      heads.push_back(block_matmul(weights, v, block));
    }
    Var att = linear(heads.size() == 1 ? heads.front() : concat_cols(heads), p[L.out_w], p[L.out_b]);
    g.set_label(att, "hidden");
    h = layer_norm(add(h, ad::dropout(att, dropout)), p[L.ln1_g], p[L.ln1_b]);

    Var ff = linear(h, p[L.ff1_w], p[L.ff1_b]);
    g.set_label(ff, "hidden");
    ff = relu(ad::dropout(ff, dropout));
    Var ff2 = linear(ff, p[L.ff2_w], p[L.ff2_b]);
    g.set_label(ff2, "hidden");
    h = layer_norm(add(h, ad::dropout(ff2, dropout)), p[L.ln2_g], p[L.ln2_b]);
  }
  return h;
}

ForwardResult ImputerModel::forward(ad::Graph& g, const StackedBatch& batch, ad::DropoutState& dropout,
                                    bool track_gradients) {
  if (!track_gradients) return std::as_const(*this).forward(g, batch, dropout);
  std::vector<ad::Var> p;
  p.reserve(params_.size());
  for (auto& param : params_) p.push_back(g.parameter(param));
  return forward_with(g, batch, dropout, p);
}

ForwardResult ImputerModel::forward(ad::Graph& g, const StackedBatch& batch, ad::DropoutState& dropout) const {
  std::vector<ad::Var> p;
  p.reserve(params_.size());
  for (const auto& param : params_) p.push_back(g.constant(param.value));
  return forward_with(g, batch, dropout, p);
}

ForwardResult ImputerModel::forward_with(ad::Graph& g, const StackedBatch& batch, ad::DropoutState& dropout,
                                         const std::vector<ad::Var>& p) const {
  using namespace ad;
  if (batch.block != hours_ || batch.x.cols() != n_vars_ || batch.x.rows() % hours_ != 0) {
    throw ContractError("model expects samples of shape " + shape_str(hours_, n_vars_) + ", got block " +
                        std::to_string(batch.block) + " x " + std::to_string(batch.x.cols()));
  }
  Var x = g.constant(batch.x);
  Var m = g.constant(batch.mask);
  const Eigen::Index block = batch.block;

  ForwardResult out;
  Var h1 = run_encoder(g, encoders_[0], concat_cols({x, m}), block, dropout, p);
  Var est1 = linear(h1, p[encoders_[0].head_w], p[encoders_[0].head_b]);
  g.set_label(est1, "head");
  out.stages.push_back(est1);
  if (config_.arch == Arch::Transformer) {
    out.combined = est1;
    return out;
  }

  // Second block sees observed values with the first estimate in the gaps.
  Var replaced = add(mul(m, est1), x);
  Var h2 = run_encoder(g, encoders_[1], concat_cols({replaced, m}), block, dropout, p);
  Var est2 = linear(h2, p[encoders_[1].head_w], p[encoders_[1].head_b]);
  g.set_label(est2, "head");
  Var gate_logits = linear(concat_cols({m, est1, est2}), p[gate_w_], p[gate_b_]);
  g.set_label(gate_logits, "head");
  Var gate = sigmoid(gate_logits);
  Var combined = add(est2, mul(gate, sub(est1, est2)));
  out.stages.push_back(est2);
  out.stages.push_back(combined);
  out.combined = combined;
  return out;
}

Matrix ImputerModel::predict(const Matrix& x_cor, const Mask& m_cor, ad::DropoutMode mode, std::uint64_t seed) const {
  require_same_shape(x_cor, m_cor, "predict");
  if (x_cor.rows() != hours_ || x_cor.cols() != n_vars_) {
    throw ContractError("predict: expected " + shape_str(hours_, n_vars_) + ", got " +
                        shape_str(x_cor.rows(), x_cor.cols()));
  }
  CorruptedSample c;
  c.x_cor = x_cor;
  c.target = x_cor;
  c.m_cor = m_cor;
  c.m_obs = m_cor;
  c.synthetic = Mask::Constant(m_cor.rows(), m_cor.cols(), false);
  const auto batch = stack(std::span<const CorruptedSample>(&c, 1));
  ad::Graph g;
  ad::DropoutState dropout(config_.dropout_rate, mode, seed);
  return forward(g, batch, dropout).combined.value();
}

std::vector<Matrix> ImputerModel::predict_batch(std::span<const CorruptedSample> samples, std::size_t batch_size) const {
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto n = std::min(batch_size, samples.size() - start);
    const auto batch = stack(samples.subspan(start, n));
    ad::Graph g;
    ad::DropoutState dropout(config_.dropout_rate, ad::DropoutMode::EvalDeterministic, 0);
    const Matrix& pred = forward(g, batch, dropout).combined.value();
    for (std::size_t k = 0; k < n; ++k) out.push_back(pred.middleRows(static_cast<Eigen::Index>(k) * hours_, hours_));
  }
  return out;
}

std::vector<Matrix> ImputerModel::snapshot() const {
  std::vector<Matrix> v;
  v.reserve(params_.size());
  for (const auto& p : params_) v.push_back(p.value);
  return v;
}

void ImputerModel::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t k = 0; k < values.size(); ++k) params_[k].value = values[k];
}

void ImputerModel::save(const std::filesystem::path& checkpoint, const std::filesystem::path& config_json) const {
  ad::save_checkpoint(checkpoint, params_);
  nlohmann::json j;
  j["config"] = config_.to_json();
  j["hours"] = hours_;
  j["n_vars"] = n_vars_;
  j["model_id"] = id();
  j["best_epoch"] = history.best_epoch;
  std::ofstream os(config_json);
  if (!os) throw DataError("cannot write " + config_json.string());
  os << j.dump(2) << '\n';
}

ImputerModel ImputerModel::load(const std::filesystem::path& checkpoint, const std::filesystem::path& config_json) {
  std::ifstream is(config_json);
  if (!is) throw DataError("cannot read " + config_json.string());
  const auto j = nlohmann::json::parse(is);
  ImputerModel model(ModelConfig::from_json(j.at("config")), j.at("hours").get<Eigen::Index>(),
                     j.at("n_vars").get<Eigen::Index>());
  ad::restore_parameters(model.params_, ad::load_checkpoint(checkpoint));
  return model;
}

std::string ImputerModel::id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::string cfg = config_.to_json().dump();
  feed(cfg.data(), cfg.size());
  for (const auto& p : params_) feed(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  return data::hash_hex(h);
}

namespace {

ad::Var masked_abs_mean(ad::Graph& g, ad::Var pred, const Matrix& target, const Matrix& mask, double count) {
  using namespace ad;
  return scale(sum(mul(ad::abs(sub(pred, g.constant(target))), g.constant(mask))), 1.0 / count);
}

}  // namespace

LossTerms imputation_loss(ad::Graph& g, const ForwardResult& out, const StackedBatch& batch) {
  using namespace ad;
  LossTerms terms;
  const double n_syn = batch.synthetic.sum();
  const double n_obs = batch.observed.sum();
  terms.masked_cells = static_cast<std::size_t>(n_syn);

  std::vector<Var> parts;
  if (n_syn > 0.0) {
    Var mit = masked_abs_mean(g, out.combined, batch.target, batch.synthetic, n_syn);
    terms.mit = mit.value()(0, 0);
    parts.push_back(mit);
  } else {
    log_warning("imputation loss: batch has no synthetically masked cells; MIT term is 0");
  }
  if (n_obs > 0.0) {
    Var ort = masked_abs_mean(g, out.stages[0], batch.target, batch.observed, n_obs);
    for (std::size_t k = 1; k < out.stages.size(); ++k) {
      ort = add(ort, masked_abs_mean(g, out.stages[k], batch.target, batch.observed, n_obs));
    }
    ort = scale(ort, 1.0 / static_cast<double>(out.stages.size()));
    terms.ort = ort.value()(0, 0);
    parts.push_back(ort);
  }
  if (parts.empty()) {
    terms.total = g.constant(Matrix::Zero(1, 1));
  } else {
    terms.total = parts.size() == 1 ? parts[0] : add(parts[0], parts[1]);
  }
  return terms;
}

double saits_loss(std::span<const Matrix> stages, const Matrix& combined, const Matrix& x_obs, const Mask& m_obs,
                  const Mask& m_cor) {
  require_same_shape(combined, x_obs, "saits_loss");
  require_same_shape(m_obs, m_cor, "saits_loss");
  if ((m_obs && !m_cor).any()) throw ContractError("saits_loss: M_cor must cover M_obs");
  auto mae = [&](const Matrix& pred, auto&& select) {
    double acc = 0.0, n = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      if (select(i)) {
        acc += std::abs(pred.data()[i] - x_obs.data()[i]);
        n += 1.0;
      }
    }
    return std::pair{acc, n};
  };
  const auto [mit_sum, mit_n] = mae(combined, [&](Eigen::Index i) { return m_cor.data()[i] && !m_obs.data()[i]; });
  double loss = 0.0;
  if (mit_n > 0.0) {
    loss += mit_sum / mit_n;
  } else {
    log_warning("saits_loss: no synthetically masked cells; MIT term is 0");
  }
  if (!stages.empty()) {
    double ort = 0.0;
    for (const auto& s : stages) {
      require_same_shape(s, x_obs, "saits_loss stage");
      const auto [o_sum, o_n] = mae(s, [&](Eigen::Index i) { return !m_cor.data()[i]; });
      if (o_n > 0.0) ort += o_sum / o_n;
    }
    loss += ort / static_cast<double>(stages.size());
  }
  return loss;
}

double masked_mae(const ImputerModel& model, std::span<const CorruptedSample> samples) {
  const auto preds = model.predict_batch(samples);
  double acc = 0.0, n = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    for (Eigen::Index i = 0; i < s.synthetic.size(); ++i) {
      if (s.synthetic.data()[i]) {
        acc += std::abs(preds[k].data()[i] - s.target.data()[i]);
        n += 1.0;
      }
    }
  }
  return n > 0.0 ? acc / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<CorruptedSample> corrupt_split(std::span<const TimeSeriesSample> split,
                                           const missing::MechanismConfig& mechanism, std::uint64_t stream) {
  const auto model = missing::MissingnessModel::fit(split, mechanism);
  std::vector<CorruptedSample> out;
  out.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) out.push_back(model.corrupt(split[i], mix_seed(mechanism.seed, stream, i)));
  return out;
}

void train(ImputerModel& model, std::span<const TimeSeriesSample> train_set, std::span<const TimeSeriesSample> val_set,
           const missing::MechanismConfig& mechanism) {
  const ModelConfig& cfg = model.config();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  if (cfg.epochs == 0) return;

  const auto train_mech = missing::MissingnessModel::fit(train_set, mechanism);
  const auto val_corrupted = corrupt_split(val_set, mechanism, 0x7A1);
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t n_batches = (n + bs - 1) / bs;

  ad::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.schedule = cfg.scheduler;
  adam_cfg.total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(n_batches);
  ad::Adam adam(adam_cfg);

  auto& history = model.history;
  history = TrainingHistory{};
  auto best = model.snapshot();
  int since_best = 0;

  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffler(mix_seed(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t mit_batches = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<CorruptedSample> batch;
      for (std::size_t k = b * bs; k < std::min(n, (b + 1) * bs); ++k) {
        const std::size_t idx = order[k];
        batch.push_back(train_mech.corrupt(train_set[idx], mix_seed(mechanism.seed, 0x7EA, static_cast<std::uint64_t>(epoch), idx)));
      }
      const auto stacked = stack(std::span<const CorruptedSample>(batch));
      for (auto& p : model.parameters()) p.zero_grad();
      try {
        ad::Graph g;
        ad::DropoutState dropout(cfg.dropout_rate, ad::DropoutMode::TrainStochastic,
                                 mix_seed(cfg.seed, 0xD0, static_cast<std::uint64_t>(epoch), b));
        const auto out = model.forward(g, stacked, dropout, true);
        const auto loss = imputation_loss(g, out, stacked);
        if (!std::isfinite(loss.total.value()(0, 0))) throw TrainingError("loss is not finite");
        g.backward(loss.total);
        adam.step(model.parameters());
        rec.train_loss += loss.total.value()(0, 0);
        if (loss.masked_cells > 0) {
          rec.train_mit += loss.mit;
          ++mit_batches;
        }
      } catch (const TrainingError& e) {
        throw TrainingError(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what() +
                            " [config " + cfg.to_json().dump() + "]");
      }
    }
    rec.train_loss /= static_cast<double>(n_batches);
    if (mit_batches > 0) rec.train_mit /= static_cast<double>(mit_batches);
    try {
      rec.val_mae = masked_mae(model, val_corrupted);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what() +
                          " [config " + cfg.to_json().dump() + "]");
    }
    history.epochs.push_back(rec);

    if (rec.val_mae < history.best_val_mae) {
      history.best_val_mae = rec.val_mae;
      history.best_epoch = epoch;
      best = model.snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }
  model.restore(best);
}

ImputerModel train(const ModelConfig& config, std::span<const TimeSeriesSample> train_set,
                   std::span<const TimeSeriesSample> val_set, const missing::MechanismConfig& mechanism) {
  if (train_set.empty()) throw ConfigError("training split is empty");
  ImputerModel model(config, train_set.front().hours(), train_set.front().variables());
  train(model, train_set, val_set, mechanism);
  return model;
}

}  // namespace selim::models

#include "selim/tensor/autograd.hpp"

#include <cmath>

namespace selim::ad {

DropoutState::DropoutState(double r, DropoutMode m, std::uint64_t seed) : rate(r), mode(m), rng(seed) {
  if (!(r >= 0.0 && r < 1.0)) {
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(r));
  }
}

Matrix dropout_multiplier(Eigen::Index rows, Eigen::Index cols, DropoutState& state) {
  const double keep_scale = 1.0 / (1.0 - state.rate);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = state.rng.uniform() < state.rate ? 0.0 : keep_scale;
  }
  return m;
}

Matrix dropout_apply(const Matrix& x, DropoutState& state) {
  if (!(state.rate >= 0.0 && state.rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0,1)");
  }
  if (!state.stochastic()) return x;
  return x.cwiseProduct(dropout_multiplier(x.rows(), x.cols(), state));
}

const Matrix& Var::value() const { return graph_->node(id_).value; }
const Matrix& Var::grad() const { return graph_->node(id_).grad; }

Var Graph::constant(Matrix value) {
  Node n;
  n.kind = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.kind = "parameter";
  n.label = p.name;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::emit(std::string_view kind, std::vector<std::size_t> parents, Matrix value,
                std::function<void(Graph&, const Node&)> backward) {
  for (Eigen::Index i = 0; i < value.size(); ++i) {
    if (!std::isfinite(value.data()[i])) {
      throw TrainingError(std::string("non-finite value produced by op '") + std::string(kind) + "'");
    }
  }
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (auto p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  n.parents = std::move(parents);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Graph::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

void Graph::backward(Var loss) {
  if (loss.value().rows() != 1 || loss.value().cols() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.value().rows(), loss.value().cols()));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].needs_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

namespace {

void check_same(Var a, Var b, const char* op) { require_same_shape(a.value(), b.value(), op); }

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.rows(), a.cols()) + " x " +
                         shape_str(b.rows(), b.cols()));
  }
  Graph& g = a.graph();
  Matrix out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return g.emit("matmul", {ia, ib}, std::move(out), [ia, ib](Graph& g, const Graph::Node& n) {
    if (g.needs_grad(ia)) g.accumulate_expr(ia, n.grad * g.node(ib).value.transpose());
    if (g.needs_grad(ib)) g.accumulate_expr(ib, g.node(ia).value.transpose() * n.grad);
  });
}

Var linear(Var x, Var weight, Var bias) {
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw DimensionError("linear: input " + shape_str(x.rows(), x.cols()) + ", weight " +
                         shape_str(weight.rows(), weight.cols()) + ", bias " +
                         shape_str(bias.rows(), bias.cols()));
  }
  Graph& g = x.graph();
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return g.emit("linear", {ix, iw, ib}, std::move(out), [ix, iw, ib](Graph& g, const Graph::Node& n) {
    if (g.needs_grad(ix)) g.accumulate_expr(ix, n.grad * g.node(iw).value.transpose());
    if (g.needs_grad(iw)) g.accumulate_expr(iw, g.node(ix).value.transpose() * n.grad);
    if (g.needs_grad(ib)) g.accumulate_expr(ib, n.grad.colwise().sum());
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Graph& g = a.graph();
  const auto ia = a.id(), ib = b.id();
  return g.emit("add", {ia, ib}, a.value() + b.value(), [ia, ib](Graph& g, const Graph::Node& n) {
    g.accumulate(ia, n.grad);
    g.accumulate(ib, n.grad);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + shape_str(row.rows(), row.cols()) + " vs " +
                         shape_str(a.rows(), a.cols()));
  }
  Graph& g = a.graph();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const auto ia = a.id(), ir = row.id();
  return g.emit("add_row", {ia, ir}, std::move(out), [ia, ir](Graph& g, const Graph::Node& n) {
    g.accumulate(ia, n.grad);
    if (g.needs_grad(ir)) g.accumulate_expr(ir, n.grad.colwise().sum());
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  Graph& g = a.graph();
  const auto ia = a.id(), ib = b.id();
  return g.emit("sub", {ia, ib}, a.value() - b.value(), [ia, ib](Graph& g, const Graph::Node& n) {
    g.accumulate(ia, n.grad);
    if (g.needs_grad(ib)) g.accumulate_expr(ib, -n.grad);
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  Graph& g = a.graph();
  const auto ia = a.id(), ib = b.id();
  return g.emit("mul", {ia, ib}, a.value().cwiseProduct(b.value()), [ia, ib](Graph& g, const Graph::Node& n) {
    if (g.needs_grad(ia)) g.accumulate_expr(ia, n.grad.cwiseProduct(g.node(ib).value));
    if (g.needs_grad(ib)) g.accumulate_expr(ib, n.grad.cwiseProduct(g.node(ia).value));
  });
}

Var scale(Var a, double s) {
  Graph& g = a.graph();
  const auto ia = a.id();
  return g.emit("scale", {ia}, a.value() * s, [ia, s](Graph& g, const Graph::Node& n) {
    g.accumulate_expr(ia, n.grad * s);
  });
}

Var relu(Var a) {
  Graph& g = a.graph();
  const auto ia = a.id();
  return g.emit("relu", {ia}, a.value().cwiseMax(0.0), [ia](Graph& g, const Graph::Node& n) {
    const Matrix& x = g.node(ia).value;
    g.accumulate_expr(ia, (x.array() > 0.0).select(n.grad.array(), 0.0).matrix());
  });
}

Var sigmoid(Var a) {
  Graph& g = a.graph();
  const auto ia = a.id();
  Matrix y = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return g.emit("sigmoid", {ia}, std::move(y), [ia](Graph& g, const Graph::Node& n) {
    g.accumulate_expr(ia, (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

Var abs(Var a) {
  Graph& g = a.graph();
  const auto ia = a.id();
  return g.emit("abs", {ia}, a.value().cwiseAbs(), [ia](Graph& g, const Graph::Node& n) {
    const Matrix& x = g.node(ia).value;
    g.accumulate_expr(ia, (n.grad.array() * x.array().sign()).matrix());
  });
}

Var softmax_rows(Var a) {
  Graph& g = a.graph();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const auto ia = a.id();
  return g.emit("softmax", {ia}, std::move(y), [ia](Graph& g, const Graph::Node& n) {
    const Matrix& y = n.value;
    const Vector dots = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix dx = n.grad;
    dx.colwise() -= dots;
    g.accumulate_expr(ia, dx.cwiseProduct(y));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be 1 x " + std::to_string(d));
  }
  Graph& g = x.graph();
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), d);
  Vector inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return g.emit("layer_norm", {ix, ig, ib}, std::move(y),
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, const Graph::Node& n) {
                  if (g.needs_grad(ig)) g.accumulate_expr(ig, n.grad.cwiseProduct(xhat).colwise().sum());
                  if (g.needs_grad(ib)) g.accumulate_expr(ib, n.grad.colwise().sum());
                  if (!g.needs_grad(ix)) return;
                  const Matrix dxhat = n.grad.array().rowwise() * g.node(ig).value.row(0).array();
                  const Vector mean_d = dxhat.rowwise().mean();
                  const Vector mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
                  Matrix dx = dxhat;
                  dx.colwise() -= mean_d;
                  dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
                  dx = (dx.array().colwise() * inv_std.array()).matrix();
                  g.accumulate_expr(ix, dx);
                });
}

Var dropout(Var x, DropoutState& state) {
  Graph& g = x.graph();
  const auto ix = x.id();
  if (!state.stochastic()) {
    return g.emit("dropout", {ix}, x.value(), [ix](Graph& g, const Graph::Node& n) { g.accumulate(ix, n.grad); });
  }
  Matrix mult = dropout_multiplier(x.rows(), x.cols(), state);
  Matrix out = x.value().cwiseProduct(mult);
  return g.emit("dropout", {ix}, std::move(out), [ix, mult = std::move(mult)](Graph& g, const Graph::Node& n) {
    g.accumulate_expr(ix, n.grad.cwiseProduct(mult));
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") outside " + std::to_string(a.cols()) + " columns");
  }
  Graph& g = a.graph();
  const auto ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return g.emit("slice_cols", {ia}, a.value().middleCols(start, count),
                [ia, start, count, rows, cols](Graph& g, const Graph::Node& n) {
                  Matrix full = Matrix::Zero(rows, cols);
                  full.middleCols(start, count) = n.grad;
                  g.accumulate(ia, full);
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Graph& g = parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  auto parents = ids;
  return g.emit("concat_cols", std::move(parents), std::move(out),
                [ids = std::move(ids), widths = std::move(widths)](Graph& g, const Graph::Node& n) {
                  Eigen::Index off = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (g.needs_grad(ids[k])) g.accumulate_expr(ids[k], n.grad.middleCols(off, widths[k]));
                    off += widths[k];
                  }
                });
}

namespace {

void check_blocks(Var a, Eigen::Index block, const char* op) {
  if (block <= 0 || a.rows() % block != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(a.rows()) +
                         " rows not divisible by block " + std::to_string(block));
  }
}

}  // namespace

Var block_matmul_nt(Var a, Var b, Eigen::Index block) {
  check_same(a, b, "block_matmul_nt");
  check_blocks(a, block, "block_matmul_nt");
  Graph& g = a.graph();
  const Eigen::Index nb = a.rows() / block;
  Matrix out(a.rows(), block);
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.middleRows(i * block, block).noalias() =
        a.value().middleRows(i * block, block) * b.value().middleRows(i * block, block).transpose();
  }
  const auto ia = a.id(), ib = b.id();
  return g.emit("block_matmul_nt", {ia, ib}, std::move(out), [ia, ib, block, nb](Graph& g, const Graph::Node& n) {
    const Matrix& av = g.node(ia).value;
    const Matrix& bv = g.node(ib).value;
    if (g.needs_grad(ia)) {
      Matrix da(av.rows(), av.cols());
      for (Eigen::Index i = 0; i < nb; ++i) {
        da.middleRows(i * block, block).noalias() =
            n.grad.middleRows(i * block, block) * bv.middleRows(i * block, block);
      }
      g.accumulate(ia, da);
    }
    if (g.needs_grad(ib)) {
      Matrix db(bv.rows(), bv.cols());
      for (Eigen::Index i = 0; i < nb; ++i) {
        db.middleRows(i * block, block).noalias() =
            n.grad.middleRows(i * block, block).transpose() * av.middleRows(i * block, block);
      }
      g.accumulate(ib, db);
    }
  });
}

Var block_matmul(Var p, Var v, Eigen::Index block) {
  if (p.cols() != block || p.rows() != v.rows()) {
    throw DimensionError("block_matmul: weights " + shape_str(p.rows(), p.cols()) + " vs values " +
                         shape_str(v.rows(), v.cols()));
  }
  check_blocks(p, block, "block_matmul");
  Graph& g = p.graph();
  const Eigen::Index nb = p.rows() / block;
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.middleRows(i * block, block).noalias() =
        p.value().middleRows(i * block, block) * v.value().middleRows(i * block, block);
  }
  const auto ip = p.id(), iv = v.id();
  return g.emit("block_matmul", {ip, iv}, std::move(out), [ip, iv, block, nb](Graph& g, const Graph::Node& n) {
    const Matrix& pv = g.node(ip).value;
    const Matrix& vv = g.node(iv).value;
    if (g.needs_grad(ip)) {
      Matrix dp(pv.rows(), pv.cols());
      for (Eigen::Index i = 0; i < nb; ++i) {
        dp.middleRows(i * block, block).noalias() =
            n.grad.middleRows(i * block, block) * vv.middleRows(i * block, block).transpose();
      }
      g.accumulate(ip, dp);
    }
    if (g.needs_grad(iv)) {
      Matrix dv(vv.rows(), vv.cols());
      for (Eigen::Index i = 0; i < nb; ++i) {
        dv.middleRows(i * block, block).noalias() =
            pv.middleRows(i * block, block).transpose() * n.grad.middleRows(i * block, block);
      }
      g.accumulate(iv, dv);
    }
  });
}

Var sum(Var a) {
  Graph& g = a.graph();
  const auto ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.emit("sum", {ia}, std::move(out), [ia, rows, cols](Graph& g, const Graph::Node& n) {
    g.accumulate_expr(ia, Matrix::Constant(rows, cols, n.grad(0, 0)));
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace selim::ad

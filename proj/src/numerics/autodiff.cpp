#include "jarvis/numerics/autodiff.hpp"

#include "jarvis/numerics/errors.hpp"

#include <cmath>
#include <numbers>

namespace jarvis {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  if (!p.frozen) {
    n.param = &p;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  const Tensor& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_string(lv));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += n.grad;
    } else if (n.backward) {
      const Tensor g = std::move(n.grad);
      n.backward(*this, g);
    }
    n.grad.resize(0, 0);
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av) + " x " + shape_string(bv));
  }
  Tensor out = av * bv;
  const std::size_t ia = a.id(), ib = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return t.record(std::move(out), rg, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Tape& t = *a.tape();
  Tensor out = a.value().transpose();
  const std::size_t ia = a.id();
  return t.record(std::move(out), a.requires_grad(),
                  [ia](Tape& tp, const Tensor& g) { tp.accumulate(ia, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor out = a.value().cwiseProduct(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  Tensor out = a.value() * s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, s](Tape& tp, const Tensor& g) { tp.accumulate(ia, g * s); });
}

Var add_bias(const Var& x, const Var& b) {
  Tape& t = same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.cols() != 1 || bv.rows() != xv.rows()) {
    throw DimensionError("add_bias: bias " + shape_string(bv) + " does not fit " + shape_string(xv));
  }
  Tensor out = xv.colwise() + bv.col(0);
  const std::size_t ix = x.id(), ib = b.id();
  return t.record(std::move(out), x.requires_grad() || b.requires_grad(), [ix, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.rowwise().sum());
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const Eigen::Index d = xv.rows();
  if (d == 0) throw DimensionError("layer_norm: normalized dimension is zero");
  if (gain.rows() != d || gain.cols() != 1 || bias.rows() != d || bias.cols() != 1) {
    throw DimensionError("layer_norm: gain/bias must be " + std::to_string(d) + "x1");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");

  const Eigen::RowVectorXd mean = xv.colwise().mean();
  Tensor centered = xv.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Tensor xhat = centered.array().rowwise() * inv_std.array();
  Tensor out = (xhat.array().colwise() * gain.value().col(0).array()).colwise() + bias.value().col(0).array();

  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return t.record(std::move(out), rg,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& tp, const Tensor& g) {
                    if (tp.requires_grad(ig)) tp.accumulate(ig, g.cwiseProduct(xhat).rowwise().sum());
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.rowwise().sum());
                    if (tp.requires_grad(ix)) {
                      const Tensor dxhat = g.array().colwise() * tp.value(ig).col(0).array();
                      const Eigen::RowVectorXd m1 = dxhat.colwise().mean();
                      const Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().mean();
                      Tensor dx = dxhat.rowwise() - m1;
                      dx -= (xhat.array().rowwise() * m2.array()).matrix();
                      dx = dx.array().rowwise() * inv_std.array();
                      tp.accumulate(ix, dx);
                    }
                  });
}

Var softmax(const Var& x, int axis) {
  if (axis != 0 && axis != 1) throw ContractError("softmax: axis must be 0 or 1");
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  if (axis == 0) {
    const Eigen::RowVectorXd mx = xv.colwise().maxCoeff();
    out = (xv.rowwise() - mx).array().exp();
    const Eigen::RowVectorXd s = out.colwise().sum();
    out = out.array().rowwise() / s.array();
  } else {
    const Eigen::VectorXd mx = xv.rowwise().maxCoeff();
    out = (xv.colwise() - mx).array().exp();
    const Eigen::VectorXd s = out.rowwise().sum();
    out = out.array().colwise() / s.array();
  }
  const std::size_t ix = x.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), x.requires_grad(), [ix, self, axis](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    const Tensor gy = g.cwiseProduct(y);
    if (axis == 0) {
      const Eigen::RowVectorXd s = gy.colwise().sum();
      tp.accumulate(ix, gy - (y.array().rowwise() * s.array()).matrix());
    } else {
      const Eigen::VectorXd s = gy.rowwise().sum();
      tp.accumulate(ix, gy - (y.array().colwise() * s.array()).matrix());
    }
  });
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Var gelu(const Var& x) {
  Tape& t = *x.tape();
  Tensor out = x.value().unaryExpr([](double v) { return gelu_value(v); });
  const std::size_t ix = x.id();
  return t.record(std::move(out), x.requires_grad(), [ix](Tape& tp, const Tensor& g) {
    tp.accumulate(ix, g.cwiseProduct(tp.value(ix).unaryExpr([](double v) { return gelu_derivative(v); })));
  });
}

Var sigmoid(const Var& x) {
  Tape& t = *x.tape();
  Tensor out = x.value().unaryExpr([](double v) { return sigmoid_value(v); });
  const std::size_t ix = x.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), x.requires_grad(), [ix, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    tp.accumulate(ix, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var dropout(const Var& x, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = xv.cwiseProduct(mask);
  const std::size_t ix = x.id();
  return t.record(std::move(out), x.requires_grad(),
                  [ix, mask = std::move(mask)](Tape& tp, const Tensor& g) { tp.accumulate(ix, g.cwiseProduct(mask)); });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_cols: operands live on different tapes");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    at += p.cols();
  }
  return t.record(std::move(out), rg, [layout = std::move(layout)](Tape& tp, const Tensor& g) {
    Eigen::Index off = 0;
    for (const auto& [id, c] : layout) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleCols(off, c));
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_rows: operands live on different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), p.rows());
    at += p.rows();
  }
  return t.record(std::move(out), rg, [layout = std::move(layout)](Tape& tp, const Tensor& g) {
    Eigen::Index off = 0;
    for (const auto& [id, r] : layout) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleRows(off, r));
      off += r;
    }
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  const Tensor& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: range out of bounds for " + shape_string(xv));
  }
  Tape& t = *x.tape();
  Tensor out = xv.middleCols(start, count);
  const std::size_t ix = x.id();
  const Eigen::Index rows = xv.rows(), total = xv.cols();
  return t.record(std::move(out), x.requires_grad(), [ix, rows, total, start, count](Tape& tp, const Tensor& g) {
    Tensor full = Tensor::Zero(rows, total);
    full.middleCols(start, count) = g;
    tp.accumulate(ix, full);
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  const Tensor& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.rows()) {
    throw DimensionError("slice_rows: range out of bounds for " + shape_string(xv));
  }
  Tape& t = *x.tape();
  Tensor out = xv.middleRows(start, count);
  const std::size_t ix = x.id();
  const Eigen::Index total = xv.rows(), cols = xv.cols();
  return t.record(std::move(out), x.requires_grad(), [ix, total, cols, start, count](Tape& tp, const Tensor& g) {
    Tensor full = Tensor::Zero(total, cols);
    full.middleRows(start, count) = g;
    tp.accumulate(ix, full);
  });
}

Var sum(const Var& x) {
  Tape& t = *x.tape();
  Tensor out(1, 1);
  out(0, 0) = x.value().sum();
  const std::size_t ix = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  return t.record(std::move(out), x.requires_grad(),
                  [ix, r, c](Tape& tp, const Tensor& g) { tp.accumulate(ix, Tensor::Constant(r, c, g(0, 0))); });
}

}  // namespace jarvis

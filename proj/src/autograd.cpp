#include "fckt/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace fckt::ag {

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.param = &p;
  n.requires_grad = !p.frozen;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

const Matrix& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param != nullptr ? n.param->value : n.value;
}

Var Graph::make(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.graph() != this) throw std::logic_error("autograd: mixing nodes from different graphs");
    if (nodes_[v.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::ensure_grad(Node& n) {
  Matrix& target = n.param != nullptr ? n.param->grad : n.grad;
  const Matrix& v = n.param != nullptr ? n.param->value : n.value;
  if (target.rows() != v.rows() || target.cols() != v.cols()) target = Matrix::Zero(v.rows(), v.cols());
}

void Graph::accumulate(std::size_t id, const Matrix& delta) {
  accumulate_with(id, [&](Matrix& g) { g += delta; });
}

void Graph::clear_grads() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw std::logic_error("autograd: root from another graph");
  const Matrix& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) throw std::logic_error("autograd: backward root must be 1x1");
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = *a.graph();
  const Var in[] = {a, b};
  return g.make(a.value() * b.value(), in, [a, b](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.noalias() += dy * b.value().transpose(); });
    g.accumulate_with(b.id(), [&](Matrix& gb) { gb.noalias() += a.value().transpose() * dy; });
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph();
  const Var in[] = {a, b};
  return g.make(a.value() * b.value().transpose(), in, [a, b](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.noalias() += dy * b.value(); });
    g.accumulate_with(b.id(), [&](Matrix& gb) { gb.noalias() += dy.transpose() * a.value(); });
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  const Var in[] = {a, b};
  return g.make(a.value() + b.value(), in, [a, b](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate(a.id(), dy);
    g.accumulate(b.id(), dy);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = *a.graph();
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const Var in[] = {a, row};
  return g.make(std::move(out), in, [a, row](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate(a.id(), dy);
    g.accumulate_with(row.id(), [&](Matrix& gr) { gr.row(0) += dy.colwise().sum(); });
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph();
  const Var in[] = {a};
  return g.make(a.value() * s, in, [a, s](Graph& g, std::size_t self) {
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga += g.grad(self) * s; });
  });
}

Var tanh(Var a) {
  Graph& g = *a.graph();
  Matrix y = a.value().array().tanh().matrix();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) {
      ga.array() += dy.array() * (1.0 - y.array().square());
    });
  });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

Var gelu(Var a) {
  Graph& g = *a.graph();
  const auto x = a.value().array();
  Matrix y = (0.5 * x * (1.0 + (x * kInvSqrt2).unaryExpr([](double v) { return std::erf(v); }))).matrix();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a](Graph& g, std::size_t self) {
    const auto x = a.value().array();
    const auto cdf = 0.5 * (1.0 + (x * kInvSqrt2).unaryExpr([](double v) { return std::erf(v); }));
    const auto dydx = cdf + x * kInvSqrt2Pi * (-0.5 * x.square()).exp();
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.array() += dy.array() * dydx; });
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = *x.graph();
  const Matrix& xv = x.value();
  const Eigen::Index r = xv.rows(), c = xv.cols();
  if (gain.cols() != c || bias.cols() != c) throw std::invalid_argument("layer_norm: shape mismatch");
  Matrix xhat(r, c);
  Vector inv_std(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const Var in[] = {x, gain, bias};
  return g.make(std::move(y), in,
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                  const Matrix& dy = g.grad(self);
                  g.accumulate_with(bias.id(), [&](Matrix& gb) { gb.row(0) += dy.colwise().sum(); });
                  g.accumulate_with(gain.id(), [&](Matrix& gg) {
                    gg.row(0) += (dy.array() * xhat.array()).matrix().colwise().sum();
                  });
                  g.accumulate_with(x.id(), [&](Matrix& gx) {
                    Matrix dxhat = dy;
                    dxhat.array().rowwise() *= gain.value().row(0).array();
                    for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                      const double m1 = dxhat.row(i).mean();
                      const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
                      gx.row(i).array() +=
                          inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                    }
                  });
                });
}

namespace {
void softmax_inplace(Eigen::Ref<RowVector> row) {
  const double m = row.maxCoeff();
  row = (row.array() - m).exp().matrix();
  row /= row.sum();
}
}  // namespace

Var softmax_rows(Var a) {
  Graph& g = *a.graph();
  Matrix y = a.value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) softmax_inplace(y.row(i));
  const Var in[] = {a};
  return g.make(std::move(y), in, [a](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) {
      const Vector dots = (dy.array() * y.array()).rowwise().sum();
      ga.array() += y.array() * (dy.colwise() - dots).array();
    });
  });
}

Var softmax_all(Var a) {
  Graph& g = *a.graph();
  Matrix y = a.value();
  const double m = y.maxCoeff();
  y = (y.array() - m).exp().matrix();
  y /= y.sum();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& dy = g.grad(self);
    const double dot = (dy.array() * y.array()).sum();
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.array() += y.array() * (dy.array() - dot); });
  });
}

Var dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  Graph& g = *a.graph();
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  Matrix y = (a.value().array() * mask.array()).matrix();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a, mask = std::move(mask)](Graph& g, std::size_t self) {
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.array() += g.grad(self).array() * mask.array(); });
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = *a.graph();
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols");
  const Var in[] = {a};
  return g.make(a.value().middleCols(start, count), in, [a, start, count](Graph& g, std::size_t self) {
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.middleCols(start, count) += g.grad(self); });
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Graph& g = *parts[0].graph();
  Eigen::Index cols = 0;
  for (const Var& p : parts) cols += p.cols();
  Matrix y(parts[0].rows(), cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return g.make(std::move(y), parts, [kept](Graph& g, std::size_t self) {
    Eigen::Index at = 0;
    for (const Var& p : kept) {
      const Eigen::Index c = p.cols();
      g.accumulate_with(p.id(), [&](Matrix& gp) { gp += g.grad(self).middleCols(at, c); });
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Graph& g = *parts[0].graph();
  Eigen::Index rows = 0;
  for (const Var& p : parts) rows += p.rows();
  Matrix y(rows, parts[0].cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    if (p.cols() != y.cols()) throw std::invalid_argument("concat_rows: column mismatch");
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return g.make(std::move(y), parts, [kept](Graph& g, std::size_t self) {
    Eigen::Index at = 0;
    for (const Var& p : kept) {
      const Eigen::Index r = p.rows();
      g.accumulate_with(p.id(), [&](Matrix& gp) { gp += g.grad(self).middleRows(at, r); });
      at += r;
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Graph& g = *a.graph();
  Matrix y(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: row index");
    y.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const Var in[] = {a};
  return g.make(std::move(y), in, [a, idx = std::move(idx)](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) {
      for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += dy.row(static_cast<Eigen::Index>(i));
    });
  });
}

Var sum_rows(Var a, Eigen::Index first, Eigen::Index last) {
  Graph& g = *a.graph();
  if (first < 0 || last < first || last >= a.rows()) throw std::out_of_range("sum_rows: range");
  Matrix y = a.value().middleRows(first, last - first + 1).colwise().sum();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a, first, last](Graph& g, std::size_t self) {
    const Matrix& dy = g.grad(self);
    g.accumulate_with(a.id(), [&](Matrix& ga) {
      for (Eigen::Index k = first; k <= last; ++k) ga.row(k) += dy.row(0);
    });
  });
}

Var sum(Var a) {
  Graph& g = *a.graph();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  const Var in[] = {a};
  return g.make(std::move(y), in, [a](Graph& g, std::size_t self) {
    const double d = g.grad(self)(0, 0);
    g.accumulate_with(a.id(), [&](Matrix& ga) { ga.array() += d; });
  });
}

Var add_scalars(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("add_scalars: empty");
  Graph& g = *parts[0].graph();
  Matrix y = Matrix::Zero(1, 1);
  for (const Var& p : parts) y(0, 0) += p.scalar();
  std::vector<Var> kept(parts.begin(), parts.end());
  return g.make(std::move(y), parts, [kept](Graph& g, std::size_t self) {
    for (const Var& p : kept) g.accumulate(p.id(), g.grad(self));
  });
}

Var nll_from_logits(Var logits, Eigen::Index target, double eps, int* clamped) {
  Graph& g = *logits.graph();
  const Matrix& z = logits.value();
  if (target < 0 || target >= z.size()) throw std::out_of_range("nll_from_logits: target");
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  const double logp = z.data()[target] - lse;
  const double floor = std::log(eps);
  const bool clip = logp < floor;
  if (clip && clamped != nullptr) ++*clamped;
  Matrix y(1, 1);
  y(0, 0) = clip ? -floor : -logp;
  const Var in[] = {logits};
  return g.make(std::move(y), in, [logits, target, lse, clip](Graph& g, std::size_t self) {
    if (clip) return;
    const double d = g.grad(self)(0, 0);
    g.accumulate_with(logits.id(), [&](Matrix& gz) {
      gz.array() += d * (logits.value().array() - lse).exp();
      gz.data()[target] -= d;
    });
  });
}

Var nll_from_probs(Var probs, Eigen::Index target, double eps, int* clamped) {
  Graph& g = *probs.graph();
  const Matrix& p = probs.value();
  if (target < 0 || target >= p.size()) throw std::out_of_range("nll_from_probs: target");
  const double pt = p.data()[target];
  const bool clip = pt < eps;
  if (clip && clamped != nullptr) ++*clamped;
  Matrix y(1, 1);
  y(0, 0) = -std::log(clip ? eps : pt);
  const Var in[] = {probs};
  return g.make(std::move(y), in, [probs, target, pt, clip](Graph& g, std::size_t self) {
    if (clip) return;
    const double d = g.grad(self)(0, 0);
    g.accumulate_with(probs.id(), [&](Matrix& gp) { gp.data()[target] -= d / pt; });
  });
}

}  // namespace fckt::ag

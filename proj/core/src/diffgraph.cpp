#include "cfgen/diffgraph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cfgen::diffgraph {

namespace {

Graph& owner(Var a) {
  if (a.graph() == nullptr) throw std::logic_error("diffgraph: unbound Var");
  return *a.graph();
}

Graph& owner(Var a, Var b) {
  if (a.graph() != b.graph()) throw std::logic_error("diffgraph: Vars from different graphs");
  return owner(a);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << "diffgraph: shape mismatch in " << op << " (" << a.rows() << "x" << a.cols() << " vs "
       << b.rows() << "x" << b.cols() << ")";
    throw std::invalid_argument(os.str());
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

const Matrix& Var::value() const { return owner(*this).value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("diffgraph: scalar() on non-1x1 Var");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Graph::value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Graph::requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

Var Graph::record(Matrix value, std::vector<int> parents, Backward backward) {
  bool any = false;
  for (int p : parents) any = any || nodes_[static_cast<std::size_t>(p)].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), any ? std::move(backward) : Backward{}, any});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var out) {
  if (out.graph() != this) throw std::logic_error("diffgraph: backward on foreign Var");
  if (value(out).size() != 1) throw std::invalid_argument("diffgraph: backward target must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(out.id())].grad = Matrix::Ones(1, 1);
  for (int i = out.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may append to nothing and only touches parents (< i), so
    // references into nodes_ stay valid.
    n.backward(*this, n.grad);
  }
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = owner(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw std::invalid_argument("diffgraph: matmul inner dimension mismatch");
  Matrix out = av * bv;
  return g.record(std::move(out), {a.id(), b.id()}, [a, b](Graph& gr, const Matrix& up) {
    if (gr.requires_grad(a)) gr.accumulate(a, up * b.value().transpose());
    if (gr.requires_grad(b)) gr.accumulate(b, a.value().transpose() * up);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = owner(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw std::invalid_argument("diffgraph: add_row shape mismatch");
  Matrix out = av.rowwise() + rv.row(0);
  return g.record(std::move(out), {a.id(), row.id()}, [a, row](Graph& gr, const Matrix& up) {
    gr.accumulate(a, up);
    if (gr.requires_grad(row)) gr.accumulate(row, up.colwise().sum());
  });
}

Var scale_rows(Var a, Var col) {
  Graph& g = owner(a, col);
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw std::invalid_argument("diffgraph: scale_rows shape mismatch");
  Matrix out = av.array().colwise() * cv.col(0).array();
  return g.record(std::move(out), {a.id(), col.id()}, [a, col](Graph& gr, const Matrix& up) {
    if (gr.requires_grad(a)) {
      Matrix ga = up.array().colwise() * col.value().col(0).array();
      gr.accumulate(a, ga);
    }
    if (gr.requires_grad(col)) {
      Matrix gc = (up.array() * a.value().array()).rowwise().sum().matrix();
      gr.accumulate(col, gc);
    }
  });
}

Var operator+(Var a, Var b) {
  Graph& g = owner(a, b);
  require_same_shape(a.value(), b.value(), "+");
  return g.record(a.value() + b.value(), {a.id(), b.id()}, [a, b](Graph& gr, const Matrix& up) {
    gr.accumulate(a, up);
    gr.accumulate(b, up);
  });
}

Var operator-(Var a, Var b) {
  Graph& g = owner(a, b);
  require_same_shape(a.value(), b.value(), "-");
  return g.record(a.value() - b.value(), {a.id(), b.id()}, [a, b](Graph& gr, const Matrix& up) {
    gr.accumulate(a, up);
    if (gr.requires_grad(b)) gr.accumulate(b, -up);
  });
}

Var operator*(Var a, Var b) {
  Graph& g = owner(a, b);
  require_same_shape(a.value(), b.value(), "*");
  Matrix out = a.value().cwiseProduct(b.value());
  return g.record(std::move(out), {a.id(), b.id()}, [a, b](Graph& gr, const Matrix& up) {
    if (gr.requires_grad(a)) gr.accumulate(a, up.cwiseProduct(b.value()));
    if (gr.requires_grad(b)) gr.accumulate(b, up.cwiseProduct(a.value()));
  });
}

Var operator*(double s, Var a) {
  Graph& g = owner(a);
  return g.record(s * a.value(), {a.id()}, [a, s](Graph& gr, const Matrix& up) { gr.accumulate(a, s * up); });
}

Var operator+(Var a, double s) {
  Graph& g = owner(a);
  Matrix out = a.value().array() + s;
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) { gr.accumulate(a, up); });
}

Var operator-(Var a) { return -1.0 * a; }

Var relu(Var a) {
  Graph& g = owner(a);
  Matrix out = a.value().cwiseMax(0.0);
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    Matrix ga = (a.value().array() > 0.0).select(up, 0.0);
    gr.accumulate(a, ga);
  });
}

Var gelu(Var a) {
  Graph& g = owner(a);
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  });
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    Matrix d = a.value().unaryExpr([](double v) {
      const double inner = kGeluC * (v + 0.044715 * v * v * v);
      const double t = std::tanh(inner);
      const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
    });
    gr.accumulate(a, up.cwiseProduct(d));
  });
}

Var sigmoid(Var a, double lo, double hi) {
  Graph& g = owner(a);
  Matrix out = a.value().unaryExpr([lo, hi](double v) {
    const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::clamp(s, lo, hi);
  });
  Matrix saved = out;
  return g.record(std::move(out), {a.id()}, [a, saved, lo, hi](Graph& gr, const Matrix& up) {
    Matrix d = saved.unaryExpr([lo, hi](double s) { return (s <= lo || s >= hi) ? 0.0 : s * (1.0 - s); });
    gr.accumulate(a, up.cwiseProduct(d));
  });
}

Var log(Var a) {
  Graph& g = owner(a);
  Matrix out = a.value().array().log().matrix();
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    gr.accumulate(a, up.cwiseQuotient(a.value()));
  });
}

Var exp(Var a) {
  Graph& g = owner(a);
  Matrix out = a.value().array().exp().matrix();
  Matrix saved = out;
  return g.record(std::move(out), {a.id()}, [a, saved](Graph& gr, const Matrix& up) {
    gr.accumulate(a, up.cwiseProduct(saved));
  });
}

Var square(Var a) {
  Graph& g = owner(a);
  Matrix out = a.value().array().square().matrix();
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    gr.accumulate(a, 2.0 * up.cwiseProduct(a.value()));
  });
}

Var sum(Var a) {
  Graph& g = owner(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    gr.accumulate(a, Matrix::Constant(a.rows(), a.cols(), up(0, 0)));
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("diffgraph: mean of empty matrix");
  return (1.0 / n) * sum(a);
}

Var row_sum(Var a) {
  Graph& g = owner(a);
  Matrix out = a.value().rowwise().sum();
  return g.record(std::move(out), {a.id()}, [a](Graph& gr, const Matrix& up) {
    Matrix ga = up.col(0).replicate(1, a.cols());
    gr.accumulate(a, ga);
  });
}

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = owner(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("diffgraph: cols out of range");
  Matrix out = a.value().middleCols(start, count);
  return g.record(std::move(out), {a.id()}, [a, start, count](Graph& gr, const Matrix& up) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = up;
    gr.accumulate(a, ga);
  });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("diffgraph: hconcat of nothing");
  Graph& g = owner(parts[0]);
  const Eigen::Index n = parts[0].rows();
  Eigen::Index total = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.graph() != &g) throw std::logic_error("diffgraph: Vars from different graphs");
    if (p.rows() != n) throw std::invalid_argument("diffgraph: hconcat row mismatch");
    total += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(n, total);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.record(std::move(out), std::move(ids), [saved](Graph& gr, const Matrix& up) {
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      if (gr.requires_grad(p)) gr.accumulate(p, up.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var repeat_row(Var row, Eigen::Index n) {
  Graph& g = owner(row);
  if (row.rows() != 1) throw std::invalid_argument("diffgraph: repeat_row expects a 1 x k row");
  Matrix out = row.value().replicate(n, 1);
  return g.record(std::move(out), {row.id()}, [row](Graph& gr, const Matrix& up) {
    gr.accumulate(row, up.colwise().sum());
  });
}

// ---- evaluation helpers ---------------------------------------------------

ValueAndGrad value_and_grad(const LossFn& loss, std::span<const Matrix> params) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(g.parameter(p));
  Var out = loss(g, vars);
  const double value = out.scalar();
  if (!std::isfinite(value)) throw TrainingError("non-finite loss value");
  g.backward(out);
  ValueAndGrad r;
  r.value = value;
  r.grads.reserve(vars.size());
  for (const Var& v : vars) r.grads.push_back(g.grad(v));
  return r;
}

GradCheckReport check_gradient(const LossFn& loss, std::vector<Matrix> params, double step, double floor) {
  const ValueAndGrad analytic = value_and_grad(loss, params);
  auto eval = [&](const std::vector<Matrix>& p) {
    Graph g;
    std::vector<Var> vars;
    for (const Matrix& m : p) vars.push_back(g.constant(m));
    return loss(g, vars).scalar();
  };
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < params[k].cols(); ++j) {
        const double orig = params[k](i, j);
        params[k](i, j) = orig + step;
        const double up = eval(params);
        params[k](i, j) = orig - step;
        const double down = eval(params);
        params[k](i, j) = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic.grads[k](i, j);
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        const double rel = std::abs(a - numeric) / denom;
        ++report.checked;
        if (rel > report.max_relative_error) {
          report.max_relative_error = rel;
          std::ostringstream os;
          os << "param " << k << ", entry (" << i << ", " << j << "): analytic " << a << " vs numeric " << numeric;
          report.worst = os.str();
        }
      }
    }
  }
  return report;
}

}  // namespace cfgen::diffgraph

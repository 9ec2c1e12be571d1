#include "vlconn/autodiff.hpp"

#include "vlconn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace vlconn {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

Tensor::Tensor(Matrix value, bool requires_grad)
    : value_(std::move(value)), requires_grad_(requires_grad) {
  if (!value_.allFinite()) throw NumericError("tensor initialised with non-finite values");
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Matrix Tensor::grad() const {
  if (grad_) return *grad_;
  return Matrix::Zero(value_.rows(), value_.cols());
}

void Tensor::accumulate_grad(const Matrix& g) {
  if (shape_of(g) != shape()) {
    throw DimensionError("gradient shape " + shape_of(g).str() + " does not match tensor " +
                         shape().str());
  }
  if (grad_) {
    *grad_ += g;
  } else {
    grad_ = g;
  }
}

const Matrix& Var::value() const { return graph_->value(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant contains non-finite values");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::leaf(Tensor& tensor) {
  Node n;
  n.op = "leaf";
  n.value = tensor.value();
  n.needs_grad = tensor.requires_grad();
  n.tensor = tensor.requires_grad() ? &tensor : nullptr;
  return push(std::move(n));
}

Var Graph::record(std::string_view op, Matrix value, std::vector<int> inputs, BackwardFn fn) {
  if (!value.allFinite()) {
    throw NumericError("op '" + std::string(op) + "' produced non-finite values");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (int id : inputs) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
      throw ContractError("op '" + n.op + "' refers to an unknown input node");
    }
    n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
  }
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Matrix* Graph::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (!n.grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return &*n.grad;
}

const Matrix* Graph::grad(Var v) const {
  const auto& g = nodes_[v.id()].grad;
  return g ? &*g : nullptr;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ContractError("loss belongs to a different graph");
  if (loss.shape() != Shape{1, 1}) {
    throw ContractError("backward requires a scalar loss, got " + loss.shape().str());
  }
  for (Node& n : nodes_) n.grad.reset();
  if (!nodes_[loss.id()].needs_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad) continue;
    if (n.backward) n.backward(*this, *n.grad);
    if (n.tensor) n.tensor->accumulate_grad(*n.grad);
  }
}

namespace {

Graph& same_graph(Var a, Var b, std::string_view op) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph();
}

void require_same_shape(Var a, Var b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape().str() + " x " +
                         b.shape().str());
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) ga->noalias() += d * g.value(ib).transpose();
    if (Matrix* gb = g.grad_slot(ib)) gb->noalias() += g.value(ia).transpose() * d;
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return g.record("add", a.value() + b.value(), {ia, ib}, [ia, ib](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += d;
    if (Matrix* gb = g.grad_slot(ib)) *gb += d;
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, "sub");
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return g.record("sub", a.value() - b.value(), {ia, ib}, [ia, ib](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += d;
    if (Matrix* gb = g.grad_slot(ib)) *gb -= d;
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "mul");
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return g.record("mul", std::move(out), {ia, ib}, [ia, ib](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += d.cwiseProduct(g.value(ib));
    if (Matrix* gb = g.grad_slot(ib)) *gb += d.cwiseProduct(g.value(ia));
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record("scale", a.value() * s, {ia}, [ia, s](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += s * d;
  });
}

Var add_row(Var m, Var row) {
  Graph& g = same_graph(m, row, "add_row");
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw DimensionError("add_row: expected a 1x" + std::to_string(m.cols()) + " row, got " +
                         row.shape().str());
  }
  const int im = m.id(), ir = row.id();
  Matrix out = m.value().rowwise() + row.value().row(0);
  return g.record("add_row", std::move(out), {im, ir}, [im, ir](Graph& g, const Matrix& d) {
    if (Matrix* gm = g.grad_slot(im)) *gm += d;
    if (Matrix* gr = g.grad_slot(ir)) *gr += d.colwise().sum();
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record("transpose", a.value().transpose(), {ia}, [ia](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += d.transpose();
  });
}

Var mean_rows(Var a) {
  Graph& g = *a.graph();
  if (a.rows() == 0) throw DimensionError("mean_rows: empty input " + a.shape().str());
  const int ia = a.id();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return g.record("mean_rows", std::move(out), {ia}, [ia, inv](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) ga->rowwise() += d.row(0) * inv;
  });
}

Var sum(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.record("sum", std::move(out), {ia}, [ia](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) ga->array() += d(0, 0);
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var reshape(Var a, Index rows, Index cols) {
  Graph& g = *a.graph();
  if (rows * cols != a.value().size()) {
    throw DimensionError("reshape: cannot view " + a.shape().str() + " as " +
                         Shape{rows, cols}.str());
  }
  const int ia = a.id();
  const Index r0 = a.rows(), c0 = a.cols();
  Matrix out = a.value().reshaped<Eigen::RowMajor>(rows, cols);
  return g.record("reshape", std::move(out), {ia}, [ia, r0, c0](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) *ga += d.reshaped<Eigen::RowMajor>(r0, c0);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph& g = *parts.front().graph();
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<int> ids;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    if (p.graph() != &g) throw ContractError("concat_rows: operands belong to different graphs");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape().str() +
                           " vs " + p.shape().str());
    }
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  }
  std::vector<int> inputs = ids;
  return g.record("concat_rows", std::move(out), std::move(inputs),
                  [ids, offsets](Graph& g, const Matrix& d) {
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (Matrix* gp = g.grad_slot(ids[i])) {
                        *gp += d.middleRows(offsets[i], gp->rows());
                      }
                    }
                  });
}

Var select_rows(Var a, std::span<const int> indices) {
  Graph& g = *a.graph();
  std::vector<int> idx(indices.begin(), indices.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) {
      throw DimensionError("select_rows: index " + std::to_string(idx[r]) + " outside " +
                           a.shape().str());
    }
    out.row(static_cast<Index>(r)) = a.value().row(idx[r]);
  }
  const int ia = a.id();
  return g.record("select_rows", std::move(out), {ia}, [ia, idx](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) {
      for (std::size_t r = 0; r < idx.size(); ++r) ga->row(idx[r]) += d.row(static_cast<Index>(r));
    }
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Var gelu(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return g.record("gelu", std::move(out), {ia}, [ia](Graph& g, const Matrix& d) {
    if (Matrix* ga = g.grad_slot(ia)) {
      *ga += d.cwiseProduct(g.value(ia).unaryExpr([](double x) { return gelu_derivative(x); }));
    }
  });
}

Matrix softmax_rows_value(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    const double peak = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph();
  if (a.cols() == 0) throw DimensionError("softmax_rows: zero-width input " + a.shape().str());
  const int ia = a.id();
  Matrix out = softmax_rows_value(a.value());
  Matrix y = out;
  return g.record("softmax_rows", std::move(out), {ia},
                  [ia, y = std::move(y)](Graph& g, const Matrix& d) {
                    if (Matrix* ga = g.grad_slot(ia)) {
                      const Eigen::VectorXd dots = d.cwiseProduct(y).rowwise().sum();
                      *ga += y.cwiseProduct(d - dots.replicate(1, d.cols()));
                    }
                  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = *logits.graph();
  const Index n = logits.rows(), k = logits.cols();
  if (static_cast<Index>(labels.size()) != n || n == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + logits.shape().str());
  }
  std::vector<int> lab(labels.begin(), labels.end());
  Matrix p = softmax_rows_value(logits.value());
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    if (lab[r] < 0 || lab[r] >= k) {
      throw DimensionError("cross_entropy: label " + std::to_string(lab[r]) + " outside [0, " +
                           std::to_string(k) + ")");
    }
    const auto row = logits.value().row(r);
    const double peak = row.maxCoeff();
    const double lse = peak + std::log((row.array() - peak).exp().sum());
    total += lse - row(lab[r]);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  const int il = logits.id();
  return g.record("cross_entropy", std::move(out), {il},
                  [il, lab, p = std::move(p)](Graph& g, const Matrix& d) {
                    if (Matrix* gl = g.grad_slot(il)) {
                      Matrix delta = p;
                      for (std::size_t r = 0; r < lab.size(); ++r) {
                        delta(static_cast<Index>(r), lab[r]) -= 1.0;
                      }
                      *gl += delta * (d(0, 0) / static_cast<double>(lab.size()));
                    }
                  });
}

Var window_mean(Var a, std::span<const std::vector<int>> groups) {
  Graph& g = *a.graph();
  std::vector<std::vector<int>> grp(groups.begin(), groups.end());
  Matrix out = Matrix::Zero(static_cast<Index>(grp.size()), a.cols());
  for (std::size_t w = 0; w < grp.size(); ++w) {
    if (grp[w].empty()) throw GeometryError("window_mean: empty window " + std::to_string(w));
    for (int idx : grp[w]) {
      if (idx < 0 || idx >= a.rows()) {
        throw DimensionError("window_mean: index " + std::to_string(idx) + " outside " +
                             a.shape().str());
      }
      out.row(static_cast<Index>(w)) += a.value().row(idx);
    }
    out.row(static_cast<Index>(w)) /= static_cast<double>(grp[w].size());
  }
  const int ia = a.id();
  return g.record("window_mean", std::move(out), {ia},
                  [ia, grp = std::move(grp)](Graph& g, const Matrix& d) {
                    if (Matrix* ga = g.grad_slot(ia)) {
                      for (std::size_t w = 0; w < grp.size(); ++w) {
                        const double inv = 1.0 / static_cast<double>(grp[w].size());
                        for (int idx : grp[w]) ga->row(idx) += d.row(static_cast<Index>(w)) * inv;
                      }
                    }
                  });
}

Var im2col(Var a, Index height, Index width, Index kernel) {
  Graph& g = *a.graph();
  if (height * width != a.rows()) {
    throw DimensionError("im2col: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not match input " + a.shape().str());
  }
  if (kernel <= 0 || kernel % 2 == 0) {
    throw DimensionError("im2col: kernel must be odd and positive, got " + std::to_string(kernel));
  }
  const Index c = a.cols();
  const Index radius = kernel / 2;
  const Matrix& src = a.value();
  Matrix out = Matrix::Zero(height * width, kernel * kernel * c);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Index p = y * width + x;
      for (Index dy = 0; dy < kernel; ++dy) {
        const Index sy = y + dy - radius;
        if (sy < 0 || sy >= height) continue;
        for (Index dx = 0; dx < kernel; ++dx) {
          const Index sx = x + dx - radius;
          if (sx < 0 || sx >= width) continue;
          out.block(p, (dy * kernel + dx) * c, 1, c) = src.row(sy * width + sx);
        }
      }
    }
  }
  const int ia = a.id();
  return g.record("im2col", std::move(out), {ia},
                  [ia, height, width, kernel, c, radius](Graph& g, const Matrix& d) {
                    Matrix* ga = g.grad_slot(ia);
                    if (!ga) return;
                    for (Index y = 0; y < height; ++y) {
                      for (Index x = 0; x < width; ++x) {
                        const Index p = y * width + x;
                        for (Index dy = 0; dy < kernel; ++dy) {
                          const Index sy = y + dy - radius;
                          if (sy < 0 || sy >= height) continue;
                          for (Index dx = 0; dx < kernel; ++dx) {
                            const Index sx = x + dx - radius;
                            if (sx < 0 || sx >= width) continue;
                            ga->row(sy * width + sx) += d.block(p, (dy * kernel + dx) * c, 1, c);
                          }
                        }
                      }
                    }
                  });
}

namespace {

double probe(const ScalarFn& f, std::span<Tensor* const> tensors) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(tensors.size());
  for (Tensor* t : tensors) vars.push_back(g.constant(t->value()));
  Var out;
  try {
    out = f(g, vars);
  } catch (const NumericError& e) {
    throw ProbeError(std::string("function is not finite at a probe point: ") + e.what());
  }
  if (out.shape() != Shape{1, 1}) {
    throw ContractError("grad_check requires a scalar function, got " + out.shape().str());
  }
  const double v = out.value()(0, 0);
  if (!std::isfinite(v)) throw ProbeError("function is not finite at a probe point");
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, std::span<Tensor* const> tensors, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ContractError("grad_check step must lie in (0, 1e-2], got " + std::to_string(eps));
  }
  for (Tensor* t : tensors) t->zero_grad();
  {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(tensors.size());
    for (Tensor* t : tensors) vars.push_back(g.leaf(*t));
    Var loss = f(g, vars);
    g.backward(loss);
  }
  double worst = 0.0;
  for (Tensor* t : tensors) {
    const Matrix analytic = t->grad();
    Matrix& value = t->mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double plus = probe(f, tensors);
      value.data()[i] = saved - eps;
      const double minus = probe(f, tensors);
      value.data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic.data()[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Graph&, Var)>& f, const Matrix& point, double eps) {
  Tensor t(point, true);
  Tensor* ptrs[] = {&t};
  return grad_check([&f](Graph& g, std::span<const Var> v) { return f(g, v[0]); }, ptrs, eps);
}

}  // namespace vlconn

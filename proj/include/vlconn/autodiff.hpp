#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlconn {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = MatrixX<double>;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename Derived>
Shape shape_of(const Eigen::EigenBase<Derived>& m) {
  return {m.rows(), m.cols()};
}

// Learnable (or constant) dense float64 state. Gradients accumulate across
// backward passes until zero_grad() is called.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = true);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = true);

  const Matrix& value() const { return value_; }
  Matrix& mutable_value() { return value_; }
  Shape shape() const { return shape_of(value_); }
  Index size() const { return value_.size(); }

  bool requires_grad() const { return requires_grad_; }
  bool has_grad() const { return grad_.has_value(); }
  // Zero matrix of the value's shape when no gradient has arrived yet.
  Matrix grad() const;
  void accumulate_grad(const Matrix& g);
  void zero_grad() { grad_.reset(); }

 private:
  Matrix value_;
  std::optional<Matrix> grad_;
  bool requires_grad_ = false;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Shape shape() const { return shape_of(value()); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Tape of recorded operations. Nodes are appended in evaluation order, so the
// node vector is already a topological order; backward walks it in reverse.
class Graph {
 public:
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Graph&, const Matrix&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Binds a tensor; its gradient receives the total derivative on backward().
  Var leaf(Tensor& tensor);

  void backward(Var loss);

  Var record(std::string_view op, Matrix value, std::vector<int> inputs, BackwardFn fn);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  // Gradient slot of an input, zero-initialised on first use; nullptr when the
  // node does not lead to any differentiable leaf.
  Matrix* grad_slot(int id);
  // Gradient of an arbitrary node after the last backward(), if any.
  const Matrix* grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(Var v) const { return nodes_[v.id()].op; }
  const std::vector<int>& inputs(Var v) const { return nodes_[v.id()].inputs; }

 private:
  struct Node {
    std::string op;
    Matrix value;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* tensor = nullptr;
    bool needs_grad = false;
    std::optional<Matrix> grad;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

// ---- element-wise and linear-algebra ops --------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// m (r x c) plus a 1 x c row vector added to every row.
Var add_row(Var m, Var row);
Var transpose(Var a);
// 1 x c vector of column means over the rows of a.
Var mean_rows(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Index rows, Index cols);
Var concat_rows(std::span<const Var> parts);
// Row r of the output is row indices[r] of a.
Var select_rows(Var a, std::span<const int> indices);

Var gelu(Var a);
Var softmax_rows(Var a);
// Mean softmax cross-entropy of logits (n x k) against class labels (size n).
Var cross_entropy(Var logits, std::span<const int> labels);

// ---- spatial ops over raster-ordered grids (row = y * width + x) ----------

// Row g of the output is the mean of the rows listed in groups[g].
Var window_mean(Var a, std::span<const std::vector<int>> groups);
// Zero-padded k x k neighbourhoods: output row p holds the k*k*c values around
// cell p, column ((dy * k + dx) * c + channel).
Var im2col(Var a, Index height, Index width, Index kernel);

// ---- plain (non-graph) kernels shared by the ops and their tests ----------

double gelu_value(double x);
double gelu_derivative(double x);
Matrix softmax_rows_value(const Matrix& m);

// ---- finite-difference checking -------------------------------------------

using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// Max over every coordinate of every tensor of
// |analytic - central difference| / max(1, |central difference|).
// Clears the tensors' gradients first and leaves the analytic ones in place.
double grad_check(const ScalarFn& f, std::span<Tensor* const> tensors, double eps = 1e-5);
double grad_check(const std::function<Var(Graph&, Var)>& f, const Matrix& point,
                  double eps = 1e-5);

}  // namespace vlconn

#include "vlconn/autodiff.hpp"
#include "vlconn/errors.hpp"
#include "vlconn/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace vlconn;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

constexpr double kGradTol = 1e-7;

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix a = random_matrix(4, 7, seed);
    const Matrix b = random_matrix(7, 3, seed + 100);
    Graph g;
    const Matrix c = matmul(g.constant(a), g.constant(b)).value();
    const Matrix ref = triple_loop(a, b);
    for (Index i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Graph g;
  Var a = g.constant(Matrix::Zero(3, 4));
  Var b = g.constant(Matrix::Zero(5, 2));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3x4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5x2"), std::string::npos) << msg;
  }
}

TEST(Softmax, KnownValues) {
  Matrix x(1, 3);
  x << 1.0, 2.0, 3.0;
  const Matrix s = softmax_rows_value(x);
  EXPECT_NEAR(s(0, 0), 0.09003057, 1e-8);
  EXPECT_NEAR(s(0, 1), 0.24472847, 1e-8);
  EXPECT_NEAR(s(0, 2), 0.66524096, 1e-8);
}

TEST(Softmax, ShiftInvariantAndStableForLargeInputs) {
  Matrix x(2, 3);
  x << 1000.0, 1001.0, 1002.0, -1000.0, -1001.0, -1002.0;
  Matrix base(2, 3);
  base << 0.0, 1.0, 2.0, 0.0, -1.0, -2.0;
  const Matrix s = softmax_rows_value(x);
  const Matrix r = softmax_rows_value(base);
  ASSERT_TRUE(s.allFinite());
  for (Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s.data()[i], r.data()[i], 1e-15);
  for (Index i = 0; i < 2; ++i) EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-15);
}

TEST(Gelu, KnownValues) {
  EXPECT_NEAR(gelu_value(1.0), 0.8413447, 1e-7);
  EXPECT_EQ(gelu_value(0.0), 0.0);
  EXPECT_NEAR(gelu_value(-1.0), -0.1586553, 1e-7);
  EXPECT_NEAR(gelu_value(10.0), 10.0, 1e-12);
}

TEST(Gelu, DerivativeMatchesCentralDifference) {
  for (double x : {-3.0, -1.0, -0.2, 0.0, 0.4, 1.0, 2.5}) {
    const double h = 1e-6;
    const double fd = (gelu_value(x + h) - gelu_value(x - h)) / (2 * h);
    EXPECT_NEAR(gelu_derivative(x), fd, 1e-8) << "x=" << x;
  }
}

TEST(CrossEntropy, MatchesLogSumExp) {
  const Matrix logits = random_matrix(3, 4, 9, 3.0);
  const std::vector<int> labels{2, 0, 3};
  double ref = 0.0;
  for (Index r = 0; r < 3; ++r) {
    double z = 0.0;
    for (Index c = 0; c < 4; ++c) z += std::exp(logits(r, c));
    ref += std::log(z) - logits(r, labels[r]);
  }
  ref /= 3.0;
  Graph g;
  EXPECT_NEAR(cross_entropy(g.constant(logits), labels).value()(0, 0), ref, 1e-12);
}

TEST(CrossEntropy, RejectsOutOfRangeLabels) {
  Graph g;
  const std::vector<int> labels{0, 4};
  EXPECT_THROW(cross_entropy(g.constant(Matrix::Zero(2, 4)), labels), Error);
}

TEST(Im2col, ColumnLayoutAndZeroPadding) {
  // 2x2 grid, 2 channels: value = 10 * cell + channel.
  Matrix a(4, 2);
  for (Index p = 0; p < 4; ++p)
    for (Index c = 0; c < 2; ++c) a(p, c) = 10.0 * p + c;
  Graph g;
  const Matrix cols = im2col(g.constant(a), 2, 2, 3).value();
  ASSERT_EQ(cols.rows(), 4);
  ASSERT_EQ(cols.cols(), 18);
  // Cell (0,0): the centre tap (dy=1,dx=1) is itself, (dy=2,dx=2) is cell 3,
  // and every tap with dy=0 or dx=0 falls in the padding.
  EXPECT_EQ(cols(0, (1 * 3 + 1) * 2 + 0), 0.0);
  EXPECT_EQ(cols(0, (1 * 3 + 1) * 2 + 1), 1.0);
  EXPECT_EQ(cols(0, (2 * 3 + 2) * 2 + 1), 31.0);
  EXPECT_EQ(cols(0, (1 * 3 + 2) * 2 + 0), 10.0);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(cols(0, (0 * 3 + t) * 2), 0.0);
    EXPECT_EQ(cols(0, (t * 3 + 0) * 2), 0.0);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor t(random_matrix(2, 2, 1));
  Graph g;
  Var x = g.leaf(t);
  EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, AccumulatesOverReuse) {
  Tensor t(random_matrix(2, 3, 2));
  Graph g;
  Var x = g.leaf(t);
  g.backward(sum(mul(x, x)));
  const Matrix expected = 2.0 * t.value();
  for (Index i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.grad().data()[i], expected.data()[i], 1e-14);
}

TEST(Backward, GradientsAccumulateAcrossPasses) {
  Tensor t(random_matrix(1, 3, 3));
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    g.backward(sum(g.leaf(t)));
  }
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(t.grad()(0, i), 2.0);
  t.zero_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Backward, ConstantsAndFrozenTensorsGetNoGradient) {
  Tensor frozen(random_matrix(2, 2, 4), false);
  Tensor live(random_matrix(2, 2, 5), true);
  Graph g;
  Var a = g.leaf(frozen);
  Var b = g.leaf(live);
  g.backward(sum(mul(a, b)));
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_TRUE(live.has_grad());
}

TEST(Tensor, RejectsNonFiniteValues) {
  Matrix m = Matrix::Zero(1, 2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(Tensor{m}, NumericError);
}

TEST(GradCheck, RejectsBadStep) {
  const Matrix p = random_matrix(1, 2, 1);
  auto f = [](Graph&, Var x) { return sum(x); };
  EXPECT_THROW(grad_check(f, p, 0.0), ContractError);
  EXPECT_THROW(grad_check(f, p, 0.1), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // An op whose backward is deliberately off by a factor of two.
  auto f = [](Graph& g, Var x) {
    Matrix v = x.value().array().square();
    const int id = x.id();
    Var y = g.record("bad_square", v, {id}, [id](Graph& gr, const Matrix& up) {
      if (Matrix* s = gr.grad_slot(id)) *s += (4.0 * gr.value(id).array() * up.array()).matrix();
    });
    return sum(y);
  };
  EXPECT_GT(grad_check(f, random_matrix(2, 2, 7), 1e-5), 0.1);
}

// ---- finite-difference checks for every op --------------------------------

struct OpCase {
  const char* name;
  std::function<Var(Graph&, std::span<const Var>)> fn;
  std::vector<Shape> inputs;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifference) {
  const OpCase& c = GetParam();
  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    tensors.emplace_back(random_matrix(c.inputs[i].rows, c.inputs[i].cols, 31 + i));
  }
  std::vector<Tensor*> ptrs;
  for (auto& t : tensors) ptrs.push_back(&t);
  EXPECT_LT(grad_check(c.fn, ptrs, 1e-5), kGradTol);
}

namespace {

Matrix weights(Index r, Index c) { return random_matrix(r, c, 77); }

// Contract an arbitrary-shaped output with fixed weights into a scalar.
Var project(Graph& g, Var y) { return sum(mul(y, g.constant(weights(y.rows(), y.cols())))); }

const std::vector<std::vector<int>> kGroups{{0, 1, 4, 5}, {2, 3}, {6, 7, 8}};
const std::vector<int> kSelect{2, 0, 2, 1};
const std::vector<int> kLabels{1, 0, 2};

}  // namespace

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradient,
    ::testing::Values(
        OpCase{"matmul", [](Graph& g, std::span<const Var> v) { return project(g, matmul(v[0], v[1])); },
               {{3, 4}, {4, 2}}},
        OpCase{"add", [](Graph& g, std::span<const Var> v) { return project(g, add(v[0], v[1])); },
               {{3, 2}, {3, 2}}},
        OpCase{"sub", [](Graph& g, std::span<const Var> v) { return project(g, sub(v[0], v[1])); },
               {{3, 2}, {3, 2}}},
        OpCase{"mul", [](Graph& g, std::span<const Var> v) { return project(g, mul(v[0], v[1])); },
               {{2, 3}, {2, 3}}},
        OpCase{"scale", [](Graph& g, std::span<const Var> v) { return project(g, scale(v[0], -1.7)); },
               {{2, 3}}},
        OpCase{"add_row", [](Graph& g, std::span<const Var> v) { return project(g, add_row(v[0], v[1])); },
               {{4, 3}, {1, 3}}},
        OpCase{"transpose", [](Graph& g, std::span<const Var> v) { return project(g, transpose(v[0])); },
               {{2, 5}}},
        OpCase{"mean_rows", [](Graph& g, std::span<const Var> v) { return project(g, mean_rows(v[0])); },
               {{4, 3}}},
        OpCase{"sum", [](Graph&, std::span<const Var> v) { return scale(sum(mul(v[0], v[0])), 0.5); },
               {{3, 3}}},
        OpCase{"mean", [](Graph&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }, {{3, 2}}},
        OpCase{"reshape", [](Graph& g, std::span<const Var> v) { return project(g, reshape(v[0], 3, 4)); },
               {{2, 6}}},
        OpCase{"concat_rows",
               [](Graph& g, std::span<const Var> v) { return project(g, concat_rows(std::vector<Var>{v[0], v[1]})); },
               {{2, 3}, {1, 3}}},
        OpCase{"select_rows",
               [](Graph& g, std::span<const Var> v) { return project(g, select_rows(v[0], kSelect)); },
               {{3, 2}}},
        OpCase{"gelu", [](Graph& g, std::span<const Var> v) { return project(g, gelu(v[0])); }, {{3, 4}}},
        OpCase{"softmax_rows", [](Graph& g, std::span<const Var> v) { return project(g, softmax_rows(v[0])); },
               {{3, 4}}},
        OpCase{"cross_entropy", [](Graph&, std::span<const Var> v) { return cross_entropy(v[0], kLabels); },
               {{3, 4}}},
        OpCase{"window_mean",
               [](Graph& g, std::span<const Var> v) { return project(g, window_mean(v[0], kGroups)); },
               {{9, 2}}},
        OpCase{"im2col", [](Graph& g, std::span<const Var> v) { return project(g, im2col(v[0], 3, 3, 3)); },
               {{9, 2}}}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tipsfuse/adam.hpp"
#include "tipsfuse/errors.hpp"
#include "tipsfuse/gradcheck.hpp"
#include "tipsfuse/nn.hpp"
#include "tipsfuse/tensor.hpp"

using namespace tipsfuse;
using namespace tipsfuse::ad;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

}  // namespace

TEST(Tensor, MatmulHandArithmetic) {
  Tape tape;
  Tensor a = tape.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  Tensor b = tape.constant(Matrix::from_rows({{1}, {1}}));
  EXPECT_EQ(matmul(a, b).value(), Matrix::from_rows({{3}, {7}}));
}

TEST(Tensor, MatmulShapeMismatchNamesDimensions) {
  Tape tape;
  Tensor a = tape.constant(Matrix(2, 3));
  Tensor b = tape.constant(Matrix(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Tensor, NonFiniteInputRejectedWithIndex) {
  Tape tape;
  Matrix m(2, 2, 1.0);
  m(1, 0) = std::nan("");
  try {
    tape.constant(m);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
  }
}

TEST(Tensor, ExpOverflowRejected) {
  Tape tape;
  Tensor x = tape.constant(Matrix(1, 1, 1000.0));
  EXPECT_THROW(ad::exp(x), NumericError);
}

TEST(Tensor, RowSoftmaxNormalisedAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Matrix x = random_matrix(4, 7, seed, 5.0);
    Matrix shifted = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (auto& v : shifted.row(r)) v += 3.0 * static_cast<double>(r) - 40.0;
    Tape tape;
    Matrix y = row_softmax(tape.constant(x)).value();
    Matrix ys = row_softmax(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) {
        EXPECT_GT(y(r, c), 0.0);
        EXPECT_NEAR(y(r, c), ys(r, c), 1e-12);
        s += y(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, SeluConstants) {
  Tape tape;
  Tensor z = selu(tape.constant(Matrix(1, 1, 0.0)));
  EXPECT_EQ(z.item(), 0.0);
  Tensor far = selu(tape.constant(Matrix(1, 1, -40.0)));
  // lambda * alpha evaluated directly from the canonical constants.
  const double limit = -1.0507009873554805 * 1.6732632423543772;
  EXPECT_NEAR(far.item(), limit, 1e-12);
  EXPECT_NEAR(limit, -1.7581, 1e-4);
}

TEST(Tensor, BackwardMeanAll) {
  Parameter x{"x", Matrix::from_rows({{1, 2}, {3, 4}})};
  Tape tape;
  Tensor loss = mean_all(tape.param(x));
  tape.backward(loss);
  const Matrix g = tape.parameter_grads().at(&x);
  for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Tensor, BackwardSumOfSquares) {
  Parameter x{"x", random_matrix(3, 2, 7)};
  Tape tape;
  Tensor xt = tape.param(x);
  tape.backward(sum_all(mul(xt, xt)));
  const Matrix g = tape.parameter_grads().at(&x);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * x.value[i]);
}

TEST(Tensor, BackwardErrors) {
  Parameter x{"x", Matrix(2, 2, 1.0)};
  {
    Tape tape;
    Tensor y = tape.param(x);
    EXPECT_THROW(tape.backward(y), ShapeError);
  }
  {
    Tape tape;
    Tensor loss = sum_all(tape.param(x));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), StateError);
  }
}

TEST(Tensor, UnreachableParameterGetsZero) {
  Parameter used{"used", Matrix(1, 2, 1.0)};
  Parameter unused{"unused", Matrix(2, 2, 1.0)};
  Tape tape;
  tape.backward(sum_all(tape.param(used)));
  GradMap g = tape.parameter_grads({&used, &unused});
  EXPECT_EQ(g.at(&unused), Matrix(2, 2));
}

TEST(Tensor, BroadcastingGradientsReduce) {
  Parameter a{"a", random_matrix(3, 4, 1)};
  Parameter row{"row", random_matrix(1, 4, 2)};
  Parameter col{"col", random_matrix(3, 1, 3)};
  Parameter sc{"sc", random_matrix(1, 1, 4)};
  auto f = [&](Tape& t) {
    Tensor x = add(t.param(a), t.param(row));
    x = mul(x, t.param(col));
    x = sub(x, t.param(sc));
    return sum_all(mul(x, x));
  };
  auto rep = finite_difference_check(f, {&a, &row, &col, &sc}, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-7);
}

// Every differentiable op against central differences.
TEST(Tensor, OpGradientsMatchFiniteDifferences) {
  Parameter a{"a", random_matrix(3, 4, 11)};
  Parameter b{"b", random_matrix(4, 2, 12)};
  Parameter c{"c", random_matrix(3, 4, 13)};
  auto f = [&](Tape& t) {
    Tensor x = t.param(a);
    Tensor y = t.param(b);
    Tensor z = t.param(c);
    std::vector<Tensor> terms;
    terms.push_back(sum_all(mul(matmul(x, y), matmul(x, y))));
    terms.push_back(sum_all(mul(row_softmax(scale(x, 2.0)), z)));
    terms.push_back(sum_all(mul(selu(x), z)));
    terms.push_back(sum_all(mul(ad::tanh(x), z)));
    terms.push_back(sum_all(mul(sigmoid(x), z)));
    terms.push_back(sum_all(mul(ad::exp(scale(x, 0.3)), z)));
    terms.push_back(sum_all(log_clamped(add_scalar(mul(x, x), 0.5))));
    terms.push_back(sum_all(mul(ad::abs(add_scalar(x, 0.05)), z)));
    terms.push_back(mean_all(mul(transpose(x), transpose(z))));
    terms.push_back(sum_all(mul(l2_row_norms(x), slice_cols(z, 1, 1))));
    terms.push_back(sum_all(mul(normalize_rows(x), z)));
    terms.push_back(sum_all(mul(layer_norm_rows(x), z)));
    terms.push_back(sum_all(mul(slice_rows(x, 1, 2), slice_rows(z, 0, 2))));
    terms.push_back(sum_all(mul(concat_rows({x, z}), concat_rows({z, x}))));
    terms.push_back(sum_all(mul(concat_cols({x, y.tape()->constant(Matrix(3, 1, 0.7))}),
                                concat_cols({z, slice_cols(z, 0, 1)}))));
    return sum_all(concat_rows(terms));
  };
  auto rep = finite_difference_check(f, {&a, &b, &c}, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst_param << "[" << rep.worst_index << "]";
}

TEST(Tensor, NormalizeRowsZeroRowIsZero) {
  Tape tape;
  Tensor y = normalize_rows(tape.constant(Matrix::from_rows({{0, 0}, {3, 4}})));
  EXPECT_EQ(y.value(), Matrix::from_rows({{0, 0}, {0.6, 0.8}}));
}

TEST(Tensor, DeterministicForwardAndBackward) {
  auto run = [] {
    Parameter w{"w", random_matrix(5, 3, 99)};
    Tape tape;
    Tensor x = tape.constant(random_matrix(4, 5, 100));
    Tensor loss = sum_all(row_softmax(matmul(x, tape.param(w))));
    loss = add(loss, mean_all(selu(matmul(x, tape.param(w)))));
    tape.backward(loss);
    return std::pair{loss.item(), tape.parameter_grads().at(&w)};
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}

TEST(Adam, FirstStepIsMinusLr) {
  Parameter p{"p", Matrix(1, 1, 1.0)};
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({&p}, cfg);
  GradMap g;
  g.emplace(&p, Matrix(1, 1, 0.5));
  opt.step(g);
  const double expected = 1.0 - cfg.lr * 0.5 / (0.5 + cfg.eps);
  EXPECT_DOUBLE_EQ(p.value[0], expected);
  EXPECT_NEAR(p.value[0], 1.0 - cfg.lr, 1e-11);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, ZeroGradientNoDecayIsNoop) {
  Parameter p{"p", random_matrix(2, 3, 5)};
  const Matrix before = p.value;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({&p}, cfg);
  GradMap g;
  g.emplace(&p, Matrix(2, 3));
  opt.step(g);
  opt.step(g);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Adam, DecayOnlyStep) {
  Parameter p{"p", Matrix(1, 2, 3.0)};
  AdamConfig cfg;
  cfg.weight_decay = 1e-5;
  Adam opt({&p}, cfg);
  GradMap g;
  g.emplace(&p, Matrix(1, 2));
  opt.step(g);
  EXPECT_DOUBLE_EQ(p.value[0], 3.0 * (1.0 - cfg.lr * 1e-5));
}

TEST(Adam, ShapeMismatch) {
  Parameter p{"p", Matrix(1, 2)};
  Adam opt({&p});
  GradMap g;
  g.emplace(&p, Matrix(2, 1));
  EXPECT_THROW(opt.step(g), ShapeError);
}

TEST(Adam, MomentsMatchParameterShapes) {
  Parameter a{"a", Matrix(2, 3)};
  Parameter b{"b", Matrix(1, 4)};
  Adam opt({&a, &b});
  EXPECT_TRUE(opt.first_moment(&a).same_shape(a.value));
  EXPECT_TRUE(opt.second_moment(&b).same_shape(b.value));
}

TEST(GradCheck, QuadraticFormIsExact) {
  Parameter x{"x", random_matrix(1, 4, 21)};
  const Matrix q = [] {
    Matrix m = random_matrix(4, 4, 22);
    return matmul(m, m.transposed());
  }();
  auto f = [&](Tape& t) {
    Tensor xt = t.param(x);
    return sum_all(mul(matmul(xt, t.constant(q)), xt));
  };
  EXPECT_LT(finite_difference_check(f, {&x}, 1e-5).max_rel_error, 1e-9);
}

TEST(GradCheck, RejectsBadStepAndNondeterminism) {
  Parameter x{"x", Matrix(1, 1, 1.0)};
  auto f = [&](Tape& t) { return sum_all(t.param(x)); };
  EXPECT_THROW(finite_difference_check(f, {&x}, 1e-2), std::invalid_argument);
  int calls = 0;
  auto g = [&](Tape& t) { return add_scalar(sum_all(t.param(x)), 1e-3 * ++calls); };
  EXPECT_THROW(finite_difference_check(g, {&x}, 1e-5), NumericError);
}

TEST(Nn, DropoutInactiveIsIdentityAndActiveScales) {
  Tape tape;
  Tensor x = tape.constant(Matrix(10, 10, 1.0));
  EXPECT_EQ(nn::dropout(x, {}).id(), x.id());
  nn::Rng rng(3);
  Tensor y = nn::dropout(x, {&rng, 0.25});
  for (double v : y.value().values()) EXPECT_TRUE(v == 0.0 || std::fabs(v - 1.0 / 0.75) < 1e-15);
}

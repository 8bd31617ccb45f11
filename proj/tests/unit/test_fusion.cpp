#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tipsfuse/adam.hpp"
#include "tipsfuse/errors.hpp"
#include "tipsfuse/fusion.hpp"
#include "tipsfuse/gradcheck.hpp"

namespace ad = tipsfuse::ad;
namespace nn = tipsfuse::nn;
namespace fu = tipsfuse::fusion;
namespace ot = tipsfuse::ot;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

void randomize(const ad::ParamList& ps, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Parameter* p : ps)
    for (auto& v : p->value.values()) v = u(rng);
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "entry " << i;
}

// Reference arithmetic on plain matrices, independent of the tape.
Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix tr(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class F>
Matrix map(Matrix a, F f) {
  for (auto& v : a.values()) v = f(v);
  return a;
}

Matrix lin(const Matrix& x, const nn::Linear& l) {
  Matrix y = mm(x, l.weight.value);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.bias.value(0, j);
  return y;
}

double selu(double x) {
  constexpr double lambda = 1.0507009873554804934193349852946;
  constexpr double alpha = 1.6732632423543772848170429916717;
  return x > 0 ? lambda * x : lambda * alpha * (std::exp(x) - 1.0);
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix softmax_rows(Matrix a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = -1e300, s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
    for (std::size_t j = 0; j < a.cols(); ++j) s += (a(i, j) = std::exp(a(i, j) - mx));
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) /= s;
  }
  return a;
}

Matrix layer_norm(const Matrix& x, const nn::LayerNorm& ln) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
      y(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * ln.gain.value(0, j) + ln.shift.value(0, j);
  }
  return y;
}

Matrix plus(Matrix a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Matrix cols(const Matrix& a, std::size_t begin, std::size_t n) {
  Matrix out(a.rows(), n);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a(i, begin + j);
  return out;
}

Matrix gap_reference(const Matrix& f, const fu::GapPool& p, Matrix* weights = nullptr) {
  const Matrix a = mm(f, p.wa.value), b = mm(f, p.wb.value);
  Matrix gated(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) gated[i] = std::tanh(a[i]) * sigm(b[i]);
  const Matrix w = softmax_rows(tr(mm(gated, p.wc.value)));
  if (weights) *weights = w;
  return lin(mm(w, f), p.rho);
}

fu::BackboneConfig toy_config(std::size_t d = 4) {
  fu::BackboneConfig c;
  c.d = d;
  c.n_c = 2;
  c.deep_dim = 3;
  c.radiomics_sizes = {2, 3, 1};
  c.clinical_sizes = {2, 1, 2, 3, 1};
  c.heads = 2;
  c.dropout = 0.25;
  return c;
}

fu::InputTensors toy_inputs(Tape& tape, const fu::BackboneConfig& c, std::mt19937_64& rng, std::size_t bag = 5) {
  fu::InputTensors in;
  in.deep = tape.constant(random_matrix(rng, bag, c.deep_dim, 0.0, 1.0));
  for (std::size_t s : c.radiomics_sizes) in.radiomics.push_back(tape.constant(random_matrix(rng, 1, s, 0.0, 1.0)));
  for (std::size_t s : c.clinical_sizes) in.clinical.push_back(tape.constant(random_matrix(rng, 1, s, 0.0, 1.0)));
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoders

TEST(Encoders, ZeroWeightsGiveZeroRadiomicsEmbedding) {
  fu::Backbone bb(toy_config(), 1);
  bb.zero();
  Tape tape;
  std::mt19937_64 rng(2);
  const auto in = toy_inputs(tape, bb.config(), rng);
  const Tensor f = bb.encode_radiomics(nn::Binder(tape, false), in.radiomics, {});
  EXPECT_EQ(f.rows(), 3u);
  EXPECT_EQ(f.cols(), 4u);
  for (double v : f.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Encoders, EvalModeIsRepeatable) {
  fu::Backbone bb(toy_config(), 3);
  std::mt19937_64 rng(4);
  Tape t1, t2;
  auto a = toy_inputs(t1, bb.config(), rng);
  std::mt19937_64 rng2(4);
  auto b = toy_inputs(t2, bb.config(), rng2);
  EXPECT_EQ(bb.encode_radiomics(nn::Binder(t1, false), a.radiomics, {}).value(),
            bb.encode_radiomics(nn::Binder(t2, false), b.radiomics, {}).value());
}

TEST(Encoders, RadiomicsMatchesHandRolledSeluStack) {
  fu::Backbone bb(toy_config(), 5);
  Tape tape;
  std::mt19937_64 rng(6);
  const auto in = toy_inputs(tape, bb.config(), rng);
  const Matrix got = bb.encode_radiomics(nn::Binder(tape, false), in.radiomics, {}).value();
  for (std::size_t g = 0; g < 3; ++g) {
    const auto& enc = bb.radiomics_encoders[g];
    const Matrix h = map(lin(map(lin(in.radiomics[g].value(), enc.l1), selu), enc.l2), selu);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got(g, j), h(0, j), 1e-12);
  }
}

TEST(Encoders, DropoutOnlyWhenRngSupplied) {
  fu::Backbone bb(toy_config(), 7);
  Tape tape;
  std::mt19937_64 rng(8);
  const auto in = toy_inputs(tape, bb.config(), rng);
  nn::Rng drop_rng(9);
  const Matrix eval = bb.encode_radiomics(nn::Binder(tape, false), in.radiomics, {}).value();
  const Matrix train = bb.encode_radiomics(nn::Binder(tape, false), in.radiomics, {&drop_rng, 0.25}).value();
  EXPECT_NE(eval, train);
}

TEST(Encoders, GroupCountMismatchThrows) {
  fu::Backbone bb(toy_config(), 1);
  Tape tape;
  std::vector<Tensor> two = {tape.constant(Matrix(1, 2)), tape.constant(Matrix(1, 3))};
  EXPECT_THROW(bb.encode_radiomics(nn::Binder(tape, false), two, {}), tipsfuse::ShapeError);
  EXPECT_THROW(bb.encode_clinical(nn::Binder(tape, false), two, {}), tipsfuse::ShapeError);
}

TEST(Encoders, DeepIdentityProjectionAndRowDuplication) {
  auto cfg = toy_config(3);
  cfg.heads = 1;
  fu::Backbone bb(cfg, 1);
  bb.deep_projection.zero();
  for (std::size_t i = 0; i < 3; ++i) bb.deep_projection.weight.value(i, i) = 1.0;
  Tape tape;
  const Matrix bag = Matrix::from_rows({{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {0.7, 0.5, 0.9}});
  const Matrix f = bb.encode_deep(nn::Binder(tape, false), tape.constant(bag)).value();
  EXPECT_EQ(f, bag);
  EXPECT_EQ(f.row(0)[2], f.row(1)[2]);
}

TEST(Encoders, DeepDimMismatchThrows) {
  fu::Backbone bb(toy_config(), 1);
  Tape tape;
  EXPECT_THROW(bb.encode_deep(nn::Binder(tape, false), tape.constant(Matrix(2, 5))), tipsfuse::ShapeError);
}

TEST(Encoders, DeepWeightGradientIsBagColumnSums) {
  fu::Backbone bb(toy_config(), 11);
  std::mt19937_64 rng(12);
  const Matrix bag = random_matrix(rng, 6, 3);
  auto f = [&](Tape& t) { return ad::sum_all(bb.encode_deep(nn::Binder(t, true), t.constant(bag))); };
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);
  const auto grads = tape.parameter_grads({&bb.deep_projection.weight});
  const Matrix& g = grads.at(&bb.deep_projection.weight);
  for (std::size_t i = 0; i < 3; ++i) {
    double colsum = 0.0;
    for (std::size_t r = 0; r < 6; ++r) colsum += bag(r, i);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g(i, j), colsum, 1e-12);
  }
  EXPECT_LT(ad::finite_difference_check(f, {&bb.deep_projection.weight}, 1e-5).max_rel_error, 1e-8);
}

// ---------------------------------------------------------------------------
// Gated attention pooling

TEST(Gap, SingletonGivesUnitWeightAndRhoOfToken) {
  fu::GapPool pool("p", 4, 3);
  nn::Rng rng(1);
  pool.init(rng);
  std::mt19937_64 r2(2);
  const Matrix f = random_matrix(r2, 1, 4);
  Tape tape;
  Matrix w;
  const Matrix out = pool.forward(nn::Binder(tape, false), tape.constant(f), &w).value();
  ASSERT_EQ(out.rows(), 3u);
  const Matrix rho = lin(f, pool.rho);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_DOUBLE_EQ(w(e, 0), 1.0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(e, j), rho(0, j), 1e-12);
  }
}

TEST(Gap, IdenticalRowsPoolToRhoOfRow) {
  fu::GapPool pool("p", 3, 2);
  nn::Rng rng(3);
  pool.init(rng);
  const Matrix f = Matrix::from_rows({{0.3, -0.2, 0.5}, {0.3, -0.2, 0.5}, {0.3, -0.2, 0.5}, {0.3, -0.2, 0.5}});
  Tape tape;
  const Matrix out = pool.forward(nn::Binder(tape, false), tape.constant(f)).value();
  const Matrix rho = lin(Matrix::from_rows({{0.3, -0.2, 0.5}}), pool.rho);
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(e, j), rho(0, j), 1e-12);
}

TEST(Gap, MatchesHandEvaluationAndWeightsSumToOne) {
  fu::GapPool pool("p", 4, 2);
  nn::Rng rng(5);
  pool.init(rng);
  std::mt19937_64 r2(6);
  const Matrix f = random_matrix(r2, 3, 4);
  Tape tape;
  Matrix w;
  const Matrix out = pool.forward(nn::Binder(tape, false), tape.constant(f), &w).value();
  Matrix w_ref;
  expect_near(out, gap_reference(f, pool, &w_ref), 1e-12);
  expect_near(w, w_ref, 1e-12);
  for (std::size_t e = 0; e < 2; ++e) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += w(e, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Gap, GradientsMatchFiniteDifferences) {
  fu::GapPool pool("p", 3, 2);
  nn::Rng rng(7);
  pool.init(rng);
  std::mt19937_64 r2(8);
  Parameter f{"f", random_matrix(r2, 4, 3)};
  ad::ParamList ps;
  pool.collect(ps);
  ps.push_back(&f);
  auto fn = [&](Tape& t) {
    Tensor y = pool.forward(nn::Binder(t, true), t.param(f));
    return ad::sum_all(ad::mul(y, y));
  };
  EXPECT_LT(ad::finite_difference_check(fn, ps, 1e-5).max_rel_error, 1e-7);
}

// ---------------------------------------------------------------------------
// Set encoder

TEST(SetEncoder, PermutationEquivariant) {
  fu::SetEncoder enc("s", 4, 2, 8);
  nn::Rng rng(1);
  enc.init(rng);
  std::mt19937_64 r2(2);
  const Matrix x = random_matrix(r2, 5, 4);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Matrix xp(5, 4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) xp(i, j) = x(perm[i], j);
  Tape tape;
  const Matrix y = enc.forward(nn::Binder(tape, false), tape.constant(x)).value();
  const Matrix yp = enc.forward(nn::Binder(tape, false), tape.constant(xp)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(yp(i, j), y(perm[i], j), 1e-12);
}

// Independent evaluation of the block: per-head softmax(Q K^T / sqrt(dk)) V,
// output projection, residual, then residual feed-forward on the normed sum.
Matrix set_reference(const fu::SetEncoder& e, const Matrix& x) {
  const std::size_t d = x.cols(), dk = d / e.heads;
  const Matrix y = layer_norm(x, e.ln1);
  const Matrix q = lin(y, e.q), k = lin(y, e.k), v = lin(y, e.v);
  Matrix cat(x.rows(), d);
  for (std::size_t h = 0; h < e.heads; ++h) {
    Matrix s = mm(cols(q, h * dk, dk), tr(cols(k, h * dk, dk)));
    for (auto& val : s.values()) val /= std::sqrt(static_cast<double>(dk));
    const Matrix o = mm(softmax_rows(s), cols(v, h * dk, dk));
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < dk; ++j) cat(i, h * dk + j) = o(i, j);
  }
  const Matrix x1 = plus(x, lin(cat, e.o));
  const Matrix ffn = lin(map(lin(layer_norm(x1, e.ln2), e.ff1), [](double z) { return std::max(z, 0.0); }), e.ff2);
  return plus(x1, ffn);
}

TEST(SetEncoder, TwoTokensMatchHandComputedAttention) {
  fu::SetEncoder enc("s", 4, 2, 6);
  nn::Rng rng(3);
  enc.init(rng);
  ad::ParamList ps;
  enc.collect(ps);
  randomize(ps, 4, 0.8);
  const Matrix x = Matrix::from_rows({{0.5, -1.0, 0.25, 2.0}, {-0.3, 0.8, 1.5, 0.1}});
  Tape tape;
  expect_near(enc.forward(nn::Binder(tape, false), tape.constant(x)).value(), set_reference(enc, x), 1e-12);
}

TEST(SetEncoder, SingleTokenAttentionIsIdentityMixing) {
  fu::SetEncoder enc("s", 4, 4, 8);
  nn::Rng rng(5);
  enc.init(rng);
  const Matrix x = Matrix::from_rows({{0.2, 0.4, -0.6, 1.0}});
  // With one token every softmax is 1, so attention output is v(ln1(x)).
  const Matrix x1 = plus(x, lin(lin(layer_norm(x, enc.ln1), enc.v), enc.o));
  const Matrix ref =
      plus(x1, lin(map(lin(layer_norm(x1, enc.ln2), enc.ff1), [](double z) { return std::max(z, 0.0); }), enc.ff2));
  Tape tape;
  expect_near(enc.forward(nn::Binder(tape, false), tape.constant(x)).value(), ref, 1e-12);
}

TEST(SetEncoder, HeadsMustDivideWidth) {
  EXPECT_THROW(fu::SetEncoder("s", 6, 4, 12), tipsfuse::ConfigError);
  EXPECT_THROW(fu::SetEncoder("s", 6, 0, 12), tipsfuse::ConfigError);
}

TEST(SetEncoder, GradientsMatchFiniteDifferences) {
  fu::SetEncoder enc("s", 4, 2, 6);
  nn::Rng rng(9);
  enc.init(rng);
  std::mt19937_64 r2(10);
  Parameter x{"x", random_matrix(r2, 3, 4)};
  ad::ParamList ps;
  enc.collect(ps);
  ps.push_back(&x);
  auto fn = [&](Tape& t) {
    Tensor y = enc.forward(nn::Binder(t, true), t.param(x));
    return ad::sum_all(ad::mul(y, ad::tanh(y)));
  };
  EXPECT_LT(ad::finite_difference_check(fn, ps, 1e-6).max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------
// Progressive orthogonality

TEST(Pod, GammaFixtures) {
  EXPECT_NEAR(fu::pod_gamma(0.9, 0.1, 0.2, 0.9, 0, 100), std::exp(-4.0), 1e-15);
  EXPECT_NEAR(fu::pod_gamma(0.9, 0.1, 0.2, 0.9, 0, 100), 0.01832, 1e-5);
  EXPECT_EQ(fu::pod_gamma(0.9, 0.1, 0.2, 0.7, 100, 100), 1.0);
  EXPECT_EQ(fu::pod_gamma(0.5, 0.5, 0.0, 0.5, 0, 10), 1.0);
  // Halfway: exponent 4 * (0.8 / 0.9) * 0.5^0.9.
  EXPECT_NEAR(fu::pod_gamma(0.9, 0.1, 0.2, 0.8, 5, 10), std::exp(-4.0 * (0.8 / 0.9) * std::pow(0.5, 0.9)), 1e-14);
}

TEST(Pod, GammaStaysInUnitInterval) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double mean = u(rng), max0 = mean + std::fabs(u(rng)) * 3, ema = u(rng);
    const long t_max = 1 + static_cast<long>(std::fabs(u(rng)) * 50);
    const long t = static_cast<long>(std::fabs(u(rng)) * static_cast<double>(t_max));
    const double g = fu::pod_gamma(max0, mean, std::fabs(u(rng)) * 1e-3, ema, t, t_max);
    EXPECT_GT(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(Pod, StateCapturesFirstStatisticsAndUpdatesEma) {
  fu::PodState s;
  s.t_max = 10;
  const Matrix s0 = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.3}});
  const double g0 = s.step(s0);
  EXPECT_TRUE(s.initialised);
  EXPECT_DOUBLE_EQ(s.max0, 0.9);
  EXPECT_DOUBLE_EQ(s.mean0, 0.375);
  const double sd = std::sqrt((0.525 * 0.525 + 0.275 * 0.275 + 0.175 * 0.175 + 0.075 * 0.075) / 4.0);
  EXPECT_NEAR(s.sigma0, sd, 1e-15);
  EXPECT_DOUBLE_EQ(s.ema_max, 0.9);
  EXPECT_NEAR(g0, std::exp(-(0.9 - 0.375) / sd), 1e-14);
  EXPECT_EQ(s.t, 1);
  s.step(Matrix::from_rows({{0.5, 0.1}, {0.2, 0.3}}));
  EXPECT_DOUBLE_EQ(s.ema_max, 0.99 * 0.9 + 0.01 * 0.5);
  EXPECT_DOUBLE_EQ(s.max0, 0.9);
}

TEST(Pod, SigmaClampedForConstantMatrix) {
  fu::PodState s;
  s.t_max = 5;
  EXPECT_NEAR(s.step(Matrix(3, 3, 0.4)), 1.0, 1e-9);  // mean carries rounding noise
  EXPECT_EQ(s.sigma0, 1e-6);
}

TEST(Pod, PercentileLinearInterpolation) {
  EXPECT_DOUBLE_EQ(fu::percentile({0.1, 0.2, 0.3, 0.9}, 75.0), 0.45);
  EXPECT_DOUBLE_EQ(fu::percentile({3.0, 1.0, 2.0}, 50.0), 2.0);
  EXPECT_DOUBLE_EQ(fu::percentile({3.0, 1.0, 2.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(fu::percentile({3.0, 1.0, 2.0}, 100.0), 3.0);
  EXPECT_DOUBLE_EQ(fu::percentile({5.0}, 30.0), 5.0);
  EXPECT_THROW(fu::percentile({}, 50.0), std::invalid_argument);
}

TEST(Pod, TwoByTwoFixtureSelectsLargest) {
  Tape tape;
  const auto pl = fu::pod_loss(tape.constant(Matrix::from_rows({{0.9, 0.1}, {0.2, 0.3}})), 0.25);
  EXPECT_DOUBLE_EQ(pl.threshold, 0.45);
  EXPECT_EQ(pl.mask, Matrix::from_rows({{1, 0}, {0, 0}}));
  EXPECT_DOUBLE_EQ(pl.loss.item(), 0.9);
}

TEST(Pod, OrthogonalRowsGiveZeroAndIdenticalRowsPositive) {
  Tape tape;
  const Tensor a = tape.constant(Matrix::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}}));
  const Tensor b = tape.constant(Matrix::from_rows({{0, 0, 1, 0}, {0, 0, 0, 2}}));
  EXPECT_EQ(fu::pod_loss(fu::cosine_similarity(a, b), 1.0).loss.item(), 0.0);
  const auto same = fu::pod_loss(fu::cosine_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(same.loss.item(), 0.5);  // two diagonal ones among four entries
}

TEST(Pod, ZeroNormRowsHaveZeroSimilarity) {
  Tape tape;
  const Tensor a = tape.constant(Matrix::from_rows({{0, 0}, {1, 1}}));
  const Tensor b = tape.constant(Matrix::from_rows({{1, 0}, {0, 3}}));
  const Matrix s = fu::cosine_similarity(a, b).value();
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_NEAR(s(1, 0), std::sqrt(0.5), 1e-15);
}

TEST(Pod, MaskCountTracksGamma) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 9;
    Tape tape;
    const Tensor a = tape.constant(random_matrix(rng, n, 5));
    const Tensor b = tape.constant(random_matrix(rng, n, 5));
    const double gamma = std::max(u(rng), 1e-3);
    const auto pl = fu::pod_loss(fu::cosine_similarity(a, b), gamma);
    const double count = std::accumulate(pl.mask.values().begin(), pl.mask.values().end(), 0.0);
    const double expected = std::ceil(gamma * static_cast<double>(n * n));
    EXPECT_LE(std::fabs(count - expected), 1.0) << "n=" << n << " gamma=" << gamma;
  }
}

TEST(Pod, ReplayedMaskReproducesLoss) {
  std::mt19937_64 rng(4);
  Tape tape;
  const Tensor s = fu::cosine_similarity(tape.constant(random_matrix(rng, 4, 3)), tape.constant(random_matrix(rng, 4, 3)));
  const auto pl = fu::pod_loss(s, 0.3);
  EXPECT_DOUBLE_EQ(fu::pod_loss_with_mask(s, pl.mask).item(), pl.loss.item());
  EXPECT_THROW(fu::pod_loss_with_mask(s, Matrix(4, 4)), tipsfuse::NumericError);
  EXPECT_THROW(fu::pod_loss_with_mask(s, Matrix(3, 4, 1.0)), tipsfuse::ShapeError);
}

TEST(Pod, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Parameter a{"a", random_matrix(rng, 4, 3)}, b{"b", random_matrix(rng, 4, 3)};
  Matrix mask;
  {
    Tape tape;
    mask = fu::pod_loss(fu::cosine_similarity(tape.param(a), tape.param(b)), 0.4).mask;
  }
  auto fn = [&](Tape& t) { return fu::pod_loss_with_mask(fu::cosine_similarity(t.param(a), t.param(b)), mask); };
  EXPECT_LT(ad::finite_difference_check(fn, {&a, &b}, 1e-6).max_rel_error, 1e-7);
}

TEST(Pod, OptimisingOrthogonalityHalvesTopSimilarities) {
  std::mt19937_64 rng(6);
  Parameter a{"a", random_matrix(rng, 8, 8)}, b{"b", random_matrix(rng, 8, 8)};
  const auto cosine = [&] {
    Tape t;
    return fu::cosine_similarity(t.constant(a.value), t.constant(b.value)).value();
  };
  const Matrix s0 = cosine();
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return s0[i] > s0[j]; });
  const std::vector<std::size_t> top(order.begin(), order.begin() + 7);  // ceil(10% of 64)
  auto top_mean = [&](const Matrix& s) {
    double m = 0.0;
    for (std::size_t i : top) m += std::fabs(s[i]);
    return m / static_cast<double>(top.size());
  };

  fu::PodState state;
  state.t_max = 200;
  ad::Adam opt({&a, &b}, {.lr = 1e-2, .weight_decay = 0.0});
  for (int step = 0; step < 200; ++step) {
    Tape tape;
    const Tensor s = fu::cosine_similarity(tape.param(a), tape.param(b));
    const Tensor loss = fu::pod_loss(s, state.step(s.value())).loss;
    tape.backward(loss);
    opt.step(tape.parameter_grads({&a, &b}));
  }
  EXPECT_LE(top_mean(cosine()), 0.5 * top_mean(s0));
}

// ---------------------------------------------------------------------------
// Fine-to-coarse alignment

TEST(Mgra, OutputShapes) {
  fu::GapPool coarse("c", 4, 1);
  nn::Rng rng(1);
  coarse.init(rng);
  std::mt19937_64 r2(2);
  Tape tape;
  fu::Frozen rec;
  const auto out = fu::mgra_forward(tape.constant(random_matrix(r2, 5, 4)), tape.constant(random_matrix(r2, 2, 4)),
                                    coarse, nn::Binder(tape, false), {}, nullptr, rec);
  EXPECT_EQ(out.deep_cat.rows(), 3u);
  EXPECT_EQ(out.deep_cat.cols(), 4u);
  EXPECT_EQ(out.radiomics_cat.rows(), 3u);
  EXPECT_EQ(out.radiomics_cat.cols(), 4u);
  EXPECT_EQ(rec.plans[0].rows(), 5u);
  EXPECT_EQ(rec.plans[0].cols(), 2u);
  EXPECT_EQ(rec.plans[1].rows(), 2u);
  EXPECT_EQ(rec.plans[1].cols(), 1u);
}

TEST(Mgra, ConstantDeepRowsStayConstant) {
  fu::GapPool coarse("c", 3, 2);
  nn::Rng rng(3);
  coarse.init(rng);
  std::mt19937_64 r2(4);
  const Matrix v = Matrix::from_rows({{0.4, -0.1, 0.7}});
  Matrix fd(6, 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) fd(i, j) = v(0, j);
  Tape tape;
  fu::Frozen rec;
  const auto out = fu::mgra_forward(tape.constant(fd), tape.constant(random_matrix(r2, 4, 3)), coarse,
                                    nn::Binder(tape, false), {}, nullptr, rec);
  const Matrix& cat = out.deep_cat.value();
  for (std::size_t i = 0; i < cat.rows(); ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(cat(i, j), v(0, j), 1e-12);
}

TEST(Mgra, FineAggregationApproachesExactPlan) {
  // Two well separated clusters so the exact plan is unique.
  const Matrix fd = Matrix::from_rows({{0.0, 0.0}, {0.1, 0.0}, {5.0, 5.0}, {5.1, 5.0}});
  const Matrix fr = Matrix::from_rows({{0.05, 0.1}, {5.0, 5.1}});
  ot::OtConfig cfg{.epsilon = 0.01, .max_iters = 5000, .tol = 1e-12};
  fu::GapPool coarse("c", 2, 1);
  nn::Rng rng(5);
  coarse.init(rng);
  Tape tape;
  fu::Frozen rec;
  const auto out = fu::mgra_forward(tape.constant(fd), tape.constant(fr), coarse, nn::Binder(tape, false), cfg,
                                    nullptr, rec);
  const auto lp = ot::lp_oracle(ot::cost_matrix(fd, fr), ot::uniform_marginal(4), ot::uniform_marginal(2));
  ot::TransportPlan exact;
  exact.plan = lp.plan;
  const Matrix ref = ot::ot_aggregate(exact, fd);
  const Matrix got = ad::slice_rows(out.deep_cat, 0, 2).value();
  expect_near(got, ref, 1e-2);
}

TEST(Mgra, ReplayReusesRecordedPlans) {
  fu::GapPool coarse("c", 3, 2);
  nn::Rng rng(6);
  coarse.init(rng);
  std::mt19937_64 r2(7);
  const Matrix fd = random_matrix(r2, 4, 3), fr = random_matrix(r2, 3, 3);
  Tape tape;
  fu::Frozen first;
  fu::mgra_forward(tape.constant(fd), tape.constant(fr), coarse, nn::Binder(tape, false), {}, nullptr, first);
  fu::Frozen fake = first;
  fake.plans[0].plan.fill(1.0 / 12.0);
  fu::Frozen rec;
  const auto out =
      fu::mgra_forward(tape.constant(fd), tape.constant(fr), coarse, nn::Binder(tape, false), {}, &fake, rec);
  EXPECT_EQ(rec.plans[0].plan, fake.plans[0].plan);
  // Uniform plan averages all deep rows into every fine row.
  const Matrix fine = ad::slice_rows(out.deep_cat, 0, 3).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += fd(i, j) / 4.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fine(i, j), mean, 1e-12);
  }
  fake.plans[0].plan = Matrix(2, 2);
  EXPECT_THROW(
      fu::mgra_forward(tape.constant(fd), tape.constant(fr), coarse, nn::Binder(tape, false), {}, &fake, rec),
      tipsfuse::ShapeError);
}

TEST(Mgra, CoattentionPlanIsScaleInvariant) {
  std::mt19937_64 r2(8);
  const Matrix a = random_matrix(r2, 3, 2), b = random_matrix(r2, 4, 2);
  Matrix a10 = a, b10 = b;
  for (auto& v : a10.values()) v *= 10;
  for (auto& v : b10.values()) v *= 10;
  expect_near(fu::coattention_plan(a, b, {}).plan, fu::coattention_plan(a10, b10, {}).plan, 1e-12);
}

// ---------------------------------------------------------------------------
// Full backbone

TEST(Backbone, ToyForwardHasLengthFiveD) {
  fu::Backbone bb(toy_config(4), 1);
  Tape tape;
  std::mt19937_64 rng(2);
  const auto r = bb.forward(tape, toy_inputs(tape, bb.config(), rng), {});
  EXPECT_EQ(r.h_final.rows(), 1u);
  EXPECT_EQ(r.h_final.cols(), 20u);
  EXPECT_EQ(bb.output_dim(), 20u);
  EXPECT_EQ(ad::first_non_finite(r.h_final.value()), r.h_final.value().size());
  EXPECT_FALSE(r.ortho.valid());
  EXPECT_EQ(r.frozen.plans.size(), 4u);
  EXPECT_EQ(r.gap_weights.size(), 6u);
  EXPECT_EQ(r.gap_weights[0].rows(), 2u);
  EXPECT_EQ(r.gap_weights[0].cols(), 3u);
  EXPECT_EQ(r.similarity.rows(), 5u);  // 3 groups + 2 coarse summaries
}

TEST(Backbone, AnyBagSizeAndModelInputOverload) {
  fu::Backbone bb(toy_config(4), 3);
  for (std::size_t bag : {1u, 2u, 9u}) {
    Tape tape;
    std::mt19937_64 rng(bag);
    const auto r = bb.forward(tape, toy_inputs(tape, bb.config(), rng, bag), {});
    EXPECT_EQ(r.h_final.cols(), 20u);
  }
  tipsfuse::data::ModelInput mi;
  mi.deep = Matrix(2, 3, 0.5);
  for (std::size_t s : bb.config().radiomics_sizes) mi.radiomics.emplace_back(1, s, 0.2);
  for (std::size_t s : bb.config().clinical_sizes) mi.clinical.emplace_back(1, s, 0.3);
  Tape tape;
  EXPECT_EQ(bb.forward(tape, mi, {}).h_final.cols(), 20u);
}

TEST(Backbone, AllPlansHaveFeasibleMarginals) {
  fu::Backbone bb(toy_config(4), 4);
  Tape tape;
  std::mt19937_64 rng(5);
  const auto r = bb.forward(tape, toy_inputs(tape, bb.config(), rng), {});
  for (const auto& p : r.frozen.plans) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) s += p.plan(i, j);
      EXPECT_NEAR(s, 1.0 / static_cast<double>(p.rows()), 1e-12);
    }
    for (std::size_t j = 0; j < p.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) s += p.plan(i, j);
      EXPECT_NEAR(s, 1.0 / static_cast<double>(p.cols()), 1e-12);
    }
  }
}

TEST(Backbone, ZeroedClinicalEncodersGiveIdenticalGuidedRows) {
  fu::Backbone bb(toy_config(4), 6);
  for (auto& e : bb.clinical_encoders) {
    e.l1.zero();
    e.l2.zero();
  }
  Tape tape;
  std::mt19937_64 rng(7);
  const auto in = toy_inputs(tape, bb.config(), rng);
  const nn::Binder b(tape, false);
  const Tensor h_cli = bb.clinical_encoder.forward(b, bb.encode_clinical(b, in.clinical, {}));
  for (std::size_t i = 1; i < h_cli.rows(); ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(h_cli.value()(i, j), h_cli.value()(0, j), 1e-12);
  const Tensor h_deep = tape.constant(random_matrix(rng, 6, 4));
  fu::Frozen rec;
  const Matrix guided = fu::ot_guided(h_deep, h_cli, {}, nullptr, fu::PlanId::deep_clinical, rec).value();
  ASSERT_EQ(guided.rows(), 5u);
  for (std::size_t i = 1; i < guided.rows(); ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(guided(i, j), guided(0, j), 1e-9);

  // The same holds inside the full pass: clinical plan columns coincide.
  const auto r = bb.forward(tape, in, {});
  for (auto id : {fu::PlanId::deep_clinical, fu::PlanId::radiomics_clinical}) {
    const Matrix& p = r.frozen.plans[static_cast<std::size_t>(id)].plan;
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 1; j < p.cols(); ++j) EXPECT_NEAR(p(i, j), p(i, 0), 1e-9);
  }
}

TEST(Backbone, EvalModeIsDeterministic) {
  fu::Backbone a(toy_config(4), 9), b(toy_config(4), 9);
  Tape t1, t2;
  std::mt19937_64 r1(10), r2(10);
  EXPECT_EQ(a.forward(t1, toy_inputs(t1, a.config(), r1), {}).h_final.value(),
            b.forward(t2, toy_inputs(t2, b.config(), r2), {}).h_final.value());
}

TEST(Backbone, FullGradientCheckWithFrozenPlans) {
  fu::Backbone bb(toy_config(4), 12);
  std::mt19937_64 rng(13);
  Tape setup;
  const auto in0 = toy_inputs(setup, bb.config(), rng);
  Matrix deep = in0.deep.value();
  std::vector<Matrix> rad, cli;
  for (const auto& t : in0.radiomics) rad.push_back(t.value());
  for (const auto& t : in0.clinical) cli.push_back(t.value());
  const Matrix weights = random_matrix(rng, 1, 20);

  auto inputs = [&](Tape& t) {
    fu::InputTensors in;
    in.deep = t.constant(deep);
    for (const auto& m : rad) in.radiomics.push_back(t.constant(m));
    for (const auto& m : cli) in.clinical.push_back(t.constant(m));
    return in;
  };
  fu::PodState pod;
  pod.t_max = 10;
  fu::Frozen frozen;
  {
    Tape t;
    frozen = bb.forward(t, inputs(t), {.trainable = true, .pod = &pod}).frozen;
  }
  ASSERT_TRUE(frozen.pod_mask.has_value());
  fu::PodState unused;
  auto fn = [&](Tape& t) {
    const auto r = bb.forward(t, inputs(t), {.trainable = true, .pod = &unused, .replay = &frozen});
    return ad::add(ad::sum_all(ad::mul(r.h_final, t.constant(weights))), ad::scale(r.ortho, 0.1));
  };
  const auto rep = ad::finite_difference_check(fn, bb.params(), 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_param << "[" << rep.worst_index << "]";
  EXPECT_FALSE(unused.initialised);
  EXPECT_GT(rep.entries_checked, 500u);
}

TEST(Backbone, ParameterCountAndNames) {
  const auto cfg = toy_config(4);
  fu::Backbone bb(cfg, 1);
  std::size_t expected = 0;
  for (std::size_t s : cfg.radiomics_sizes) expected += s * 4 + 4 + 4 * 4 + 4;
  expected += 3 * 4 + 4;
  for (std::size_t s : cfg.clinical_sizes) expected += s * 4 + 4 + 4 * 4 + 4;
  auto gap = [](std::size_t nc) { return 4 * 4 * 2 + 4 * nc + 4 * 4 + 4; };
  expected += gap(2);
  const std::size_t set = 2 * 2 * 4 + 4 * (4 * 4 + 4) + (4 * 8 + 8) + (8 * 4 + 4);
  expected += 3 * set + 5 * gap(1);
  EXPECT_EQ(bb.parameter_count(), expected);
  std::vector<std::string> names;
  for (const auto* p : std::as_const(bb).params()) names.push_back(p->name);
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
}

TEST(Backbone, RejectsBadConfigAndInputs) {
  auto cfg = toy_config(4);
  cfg.heads = 3;
  EXPECT_THROW(fu::Backbone(cfg, 1), tipsfuse::ConfigError);
  cfg = toy_config(4);
  cfg.radiomics_sizes.clear();
  EXPECT_THROW(fu::Backbone(cfg, 1), tipsfuse::ConfigError);
  fu::Backbone bb(toy_config(4), 1);
  Tape tape;
  std::mt19937_64 rng(1);
  auto in = toy_inputs(tape, bb.config(), rng);
  in.clinical.pop_back();
  EXPECT_THROW(bb.forward(tape, in, {}), tipsfuse::ShapeError);
  std::mt19937_64 rng2(1);
  in = toy_inputs(tape, bb.config(), rng2);
  in.radiomics[1] = tape.constant(Matrix(1, 7));
  EXPECT_THROW(bb.forward(tape, in, {}), tipsfuse::ShapeError);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "structnode/priors/model.hpp"
#include "support/finite_diff.hpp"

namespace pr = structnode::priors;
namespace ad = structnode::ad;
using pr::Matrix;
using pr::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

pr::ModelSpec model(pr::ModelKind kind, pr::Family family = pr::Family::HarmonicOscillator,
                    std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  pr::ModelOptions o;
  o.kind = kind;
  o.family = family;
  o.hidden = {8, 8};
  return pr::make_model(o, rng);
}

// H(x) = (1/ε²) Σ_i [silu(ε x_i) + silu(-ε x_i)] ≈ ½|x|² for small ε.
ad::Mlp quadratic_hamiltonian(Eigen::Index dim, double eps) {
  Matrix w1 = Matrix::Zero(2 * dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    w1(2 * i, i) = eps;
    w1(2 * i + 1, i) = -eps;
  }
  Matrix w2 = Matrix::Constant(1, 2 * dim, 1.0 / (eps * eps));
  return ad::Mlp("H", {{w1, Vector::Zero(2 * dim)}, {w2, Vector::Zero(1)}});
}

Vector energy_gradient(const pr::ModelSpec& m, const Vector& x) {
  ad::Tape t;
  ad::Var xv = t.variable(x);
  ad::Var e = pr::hamiltonian(m, t, xv);
  if (m.kind == pr::ModelKind::HamiltonianSecondOrder) {
    const Eigen::Index n = m.d_x / 2;
    e = e + 0.5 * ad::sum_squares(ad::rows(xv, n, n));
  }
  t.backward(e);
  return t.grad(xv);
}

}  // namespace

TEST(EvalField, HamiltonianGeneralQuadratic) {
  auto m = model(pr::ModelKind::HamiltonianGeneral);
  m.H = quadratic_hamiltonian(2, 1e-3);
  Vector f = pr::eval_field(m, 0.0, vec({1.0, 0.0}));
  EXPECT_NEAR(f(0), 0.0, 1e-6);
  EXPECT_NEAR(f(1), -1.0, 1e-5);
}

TEST(EvalField, ParametricOscillator) {
  auto m = model(pr::ModelKind::Parametric);
  m.params[0].value(0, 0) = 1.0;
  Vector f = pr::eval_field(m, 0.0, vec({0.5, -0.2}));
  EXPECT_DOUBLE_EQ(f(0), -0.2);
  EXPECT_DOUBLE_EQ(f(1), -0.5);
  EXPECT_DOUBLE_EQ(m.coefficient("omega2"), 1.0);
}

TEST(EvalField, ParametricUsesOmegaSquared) {
  auto m = model(pr::ModelKind::Parametric);
  m.params[0].value(0, 0) = 2.0;
  EXPECT_DOUBLE_EQ(pr::eval_field(m, 0.0, vec({1.0, 0.0}))(1), -4.0);
}

TEST(EvalField, ExtendedOscillator) {
  auto m = model(pr::ModelKind::ExtendedState);
  ASSERT_EQ(m.d_x, 3);
  Vector f = pr::eval_field(m, 0.0, vec({1.0, 0.0, 4.0}));
  EXPECT_EQ(f, vec({0.0, -4.0, 0.0}));
}

TEST(EvalField, ExtendedRowsIdenticallyZero) {
  auto m = model(pr::ModelKind::ExtendedState, pr::Family::FitzHughNagumo);
  ASSERT_EQ(m.d_x, 5);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int k = 0; k < 50; ++k) {
    Vector x(5);
    for (int i = 0; i < 5; ++i) x(i) = d(rng);
    x(2) = 0.1 + std::abs(x(2));
    Vector f = pr::eval_field(m, 0.0, x, vec({d(rng)}));
    EXPECT_EQ(f.tail(3), Vector::Zero(3));
  }
}

TEST(EvalField, ResidualWithZeroNetIsPriorBitwise) {
  std::mt19937_64 rng(1);
  pr::ModelOptions o;
  o.kind = pr::ModelKind::ResidualOnPrior;
  o.family = pr::Family::VanDerPol;
  o.hidden = {6};
  o.A_prior = Matrix(2, 2);
  o.A_prior << 0.3, 1.0, -1.7, -0.2;
  o.B_prior = Matrix(2, 1);
  o.B_prior << 0.0, 1.0;
  auto m = pr::make_model(o, rng);
  m.norm.x_mean = vec({0.4, -0.3});
  m.norm.x_std = vec({2.0, 0.5});
  for (ad::Param* p : m.f->parameters()) p->value.setZero();
  Vector x = vec({0.7, -1.3}), u = vec({0.25});
  Vector expected = o.A_prior * x + o.B_prior * u;
  Vector f = pr::eval_field(m, 0.0, x, u);
  EXPECT_EQ(f, expected);
}

TEST(EvalField, OddHamiltonianRejected) {
  std::mt19937_64 rng(0);
  pr::ModelOptions o;
  o.kind = pr::ModelKind::HamiltonianGeneral;
  o.d_x = 3;
  EXPECT_THROW(pr::make_model(o, rng), structnode::ConfigError);
  auto m = model(pr::ModelKind::HamiltonianGeneral);
  m.d_x = 3;
  m.norm = pr::Normalization::identity(3, 0);
  EXPECT_THROW(pr::eval_field(m, 0.0, vec({1.0, 2.0, 3.0})), structnode::ConfigError);
}

TEST(EvalField, WrongStateDimension) {
  auto m = model(pr::ModelKind::Free);
  EXPECT_THROW(pr::eval_field(m, 0.0, vec({1.0})), structnode::ConfigError);
}

TEST(EvalField, SecondOrderPairsCopiesVelocities) {
  std::mt19937_64 rng(2);
  pr::ModelOptions o;
  o.kind = pr::ModelKind::SecondOrderPairs;
  o.family = pr::Family::Earthquake;
  o.pair_map = {{0, 1}, {2, 3}};
  o.hidden = {8};
  auto m = pr::make_model(o, rng);
  EXPECT_EQ(m.f->output_dim(), 2);
  std::normal_distribution<double> n01;
  for (int k = 0; k < 20; ++k) {
    Vector x(4);
    for (int i = 0; i < 4; ++i) x(i) = n01(rng);
    Vector f = pr::eval_field(m, 0.0, x, vec({n01(rng)}));
    EXPECT_EQ(f(0), x(1));
    EXPECT_EQ(f(2), x(3));
  }
}

TEST(EvalField, FreeFieldAppliesNormalization) {
  auto m = model(pr::ModelKind::Free, pr::Family::VanDerPol, 3);
  m.norm.x_mean = vec({1.0, -2.0});
  m.norm.x_std = vec({0.5, 4.0});
  m.norm.u_mean = vec({0.3});
  m.norm.u_std = vec({2.0});
  Vector x = vec({0.2, 1.1}), u = vec({-0.7});
  Vector in(3);
  in << (0.2 - 1.0) / 0.5, (1.1 + 2.0) / 4.0, (-0.7 - 0.3) / 2.0;
  Vector expected = m.f->evaluate(in).col(0).cwiseProduct(m.norm.x_std);
  EXPECT_LT((pr::eval_field(m, 0.0, x, u) - expected).norm(), 1e-14);
}

TEST(EvalField, BatchColumnsMatchPointwise) {
  auto m = model(pr::ModelKind::HamiltonianSecondOrder, pr::Family::HarmonicOscillator, 5);
  Matrix xs = Matrix::Random(2, 7);
  ad::Tape t;
  Matrix batch = pr::eval_field(m, t, 0.0, t.constant(xs), std::nullopt).value();
  for (Eigen::Index j = 0; j < 7; ++j) {
    EXPECT_LT((batch.col(j) - pr::eval_field(m, 0.0, Vector(xs.col(j)))).norm(), 1e-14);
  }
}

TEST(EvalField, ParametricInitWithinRanges) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = model(pr::ModelKind::Parametric, pr::Family::FitzHughNagumo, seed);
    ASSERT_EQ(m.params.size(), 3u);
    EXPECT_GE(m.param("eps_fhn").value(0, 0), 0.05);
    EXPECT_LE(m.param("eps_fhn").value(0, 0), 0.15);
    auto w = model(pr::ModelKind::Parametric, pr::Family::HarmonicOscillator, seed);
    EXPECT_GE(w.param("omega").value(0, 0), 0.5);
    EXPECT_LE(w.param("omega").value(0, 0), 2.0);
  }
  auto a = model(pr::ModelKind::Parametric, pr::Family::Earthquake, 7);
  auto b = model(pr::ModelKind::Parametric, pr::Family::Earthquake, 7);
  EXPECT_EQ(a.param("k_over_m").value, b.param("k_over_m").value);
}

TEST(HamiltonianProperties, EnergyConservedAnalytically) {
  for (auto kind : {pr::ModelKind::HamiltonianGeneral, pr::ModelKind::HamiltonianSecondOrder}) {
    auto m = model(kind, pr::Family::HarmonicOscillator, 11);
    m.norm.x_mean = vec({0.1, -0.2});
    m.norm.x_std = vec({0.7, 1.3});
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
      Vector x = vec({d(rng), d(rng)});
      worst = std::max(worst, std::abs(energy_gradient(m, x).dot(pr::eval_field(m, 0.0, x))));
    }
    EXPECT_LT(worst, 1e-9) << pr::to_string(kind);
  }
}

TEST(HamiltonianProperties, GeneralFieldIsSymplecticGradient) {
  auto m = model(pr::ModelKind::HamiltonianGeneral, pr::Family::HarmonicOscillator, 13);
  m.d_x = 4;
  m.norm = pr::Normalization::identity(4, 0);
  std::mt19937_64 rng(6);
  m.H = ad::Mlp("H", {4, 8, 1}, rng);
  Vector x = vec({0.3, -0.1, 0.8, 0.5});
  Vector g = energy_gradient(m, x);
  Vector f = pr::eval_field(m, 0.0, x);
  EXPECT_LT((f.head(2) - g.tail(2)).norm(), 1e-14);
  EXPECT_LT((f.tail(2) + g.head(2)).norm(), 1e-14);
}

TEST(HamiltonianProperties, DivergenceFree) {
  auto m = model(pr::ModelKind::HamiltonianGeneral, pr::Family::HarmonicOscillator, 21);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    Vector x = vec({d(rng), d(rng)});
    double div = 0.0;
    for (int i = 0; i < 2; ++i) {
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      div += (pr::eval_field(m, 0.0, xp)(i) - pr::eval_field(m, 0.0, xm)(i)) / (2.0 * h);
    }
    EXPECT_LT(std::abs(div), 1e-4);
  }
}

TEST(HamiltonianProperties, ParameterGradientMatchesFiniteDifferences) {
  for (auto kind : {pr::ModelKind::HamiltonianGeneral, pr::ModelKind::HamiltonianSecondOrder}) {
    auto m = model(kind, pr::Family::HarmonicOscillator, 31);
    m.norm.x_std = vec({0.8, 1.2});
    Matrix xs = Matrix::Random(2, 3);
    auto loss_on = [&](ad::Tape& t) {
      return ad::sum_squares(pr::eval_field(m, t, 0.0, t.constant(xs), std::nullopt));
    };
    ad::Tape t;
    t.backward(loss_on(t));
    auto params = m.parameters();
    std::vector<Matrix> got;
    for (auto* p : params) got.push_back(t.grad(*p));
    auto fd = structnode::testing::finite_difference(params, [&] {
      ad::Tape tt;
      return loss_on(tt).scalar();
    });
    EXPECT_LT(structnode::testing::relative_error(got, fd), 1e-6) << pr::to_string(kind);
  }
}

TEST(ResidualPenalty, ZeroNetGivesZero) {
  std::mt19937_64 rng(1);
  pr::ModelOptions o;
  o.kind = pr::ModelKind::ResidualOnPrior;
  o.A_prior = Matrix::Identity(2, 2);
  o.lambda_res = 3.0;
  o.hidden = {4};
  auto m = pr::make_model(o, rng);
  for (ad::Param* p : m.f->parameters()) p->value.setZero();
  EXPECT_EQ(pr::residual_penalty(m, Matrix::Random(2, 5)), 0.0);
}

TEST(ResidualPenalty, ZeroWeightGivesZero) {
  std::mt19937_64 rng(1);
  pr::ModelOptions o;
  o.kind = pr::ModelKind::ResidualOnPrior;
  o.A_prior = Matrix::Identity(2, 2);
  o.lambda_res = 0.0;
  auto m = pr::make_model(o, rng);
  EXPECT_EQ(pr::residual_penalty(m, Matrix::Random(2, 5)), 0.0);
}

TEST(ResidualPenalty, SinglePoint) {
  pr::ModelSpec m;
  m.kind = pr::ModelKind::ResidualOnPrior;
  m.d_x = 2;
  m.A_prior = Matrix::Zero(2, 2);
  m.lambda_res = 0.5;
  m.norm = pr::Normalization::identity(2, 0);
  m.f = ad::Mlp("f", {{Matrix::Zero(2, 2), vec({1.0, 2.0})}});
  EXPECT_DOUBLE_EQ(pr::residual_penalty(m, vec({0.3, -0.4})), 2.5);
}

TEST(ResidualPenalty, WrongKind) {
  auto m = model(pr::ModelKind::Free);
  EXPECT_THROW(pr::residual_penalty(m, Matrix::Zero(2, 1)), structnode::UsageError);
}

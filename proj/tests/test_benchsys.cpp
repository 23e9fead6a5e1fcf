#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "structnode/benchsys/systems.hpp"

namespace bench = structnode::bench;
namespace ode = structnode::ode;
using bench::Family;
using bench::Matrix;
using bench::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

bench::BenchmarkSystem system_of(Family f) { return {.kind = f}; }

bench::DatasetOptions options(Family f, Eigen::Index N, double sigma2, std::uint64_t seed) {
  auto s = system_of(f);
  return {bench::default_inputs(f), {sigma2, seed}, N, {0.0, 0.03, 100}, bench::BoxSampler::unit(s.d_x())};
}

}  // namespace

TEST(TrueField, VanDerPol) {
  Vector d = bench::true_field(system_of(Family::VanDerPol), 0.0, vec({1.0, 1.0}), vec({0.0}));
  EXPECT_EQ(d, vec({1.0, -1.0}));
}

TEST(TrueField, FitzHughNagumo) {
  Vector d = bench::true_field(system_of(Family::FitzHughNagumo), 0.0, vec({0.0, 0.0}), vec({0.0}));
  EXPECT_DOUBLE_EQ(d(0), 0.0);
  EXPECT_DOUBLE_EQ(d(1), 0.8);
}

TEST(TrueField, EarthquakeForcing) {
  auto in = bench::InputSpec::earthquake(1.0, 2.0);
  Vector d = bench::true_field(system_of(Family::Earthquake), 0.0, Vector::Zero(4), in);
  EXPECT_EQ(d, vec({0.0, -4.0, 0.0, -4.0}));
}

TEST(TrueField, ZeroFrequencyOscillator) {
  bench::BenchmarkSystem s{.kind = Family::HarmonicOscillator, .omega2 = 0.0};
  EXPECT_EQ(bench::true_field(s, 0.0, vec({0.3, -0.7}), Vector(0)), vec({-0.7, 0.0}));
}

TEST(TrueField, DimensionMismatch) {
  EXPECT_THROW(bench::true_field(system_of(Family::Earthquake), 0.0, Vector::Zero(2), vec({0.0})),
               structnode::ConfigError);
  EXPECT_THROW(bench::true_field(system_of(Family::VanDerPol), 0.0, Vector::Zero(2), Vector(0)),
               structnode::ConfigError);
}

TEST(InputSignal, Constant) {
  auto s = bench::input_signal(bench::InputSpec::constant(0.5), {0.0, 0.1, 7});
  EXPECT_TRUE((s.values.array() == 0.5).all());
}

TEST(InputSignal, SinusoidQuarterPeriod) {
  const double h = std::numbers::pi / 2.0;
  auto s = bench::input_signal(bench::InputSpec::sinusoid(1.2, 1.0), {0.0, h, 3});
  EXPECT_NEAR(s.values(1, 0), 1.2, 1e-15);
}

TEST(InputSignal, GeneratorReproducesSinusoid) {
  const double amp = 1.2, w = 1.7;
  ode::TimeGrid grid{0.0, 1e-3, 5001};
  auto field = [](double, const Vector& x, const auto&) { return bench::generator_field(x); };
  Matrix ws = ode::integrate(field, bench::generator_initial_state(amp, w), grid);
  auto u = bench::input_signal(bench::InputSpec::sinusoid(amp, w), grid);
  EXPECT_LT((ws.col(0) - u.values.col(0)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_TRUE((ws.col(2).array() == w * w).all());
}

TEST(GenerateDataset, NoiselessOutputsEqualStates) {
  for (Family f : {Family::HarmonicOscillator, Family::VanDerPol, Family::FitzHughNagumo,
                   Family::Earthquake}) {
    auto data = bench::generate_dataset(system_of(f), options(f, 3, 0.0, 1));
    for (const auto& tr : data) {
      EXPECT_EQ(tr.y.col(0), tr.x.col(0));
      EXPECT_EQ(tr.u.cols(), system_of(f).d_u());
      EXPECT_EQ(tr.x.rows(), 100);
    }
  }
}

TEST(GenerateDataset, NoiseVariance) {
  auto data = bench::generate_dataset(system_of(Family::VanDerPol), options(Family::VanDerPol, 40, 1e-2, 3));
  double sum = 0.0, sq = 0.0;
  Eigen::Index count = 0;
  for (const auto& tr : data) {
    Vector e = tr.y.col(0) - tr.x.col(0);
    sum += e.sum();
    sq += e.squaredNorm();
    count += e.size();
  }
  const double mean = sum / count;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sq / count - mean * mean, 1e-2, 1e-3);
}

TEST(GenerateDataset, InitialStatesAndInputsWithinRanges) {
  auto data = bench::generate_dataset(system_of(Family::Earthquake), options(Family::Earthquake, 30, 0.0, 9));
  for (const auto& tr : data) {
    EXPECT_LE(tr.x.row(0).cwiseAbs().maxCoeff(), 1.0);
    EXPECT_GE(tr.input.F0, 0.5);
    EXPECT_LE(tr.input.F0, 1.5);
    EXPECT_GE(tr.input.omega, 1.0);
    EXPECT_LE(tr.input.omega, 3.0);
    EXPECT_DOUBLE_EQ(tr.u(0, 0), -tr.input.F0 * tr.input.omega * tr.input.omega);
  }
}

TEST(GenerateDataset, SeededDeterminism) {
  auto o = options(Family::FitzHughNagumo, 6, 5e-4, 42);
  auto a = bench::generate_dataset(system_of(Family::FitzHughNagumo), o);
  o.threads = 3;
  auto b = bench::generate_dataset(system_of(Family::FitzHughNagumo), o);
  o.noise.seed = 43;
  auto c = bench::generate_dataset(system_of(Family::FitzHughNagumo), o);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].y, b[j].y);
    EXPECT_EQ(a[j].x, b[j].x);
    EXPECT_EQ(a[j].u, b[j].u);
  }
  EXPECT_NE(a[0].y, c[0].y);
}

TEST(GenerateDataset, RejectsEmpty) {
  EXPECT_THROW(bench::generate_dataset(system_of(Family::VanDerPol), options(Family::VanDerPol, 0, 0.0, 1)),
               structnode::ConfigError);
}

TEST(GenerateDataset, FinerSolverStep) {
  // Sampled states agree with a much finer reference integration.
  auto s = system_of(Family::VanDerPol);
  auto in = bench::InputSpec::sinusoid(1.2, 1.3);
  Vector x0 = vec({0.4, -0.9});
  Matrix coarse = bench::simulate(s, in, x0, {0.0, 0.03, 100});
  Matrix fine = bench::simulate(s, in, x0, {0.0, 0.03, 100}, 100);
  EXPECT_LT((coarse - fine).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(BenchmarkProperties, OscillatorEnergyDrift) {
  auto s = system_of(Family::HarmonicOscillator);
  Matrix xs = bench::simulate(s, bench::InputSpec::none(), vec({0.8, -0.3}), {0.0, 0.03, 101});
  const double e0 = 0.5 * (0.8 * 0.8 + 0.3 * 0.3);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const double e = 0.5 * (xs(i, 1) * xs(i, 1) + xs(i, 0) * xs(i, 0));
    EXPECT_LT(std::abs(e - e0) / e0, 1e-8);
  }
}

TEST(BenchmarkProperties, VanDerPolLimitCycle) {
  auto s = system_of(Family::VanDerPol);
  auto amplitude = [&](const Vector& x0) {
    Matrix xs = bench::simulate(s, bench::InputSpec::constant(0.0), x0, {0.0, 0.01, 3001});
    return xs.col(0).tail(1000).cwiseAbs().maxCoeff();
  };
  const double a = amplitude(vec({0.05, 0.0}));
  const double b = amplitude(vec({3.0, -3.0}));
  EXPECT_NEAR(a, 2.0, 0.1);
  EXPECT_LT(std::abs(a - b) / a, 0.02);
}

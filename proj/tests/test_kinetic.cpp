#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pbpk/kinetic.hpp"
#include "pbpk/ode.hpp"
#include "test_support.hpp"

namespace pbpk {
namespace {

using testing::default_input;
using testing::max_normalized_deviation;
using testing::reference_schedule;

const KineticParams kLiver{0.611, 0.793, 0.014, 0.005};
const KineticParams kLung{0.116, 0.683, 0.022, 0.098};

TEST(ImpulseResponse, StartsAtK1) {
  EXPECT_DOUBLE_EQ(impulse_response(kLiver, 0.0), kLiver.k1);
  EXPECT_DOUBLE_EQ(impulse_response({1.3, 0.2, 0.7, 0.0}, 0.0), 1.3);
}

TEST(ImpulseResponse, TendsToKi) {
  // High-precision reference for the liver row.
  const long double ki = 0.611L * 0.014L / (0.793L + 0.014L);
  EXPECT_NEAR(impulse_response(kLiver, 1e4), static_cast<double>(ki), 1e-15);
  EXPECT_NEAR(static_cast<double>(ki), 0.0106, 5e-5);
}

TEST(ImpulseResponse, MonotoneAndBoundedBelowByKi) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const KineticParams p = testing::random_params(rng);
    const double ki = macro_ki(p);
    double prev = impulse_response(p, 0.0);
    for (double t = 0.05; t < 80.0; t *= 1.3) {
      const double h = impulse_response(p, t);
      EXPECT_LE(h, prev + 1e-15);
      EXPECT_GE(h, ki - 1e-15);
      prev = h;
    }
  }
}

TEST(ImpulseResponse, DomainErrors) {
  EXPECT_THROW((void)impulse_response({1.0, 0.0, 0.0, 0.0}, 1.0), DomainError);
  EXPECT_THROW((void)impulse_response(kLiver, -0.1), DomainError);
}

TEST(MacroKi, Examples) {
  EXPECT_NEAR(macro_ki(kLiver), 0.0106, 5e-5);
  EXPECT_EQ(macro_ki({0.5, 0.4, 0.0, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(macro_ki({0.5, 0.0, 0.3, 0.0}), 0.5);
  EXPECT_THROW((void)macro_ki({0.5, 0.0, 0.0, 0.0}), DomainError);
}

TEST(MultiClamp, ClampsAtDefaultBounds) {
  const std::array<double, 4> raw{5.0, -1.0, 0.5, 2.0};
  const KineticParams p = multi_clamp(std::span<const double, 4>(raw));
  EXPECT_EQ(p, (KineticParams{2.0, 0.01, 0.5, 1.0}));
}

TEST(MultiClamp, IdentityInsideBox) {
  const KineticParams in{0.5, 1.0, 0.2, 0.3};
  EXPECT_EQ(multi_clamp(in), in);
}

TEST(MultiClamp, IdempotentNonExpansiveProjection) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const std::array<double, 4> x{g(rng), g(rng), g(rng), g(rng)};
    const std::array<double, 4> y{g(rng), g(rng), g(rng), g(rng)};
    const KineticParams px = multi_clamp(std::span<const double, 4>(x));
    const KineticParams py = multi_clamp(std::span<const double, 4>(y));
    EXPECT_EQ(multi_clamp(px), px);
    EXPECT_TRUE(px.is_physical());
    EXPECT_TRUE(px.rate_sum() > 0.0);
    const auto a = px.to_array();
    const auto b = py.to_array();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(std::abs(a[i] - b[i]), std::abs(x[i] - y[i]));
  }
}

// Oracle: composite Simpson on the defining integral.
TEST(HoldStep, WeightsMatchQuadrature) {
  for (double rate : {0.02, 0.5, 4.0, 30.0, 200.0}) {
    for (double d : {1.0 / 60.0, 0.1, 1.0}) {
      const detail::HoldStep hs = detail::hold_step(rate, d);
      const int n = 20000;
      double w_prev = 0.0, w_curr = 0.0;
      for (int i = 0; i <= n; ++i) {
        const double s = d * i / n;
        const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double k = std::exp(-rate * (d - s));
        w_prev += c * k * (1.0 - s / d);
        w_curr += c * k * (s / d);
      }
      w_prev *= d / (3.0 * n);
      w_curr *= d / (3.0 * n);
      EXPECT_NEAR(hs.w_prev, w_prev, 1e-12 * d) << "rate=" << rate << " d=" << d;
      EXPECT_NEAR(hs.w_curr, w_curr, 1e-12 * d) << "rate=" << rate << " d=" << d;
      EXPECT_NEAR(hs.decay, std::exp(-rate * d), 1e-15);
    }
  }
}

TEST(HoldStep, DerivativesMatchCentralDifferences) {
  for (double rate : {0.02, 1.0, 4.0, 29.0, 31.0, 100.0}) {
    const double d = 1.0 / 60.0;
    const double eps = 1e-4 * std::max(rate, 1.0);
    const auto hi = detail::hold_step(rate + eps, d);
    const auto lo = detail::hold_step(rate - eps, d);
    const auto h = detail::hold_step(rate, d);
    EXPECT_NEAR(h.d_prev, (hi.w_prev - lo.w_prev) / (2 * eps), 1e-6 * std::abs(h.d_prev) + 1e-16);
    EXPECT_NEAR(h.d_curr, (hi.w_curr - lo.w_curr) / (2 * eps), 1e-6 * std::abs(h.d_curr) + 1e-16);
    EXPECT_NEAR(h.d_decay, (hi.decay - lo.decay) / (2 * eps), 1e-6 * std::abs(h.d_decay) + 1e-16);
  }
}

TEST(ModelTac, FullBloodFractionIsFrameAveragedInput) {
  const Tac c = model_tac({0.8, 0.4, 0.1, 1.0}, default_input(), reference_schedule());
  // Oracle: exact frame integral of the piecewise-linear input by
  // trapezoid on a half-second grid (knots every second).
  const FrameSchedule& s = reference_schedule();
  for (std::size_t f = 0; f < s.size(); ++f) {
    double integral = 0.0;
    for (double t = s[f].start_s; t < s[f].end_s() - 1e-9; t += 0.5)
      integral += 0.25 * (default_input().at(t) + default_input().at(t + 0.5));
    EXPECT_NEAR(c[f], integral / s[f].duration_s, 1e-12 * std::max(1.0, std::abs(c[f])));
  }
}

TEST(ModelTac, ZeroUptakeZeroBloodIsZero) {
  const Tac c = model_tac({0.0, 0.4, 0.1, 0.0}, default_input(), reference_schedule());
  for (double v : c) EXPECT_EQ(v, 0.0);
}

TEST(ModelTac, MatchesOdeOracleOnLiverAndLung) {
  for (const KineticParams& p : {kLiver, kLung}) {
    const Tac m = model_tac(p, default_input(), reference_schedule());
    const Tac o = ode_solve(p, default_input(), reference_schedule());
    EXPECT_LT(max_normalized_deviation(m, o), 1e-4);
  }
}

TEST(ModelTac, MatchesOdeAtLowerClampRates) {
  const KineticParams p{0.9, 0.01, 0.01, 0.05};
  const Tac m = model_tac(p, default_input(), reference_schedule());
  const Tac o = ode_solve(p, default_input(), reference_schedule());
  EXPECT_LT(max_normalized_deviation(m, o), 1e-4);
}

TEST(ModelTac, LinearInK1WithoutBloodTerm) {
  const ForwardModel model(default_input(), reference_schedule());
  const KineticParams p{0.3, 0.7, 0.05, 0.0};
  const Tac base = model(p);
  for (double c : {0.5, 2.0, 3.7}) {
    KineticParams q = p;
    q.k1 *= c;
    const Tac scaled = model(q);
    for (std::size_t f = 0; f < base.size(); ++f) EXPECT_NEAR(scaled[f], c * base[f], 1e-13 * std::abs(c * base[f]) + 1e-300);
  }
}

TEST(ModelTac, ScheduleConcatenationConserves) {
  const FrameSchedule& s = reference_schedule();
  const KineticParams p{0.7, 1.1, 0.03, 0.2};
  const Tac full = model_tac(p, default_input(), s);
  const Tac head = model_tac(p, default_input(), s.subschedule(0, 20));
  const Tac tail = model_tac(p, default_input(), s.subschedule(20, s.size() - 20));
  ASSERT_EQ(head.size() + tail.size(), full.size());
  for (std::size_t f = 0; f < head.size(); ++f) EXPECT_NEAR(head[f], full[f], 1e-12 * std::abs(full[f]));
  for (std::size_t f = 0; f < tail.size(); ++f) EXPECT_NEAR(tail[f], full[20 + f], 1e-12 * std::abs(full[20 + f]));
}

TEST(ModelTac, Errors) {
  EXPECT_THROW((void)model_tac({0.5, 0.0, 0.0, 0.1}, default_input(), reference_schedule()), DomainError);
  EXPECT_THROW((void)model_tac({0.5, 0.3, 0.1, -0.1}, default_input(), reference_schedule()), DomainError);
  EXPECT_THROW((void)model_tac({std::nan(""), 0.3, 0.1, 0.1}, default_input(), reference_schedule()), DomainError);
  // Input shorter than the schedule.
  const std::vector<double> t{0.0, 100.0}, v{0.0, 5.0};
  EXPECT_THROW((void)model_tac(kLiver, InputFunction::from_points(t, v), reference_schedule()), DomainError);
  // Frame boundaries off the fine grid.
  EXPECT_THROW((void)ForwardModel(default_input(), reference_schedule(), ModelOptions{0.7}), DomainError);
  EXPECT_THROW((void)ForwardModel(default_input(), reference_schedule(), ModelOptions{0.0}), DomainError);
}

TEST(ModelTac, FinerGridStillAgreesWithOracle) {
  const InputFunction fine = synth_input(InputFunctionModel{}, reference_schedule(), 0.5);
  const Tac m = model_tac(kLiver, fine, reference_schedule(), ModelOptions{0.5});
  const Tac o = ode_solve(kLiver, fine, reference_schedule());
  EXPECT_LT(max_normalized_deviation(m, o), 1e-4);
}

// Oracle: central differences on the forward values.
TEST(ModelJacobian, MatchesFiniteDifferences) {
  const ForwardModel model(default_input(), reference_schedule());
  std::mt19937_64 rng(5);
  const std::size_t nf = model.frame_count();
  for (int k = 0; k < 25; ++k) {
    const KineticParams p = testing::random_params(rng, 0.05, 0.9);
    Tac tac(nf);
    std::vector<double> jac(nf * 4);
    model.evaluate(p, tac, jac);
    for (int i = 0; i < 4; ++i) {
      auto v = p.to_array();
      const double h = 1e-6 * std::max(1.0, std::abs(v[static_cast<std::size_t>(i)]));
      v[static_cast<std::size_t>(i)] += h;
      const Tac up = model(KineticParams::from_array(v));
      v[static_cast<std::size_t>(i)] -= 2 * h;
      const Tac dn = model(KineticParams::from_array(v));
      double scale = 0.0;
      for (std::size_t f = 0; f < nf; ++f) scale = std::max(scale, std::abs(jac[4 * f + static_cast<std::size_t>(i)]));
      for (std::size_t f = 0; f < nf; ++f) {
        const double fd = (up[f] - dn[f]) / (2 * h);
        EXPECT_NEAR(jac[4 * f + static_cast<std::size_t>(i)], fd, 1e-5 * scale + 1e-9) << "param " << i << " frame " << f;
      }
    }
  }
}

TEST(OdeSolve, ZeroInputGivesZero) {
  const std::vector<double> t{0.0, 4000.0}, v{0.0, 0.0};
  const Tac o = ode_solve(kLiver, InputFunction::from_points(t, v), reference_schedule());
  for (double x : o) EXPECT_EQ(x, 0.0);
}

TEST(OdeSolve, RejectsBadStep) {
  EXPECT_THROW((void)ode_solve(kLiver, default_input(), reference_schedule(), OdeOptions{0.0}), DomainError);
  EXPECT_THROW((void)ode_solve(kLiver, default_input(), reference_schedule(), OdeOptions{-1.0}), DomainError);
}

TEST(Equivalence, RandomDrawsAgreeWithOracle) {
  std::mt19937_64 rng(2024);
  const ForwardModel model(default_input(), reference_schedule());
  for (int k = 0; k < 10; ++k) {
    const KineticParams p = testing::random_params(rng);
    EXPECT_LT(max_normalized_deviation(model(p), ode_solve(p, default_input(), reference_schedule())), 1e-4);
  }
}

TEST(FrameSchedule, ReferenceProtocol) {
  const FrameSchedule& s = reference_schedule();
  EXPECT_EQ(s.size(), 62u);
  EXPECT_DOUBLE_EQ(s.end_time_s(), 3900.0);
  EXPECT_DOUBLE_EQ(s.mid_times_s()[2], 21.0);
}

TEST(FrameSchedule, RejectsGapsAndNonPositiveDurations) {
  EXPECT_THROW(FrameSchedule({{0.0, 10.0}, {11.0, 5.0}}), DomainError);
  EXPECT_THROW(FrameSchedule({{0.0, 0.0}}), DomainError);
  EXPECT_THROW(FrameSchedule(std::vector<Frame>{}), DomainError);
}

TEST(InputFunction, InterpolationRules) {
  const std::vector<double> t{10.0, 20.0}, v{2.0, 4.0};
  const InputFunction a = InputFunction::from_points(t, v);
  EXPECT_EQ(a.at(5.0), 0.0);
  EXPECT_DOUBLE_EQ(a.at(15.0), 3.0);
  EXPECT_DOUBLE_EQ(a.at(30.0), 4.0);
  EXPECT_THROW(InputFunction::from_points(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 1.0}), DomainError);
  EXPECT_THROW(InputFunction::from_points(std::vector<double>{1.0}, std::vector<double>{-1.0}), DomainError);
}

}  // namespace
}  // namespace pbpk

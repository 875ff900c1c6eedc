#pragma once

// Direct integration of the compartment ODEs. Shares no code with the
// convolution path in kinetic.hpp and serves as its oracle.

#include <array>
#include <cmath>
#include <cstddef>

#include "pbpk/types.hpp"

namespace pbpk {

struct OdeOptions {
  double max_step_s = 0.1;
};

namespace detail {

// State: free F, bound B, running integral Q of the mixed curve C.
using OdeState = std::array<double, 3>;

struct CompartmentRhs {
  const KineticParams& p;

  OdeState operator()(const OdeState& y, double a) const {
    const double rate = p.k2 + p.k3;
    return {p.k1 * a - rate * y[0], p.k3 * y[0], (1.0 - p.vb) * (y[0] + y[1]) + p.vb * a};
  }
};

// Classical RK4 over [t0, t1] (seconds) in `steps` equal steps; time in
// the right-hand side is minutes.
inline void rk4_advance(OdeState& y, const CompartmentRhs& rhs, const InputFunction& a, double t0, double t1,
                        std::size_t steps) {
  const double h_s = (t1 - t0) / static_cast<double>(steps);
  const double h = h_s / kSecondsPerMinute;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + static_cast<double>(i) * h_s;
    const double a0 = a.at(t);
    const double am = a.at(t + 0.5 * h_s);
    const double a1 = a.at(i + 1 == steps ? t1 : t + h_s);
    const OdeState k1 = rhs(y, a0);
    OdeState tmp;
    for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k1[c];
    const OdeState k2 = rhs(tmp, am);
    for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k2[c];
    const OdeState k3 = rhs(tmp, am);
    for (int c = 0; c < 3; ++c) tmp[c] = y[c] + h * k3[c];
    const OdeState k4 = rhs(tmp, a1);
    for (int c = 0; c < 3; ++c) y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
  }
}

inline std::size_t steps_for(double span_s, double max_step_s) {
  if (span_s <= 0.0) return 0;
  return static_cast<std::size_t>(std::max(1.0, std::ceil(span_s / max_step_s - 1e-9)));
}

}  // namespace detail

/// Frame-averaged TAC by fixed-step RK4 on the compartment ODEs with
/// F(0) = B(0) = 0. Each frame is integrated in equal substeps no longer
/// than max_step_s.
inline Tac ode_solve(const KineticParams& p, const InputFunction& a, const FrameSchedule& s, OdeOptions opt = {}) {
  if (!(opt.max_step_s > 0.0) || !std::isfinite(opt.max_step_s)) throw DomainError("ode_solve: step must be positive");
  if (!p.is_evaluable()) throw DomainError("ode_solve: parameters must be finite and non-negative");
  if (s.empty()) throw DomainError("ode_solve: empty schedule");
  const double end = s.end_time_s();
  if (a.coverage_end_s() + 1e-9 * std::max(1.0, end) < end)
    throw DomainError("ode_solve: input function does not cover the schedule");

  const detail::CompartmentRhs rhs{p};
  detail::OdeState y{0.0, 0.0, 0.0};
  detail::rk4_advance(y, rhs, a, 0.0, s.start_time_s(), detail::steps_for(s.start_time_s(), opt.max_step_s));

  Tac out(s.size());
  for (std::size_t f = 0; f < s.size(); ++f) {
    const Frame& fr = s[f];
    const double q0 = y[2];
    detail::rk4_advance(y, rhs, a, fr.start_s, fr.end_s(), detail::steps_for(fr.duration_s, opt.max_step_s));
    out[f] = (y[2] - q0) / (fr.duration_s / kSecondsPerMinute);
  }
  return out;
}

}  // namespace pbpk

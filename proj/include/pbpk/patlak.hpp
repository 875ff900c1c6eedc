#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pbpk/kinetic.hpp"
#include "pbpk/types.hpp"

namespace pbpk {

struct PatlakResult {
  double ki_slope = 0.0;   // [ml/cm^3/min]
  double intercept = 0.0;  // [-]
  double r_squared = 0.0;
  double t_star_s = 0.0;
  std::size_t frames_used = 0;
};

inline constexpr double kDefaultPatlakTStarS = 20.0 * kSecondsPerMinute;

/// Graphical analysis for irreversible uptake: ordinary least squares of
///   y = C / A   against   x = (int_0^t A) / A
/// over frames with mid-time >= t_star. Frame-averaged A and frame-averaged
/// running integral are used so the coordinates match frame-averaged TACs.
inline PatlakResult patlak(const Tac& tac, const ForwardModel& model, double t_star_s = kDefaultPatlakTStarS) {
  const FrameSchedule& s = model.schedule();
  if (tac.size() != s.size()) throw DomainError("patlak: TAC length does not match the schedule");
  const Tac a_mean = model.frame_averaged_input();
  const Tac cum_mean = model.frame_averaged_cumulative_input();

  std::vector<double> xs, ys;
  for (std::size_t f = 0; f < s.size(); ++f) {
    if (s[f].mid_s() < t_star_s) continue;
    if (!(a_mean[f] > 0.0))
      throw DomainError("patlak: input function is zero in frame " + std::to_string(f));
    xs.push_back(cum_mean[f] / a_mean[f]);
    ys.push_back(tac[f] / a_mean[f]);
  }
  if (xs.size() < 3) throw DomainError("patlak: fewer than 3 frames after t_star");

  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("patlak: degenerate abscissa");

  PatlakResult r;
  r.ki_slope = sxy / sxx;
  r.intercept = my - r.ki_slope * mx;
  r.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 0.0;
  r.t_star_s = t_star_s;
  r.frames_used = xs.size();
  return r;
}

inline PatlakResult patlak(const Tac& tac, const InputFunction& a, const FrameSchedule& s,
                           double t_star_s = kDefaultPatlakTStarS, ModelOptions opt = {}) {
  return patlak(tac, ForwardModel(a, s, opt), t_star_s);
}

}  // namespace pbpk

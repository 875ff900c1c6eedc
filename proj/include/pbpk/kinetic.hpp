#pragma once

// Irreversible two-tissue compartment model.
//
//   dF/dt = K1 A(t) - (k2 + k3) F(t)
//   dB/dt = k3 F(t)
//   C(t)  = (1 - VB) (F + B)(t) + VB A(t)
//
// Closed form: C = (1 - VB) (h * A) + VB A with the impulse response
//   h(t) = K1 / (k2 + k3) * (k3 + k2 exp(-(k2 + k3) t)).
// Rates are per minute; schedules and inputs are in seconds.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pbpk/types.hpp"

namespace pbpk {

/// h(t) for t in minutes.
inline double impulse_response(const KineticParams& p, double t_min) {
  const double rate = p.rate_sum();
  if (!(rate > 0.0)) throw DomainError("impulse_response: k2 + k3 must be positive");
  if (!(t_min >= 0.0)) throw DomainError("impulse_response: t must be non-negative");
  return p.k1 / rate * (p.k3 + p.k2 * std::exp(-rate * t_min));
}

/// Net influx rate Ki = K1 k3 / (k2 + k3) [ml/cm^3/min].
inline double macro_ki(const KineticParams& p) {
  const double rate = p.rate_sum();
  if (!(rate > 0.0)) throw DomainError("macro_ki: k2 + k3 must be positive");
  return p.k1 * p.k3 / rate;
}

/// Componentwise projection of unconstrained values onto the bounds box.
inline KineticParams multi_clamp(std::span<const double, 4> raw, const ParamBounds& b = ParamBounds::clamp_box()) {
  return {b.range[0].clamp(raw[0]), b.range[1].clamp(raw[1]), b.range[2].clamp(raw[2]), b.range[3].clamp(raw[3])};
}

inline KineticParams multi_clamp(const KineticParams& p, const ParamBounds& b = ParamBounds::clamp_box()) {
  const auto v = p.to_array();
  return multi_clamp(std::span<const double, 4>(v), b);
}

struct ModelOptions {
  double fine_step_s = 1.0;
};

namespace detail {

// Exact integral of exp(-rate (d - s)) * A(s) over one grid step of length
// d when A is linear between the endpoint samples:
//   E_next = decay * E + w_prev * A_prev + w_curr * A_curr
// plus the derivatives of the three coefficients with respect to rate.
struct HoldStep {
  double decay = 1.0;
  double w_prev = 0.0;
  double w_curr = 0.0;
  double d_decay = 0.0;
  double d_prev = 0.0;
  double d_curr = 0.0;
};

inline HoldStep hold_step(double rate, double d) {
  const double x = rate * d;
  const double e = std::exp(-x);
  // phi_prev(x) = (1 - e^-x - x e^-x) / x^2, phi_curr(x) = (x - 1 + e^-x) / x^2
  double phi_prev = 0.0, phi_curr = 0.0, dphi_prev = 0.0, dphi_curr = 0.0;
  if (x < 0.5) {
    // sum_n (-x)^n (n+1)/(n+2)!  and  sum_n (-x)^n / (n+2)!
    double fact = 2.0;  // (n+2)!
    double pow_x = 1.0;  // x^n
    double sign = 1.0;
    for (int n = 0; n < 24; ++n) {
      phi_prev += sign * pow_x * (n + 1) / fact;
      phi_curr += sign * pow_x / fact;
      if (n + 1 < 24) {
        // derivative terms use x^n with index n+1
        const int m = n + 1;
        dphi_prev += -sign * m * (m + 1) * pow_x / (fact * (m + 2));
        dphi_curr += -sign * m * pow_x / (fact * (m + 2));
      }
      pow_x *= x;
      sign = -sign;
      fact *= (n + 3);
    }
  } else {
    const double x2 = x * x;
    const double x3 = x2 * x;
    const double num_prev = 1.0 - e - x * e;
    const double num_curr = x - 1.0 + e;
    phi_prev = num_prev / x2;
    phi_curr = num_curr / x2;
    dphi_prev = x * e / x2 - 2.0 * num_prev / x3;
    dphi_curr = (1.0 - e) / x2 - 2.0 * num_curr / x3;
  }
  HoldStep h;
  h.decay = e;
  h.w_prev = d * phi_prev;
  h.w_curr = d * phi_curr;
  h.d_decay = -d * e;
  h.d_prev = d * d * dphi_prev;
  h.d_curr = d * d * dphi_curr;
  return h;
}

}  // namespace detail

/// Frame-averaged forward model for one (input function, schedule) pair.
///
/// The input is resampled onto a uniform grid starting at t = 0 and treated
/// as piecewise linear there. The exponential part of the convolution is
/// propagated exactly across each grid step and frame averages come from
/// exact running integrals, so the only approximation is the grid
/// resampling of A(t). Frame boundaries must lie on the grid.
///
/// Construction precomputes everything that depends on the input only;
/// evaluation is O(grid size) and the object is safe to share across threads.
class ForwardModel {
 public:
  ForwardModel(const InputFunction& input, const FrameSchedule& schedule, ModelOptions opt = {})
      : schedule_(schedule), opt_(opt) {
    if (schedule_.empty()) throw DomainError("ForwardModel: empty schedule");
    if (!(opt_.fine_step_s > 0.0) || !std::isfinite(opt_.fine_step_s))
      throw DomainError("ForwardModel: fine step must be positive");
    const double end = schedule_.end_time_s();
    if (input.size() == 0 || input.coverage_end_s() + 1e-9 * std::max(1.0, end) < end)
      throw DomainError("ForwardModel: input function covers [0, " + std::to_string(input.coverage_end_s()) +
                        "] s but the schedule ends at " + std::to_string(end) + " s");

    const double dt = opt_.fine_step_s;
    auto grid_index = [dt](double t) {
      const double q = t / dt;
      const double r = std::round(q);
      if (std::abs(q - r) > 1e-6) throw DomainError("ForwardModel: frame boundary " + std::to_string(t) +
                                                    " s is not a multiple of the fine step " + std::to_string(dt) + " s");
      return static_cast<std::size_t>(r);
    };
    boundary_.reserve(schedule_.size() + 1);
    boundary_.push_back(grid_index(schedule_.start_time_s()));
    for (const Frame& f : schedule_.frames()) boundary_.push_back(grid_index(f.end_s()));

    const std::size_t n = boundary_.back();
    grid_.resize(n + 1);
    for (std::size_t j = 0; j <= n; ++j) grid_[j] = input.at(static_cast<double>(j) * dt);

    // Running integrals of A (I0) and of I0 (J), exact for piecewise-linear A.
    step_min_ = dt / kSecondsPerMinute;
    const double d = step_min_;
    std::vector<double> i0_b(boundary_.size()), j_b(boundary_.size());
    double i0 = 0.0, jj = 0.0;
    std::size_t next = 0;
    while (next < boundary_.size() && boundary_[next] == 0) {
      i0_b[next] = 0.0;
      j_b[next] = 0.0;
      ++next;
    }
    for (std::size_t j = 1; j <= n; ++j) {
      const double a0 = grid_[j - 1], a1 = grid_[j];
      jj += d * i0 + d * d * (2.0 * a0 + a1) / 6.0;
      i0 += 0.5 * d * (a0 + a1);
      while (next < boundary_.size() && boundary_[next] == j) {
        i0_b[next] = i0;
        j_b[next] = jj;
        ++next;
      }
    }
    const std::size_t nf = schedule_.size();
    d_input_.resize(nf);
    d_cumulative_.resize(nf);
    duration_min_.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      d_input_[f] = i0_b[f + 1] - i0_b[f];
      d_cumulative_[f] = j_b[f + 1] - j_b[f];
      duration_min_[f] = schedule_[f].duration_s / kSecondsPerMinute;
    }
  }

  [[nodiscard]] const FrameSchedule& schedule() const { return schedule_; }
  [[nodiscard]] std::size_t frame_count() const { return schedule_.size(); }
  [[nodiscard]] const ModelOptions& options() const { return opt_; }
  [[nodiscard]] std::span<const double> input_grid() const { return grid_; }

  /// Frame average of A(t).
  [[nodiscard]] Tac frame_averaged_input() const {
    Tac out(frame_count());
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = d_input_[f] / duration_min_[f];
    return out;
  }

  /// Frame average of the running integral of A, in [Bq/ml * min].
  [[nodiscard]] Tac frame_averaged_cumulative_input() const {
    Tac out(frame_count());
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = d_cumulative_[f] / duration_min_[f];
    return out;
  }

  [[nodiscard]] Tac operator()(const KineticParams& p) const {
    Tac out(frame_count());
    evaluate(p, out, {});
    return out;
  }

  /// Fills tac (frame_count) and, when non-empty, jac (frame_count x 4,
  /// row-major, columns K1, k2, k3, VB).
  void evaluate(const KineticParams& p, std::span<double> tac, std::span<double> jac) const {
    if (!p.is_evaluable()) throw DomainError("ForwardModel: parameters must be finite and non-negative");
    const double rate = p.rate_sum();
    if (!(rate > 0.0)) throw DomainError("ForwardModel: k2 + k3 must be positive");
    const std::size_t nf = frame_count();
    if (tac.size() != nf) throw DomainError("ForwardModel: output length does not match the schedule");
    const bool want_jac = !jac.empty();
    if (want_jac && jac.size() != nf * 4) throw DomainError("ForwardModel: jacobian buffer has the wrong size");

    const detail::HoldStep hs = detail::hold_step(rate, step_min_);
    const std::size_t n = boundary_.back();

    // E(t) = int_0^t exp(-rate (t - s)) A(s) ds and G = dE/drate at the frame boundaries.
    thread_local std::vector<double> e_b, g_b;
    e_b.assign(boundary_.size(), 0.0);
    g_b.assign(boundary_.size(), 0.0);
    double e_acc = 0.0, g_acc = 0.0;
    std::size_t next = 0;
    while (next < boundary_.size() && boundary_[next] == 0) ++next;
    const double* a = grid_.data();
    if (want_jac) {
      for (std::size_t j = 1; j <= n; ++j) {
        g_acc = hs.decay * g_acc + hs.d_decay * e_acc + hs.d_prev * a[j - 1] + hs.d_curr * a[j];
        e_acc = hs.decay * e_acc + hs.w_prev * a[j - 1] + hs.w_curr * a[j];
        while (next < boundary_.size() && boundary_[next] == j) {
          e_b[next] = e_acc;
          g_b[next] = g_acc;
          ++next;
        }
      }
    } else {
      for (std::size_t j = 1; j <= n; ++j) {
        e_acc = hs.decay * e_acc + hs.w_prev * a[j - 1] + hs.w_curr * a[j];
        while (next < boundary_.size() && boundary_[next] == j) {
          e_b[next] = e_acc;
          ++next;
        }
      }
    }

    // Frame integral of the tissue curve (per unit K1):
    //   U1 = k3/rate * dJ + k2/rate^2 * W,   W = dI0 - dE  (since E' = A - rate E)
    const double r1 = 1.0 / rate;
    const double r2 = r1 * r1;
    const double r3 = r2 * r1;
    const double tissue_w = 1.0 - p.vb;
    for (std::size_t f = 0; f < nf; ++f) {
      const double dj = d_cumulative_[f];
      const double di = d_input_[f];
      const double w = di - (e_b[f + 1] - e_b[f]);
      const double u1 = p.k3 * r1 * dj + p.k2 * r2 * w;
      const double inv_d = 1.0 / duration_min_[f];
      tac[f] = (tissue_w * p.k1 * u1 + p.vb * di) * inv_d;
      if (want_jac) {
        const double dw = -(g_b[f + 1] - g_b[f]);
        const double du_dk2 = -p.k3 * r2 * dj + w * r2 - 2.0 * p.k2 * w * r3 + p.k2 * dw * r2;
        const double du_dk3 = p.k2 * r2 * dj - 2.0 * p.k2 * w * r3 + p.k2 * dw * r2;
        double* row = jac.data() + 4 * f;
        row[0] = tissue_w * u1 * inv_d;
        row[1] = tissue_w * p.k1 * du_dk2 * inv_d;
        row[2] = tissue_w * p.k1 * du_dk3 * inv_d;
        row[3] = (di - p.k1 * u1) * inv_d;
      }
    }
  }

 private:
  FrameSchedule schedule_;
  ModelOptions opt_;
  double step_min_ = 0.0;
  std::vector<std::size_t> boundary_;
  std::vector<double> grid_;
  std::vector<double> d_input_;
  std::vector<double> d_cumulative_;
  std::vector<double> duration_min_;
};

/// Frame-averaged model TAC.
inline Tac model_tac(const KineticParams& p, const InputFunction& a, const FrameSchedule& s, ModelOptions opt = {}) {
  return ForwardModel(a, s, opt)(p);
}

}  // namespace pbpk

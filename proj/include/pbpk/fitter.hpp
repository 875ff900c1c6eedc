#pragma once

// Bounded non-linear least squares for the two-tissue model.
//
// Projected Levenberg-Marquardt: parameters that sit on a bound with the
// gradient pushing outward are frozen for the step, the damped normal
// equations are solved on the rest, and the trial point is projected back
// onto the feasible set.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbpk/kinetic.hpp"
#include "pbpk/parallel.hpp"
#include "pbpk/types.hpp"
#include "pbpk/volume.hpp"

namespace pbpk {

enum class JacobianMode { Analytic, FiniteDifference };

enum class Termination {
  Gradient,       // projected gradient below tolerance
  ZeroCost,       // exact fit
  Degenerate,     // model identically zero; parameters not identifiable
  Stalled,        // step/cost tolerance reached without the gradient certificate
  MaxIterations,
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::Gradient: return "gradient";
    case Termination::ZeroCost: return "zero-cost";
    case Termination::Degenerate: return "degenerate";
    case Termination::Stalled: return "stalled";
    case Termination::MaxIterations: return "max-iterations";
  }
  return "unknown";
}

struct FitConfig {
  KineticParams initial{0.1, 0.1, 0.01, 0.01};
  ParamBounds bounds = ParamBounds::non_negative();
  int max_iterations = 200;
  double step_tolerance = 1e-8;
  double cost_tolerance = 1e-10;
  /// On the gradient of the normalized cost sum(r^2) / sum(y^2).
  double gradient_tolerance = 1e-8;
  JacobianMode jacobian = JacobianMode::Analytic;
  /// Finite-difference step, relative to max(1, |p|).
  double fd_step = 1e-3;
  /// The model is singular at k2 + k3 = 0; feasible points keep the sum above this.
  double min_rate_sum = 1e-6;
  ModelOptions model{};

  /// Classical curve fit: start (0.1, 0.1, 0.01, 0.01), bounds [0, +inf).
  static FitConfig curve_fit() { return {}; }

  /// Same start, network output box as bounds.
  static FitConfig clamp_box() {
    FitConfig c;
    c.bounds = ParamBounds::clamp_box();
    return c;
  }

  void validate() const {
    bounds.validate();
    if (!bounds.contains(initial)) throw DomainError("FitConfig: initial parameters outside bounds");
    if (max_iterations <= 0) throw DomainError("FitConfig: max_iterations must be positive");
    if (!(step_tolerance > 0.0) || !(cost_tolerance > 0.0) || !(gradient_tolerance > 0.0))
      throw DomainError("FitConfig: tolerances must be positive");
    if (jacobian == JacobianMode::FiniteDifference && !(fd_step > 0.0))
      throw DomainError("FitConfig: finite-difference step must be positive");
    if (!(min_rate_sum > 0.0)) throw DomainError("FitConfig: min_rate_sum must be positive");
    if (bounds.range[1].hi + bounds.range[2].hi < min_rate_sum)
      throw DomainError("FitConfig: bounds force k2 + k3 below the model's domain");
    for (const auto& r : bounds.range)
      if (r.lo < 0.0) throw DomainError("FitConfig: lower bounds must be non-negative");
  }
};

struct FitResult {
  KineticParams params{};
  /// Mean squared residual [Bq^2/ml^2].
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  Termination termination = Termination::MaxIterations;
  std::array<bool, 4> at_bound{};
  bool degenerate = false;
  double projected_gradient = 0.0;
  /// Gauss-Newton standard errors; empty when J^T J is singular.
  std::optional<std::array<double, 4>> standard_errors;
};

namespace detail {

using Vec4 = Eigen::Matrix<double, 4, 1>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using JacMat = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

inline Vec4 to_vec(const KineticParams& p) { return {p.k1, p.k2, p.k3, p.vb}; }
inline KineticParams to_params(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

inline Vec4 project_feasible(Vec4 v, const FitConfig& cfg) {
  for (int i = 0; i < 4; ++i) v[i] = cfg.bounds.range[static_cast<std::size_t>(i)].clamp(v[i]);
  const double deficit = cfg.min_rate_sum - (v[1] + v[2]);
  if (deficit > 0.0) {
    v[1] = cfg.bounds.range[1].clamp(v[1] + 0.5 * deficit);
    v[2] = cfg.bounds.range[2].clamp(v[2] + (cfg.min_rate_sum - v[1] - v[2]));
    if (v[1] + v[2] < cfg.min_rate_sum) v[1] = cfg.bounds.range[1].clamp(cfg.min_rate_sum - v[2]);
  }
  return v;
}

class Problem {
 public:
  Problem(const Tac& y, const ForwardModel& model, const FitConfig& cfg)
      : y_(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()))), model_(model), cfg_(cfg) {}

  [[nodiscard]] Eigen::Index size() const { return y_.size(); }

  double cost(const Vec4& p, Eigen::VectorXd& r) const {
    r.resize(size());
    model_.evaluate(to_params(p), std::span<double>(r.data(), static_cast<std::size_t>(r.size())), {});
    r -= y_;
    return r.squaredNorm();
  }

  double cost_and_jacobian(const Vec4& p, Eigen::VectorXd& r, JacMat& jac) const {
    r.resize(size());
    jac.resize(size(), 4);
    if (cfg_.jacobian == JacobianMode::Analytic) {
      model_.evaluate(to_params(p), std::span<double>(r.data(), static_cast<std::size_t>(r.size())),
                      std::span<double>(jac.data(), static_cast<std::size_t>(jac.size())));
    } else {
      model_.evaluate(to_params(p), std::span<double>(r.data(), static_cast<std::size_t>(r.size())), {});
      finite_difference(p, jac);
    }
    r -= y_;
    return r.squaredNorm();
  }

 private:
  void finite_difference(const Vec4& p, JacMat& jac) const {
    Eigen::VectorXd plus(size()), minus(size());
    for (int i = 0; i < 4; ++i) {
      const double h = cfg_.fd_step * std::max(1.0, std::abs(p[i]));
      Vec4 hi = p, lo = p;
      hi[i] += h;
      lo[i] -= h;
      const bool hi_ok = project_feasible(hi, cfg_) == hi;
      const bool lo_ok = project_feasible(lo, cfg_) == lo;
      if (hi_ok && lo_ok) {
        eval(hi, plus);
        eval(lo, minus);
        jac.col(i) = (plus - minus) / (2.0 * h);
      } else if (hi_ok) {
        eval(hi, plus);
        eval(p, minus);
        jac.col(i) = (plus - minus) / h;
      } else {
        eval(p, plus);
        eval(lo, minus);
        jac.col(i) = (plus - minus) / h;
      }
    }
  }

  void eval(const Vec4& p, Eigen::VectorXd& out) const {
    model_.evaluate(to_params(p), std::span<double>(out.data(), static_cast<std::size_t>(out.size())), {});
  }

  Eigen::Map<const Eigen::VectorXd> y_;
  const ForwardModel& model_;
  const FitConfig& cfg_;
};

// Components of g that would move p outside the box are zeroed.
inline Vec4 projected_gradient(const Vec4& p, const Vec4& g, const FitConfig& cfg) {
  Vec4 out = g;
  for (int i = 0; i < 4; ++i) {
    const Interval& b = cfg.bounds.range[static_cast<std::size_t>(i)];
    if ((p[i] <= b.lo && g[i] > 0.0) || (p[i] >= b.hi && g[i] < 0.0)) out[i] = 0.0;
  }
  return out;
}

// Newton iterations with the exact Hessian (central differences of the
// analytic gradient) on the free set. Gauss-Newton alone converges only
// linearly when residuals are large; this finishes the job near a minimum.
// Returns true when the gradient tolerance was reached.
inline bool newton_polish(const Problem& prob, const FitConfig& cfg, double scale, Vec4& p, double& cost,
                          Eigen::VectorXd& r, JacMat& jac, Vec4& g) {
  Eigen::VectorXd rt;
  JacMat jt;
  for (int it = 0; it < 20; ++it) {
    const double pg = 2.0 * projected_gradient(p, g, cfg).lpNorm<Eigen::Infinity>() / scale;
    if (pg <= cfg.gradient_tolerance) return true;
    std::array<int, 4> free_idx{};
    int nfree = 0;
    for (int i = 0; i < 4; ++i) {
      const Interval& b = cfg.bounds.range[static_cast<std::size_t>(i)];
      if (!((p[i] <= b.lo && g[i] > 0.0) || (p[i] >= b.hi && g[i] < 0.0))) free_idx[static_cast<std::size_t>(nfree++)] = i;
    }
    if (nfree == 0) return true;
    Eigen::MatrixXd hess(nfree, nfree);
    for (int a = 0; a < nfree; ++a) {
      const int i = free_idx[static_cast<std::size_t>(a)];
      const double hstep = 1e-6 * std::max(std::abs(p[i]), 1e-3);
      Vec4 hi = p, lo = p;
      hi[i] += hstep;
      lo[i] -= hstep;
      const bool lo_ok = project_feasible(lo, cfg) == lo;
      const bool hi_ok = project_feasible(hi, cfg) == hi;
      if (!hi_ok && !lo_ok) return false;
      Vec4 gh = g, gl = g;
      double width = hstep;
      if (hi_ok) {
        prob.cost_and_jacobian(hi, rt, jt);
        gh = jt.transpose() * rt;
      }
      if (lo_ok) {
        prob.cost_and_jacobian(lo, rt, jt);
        gl = jt.transpose() * rt;
      }
      if (hi_ok && lo_ok) width = 2.0 * hstep;
      for (int b = 0; b < nfree; ++b) hess(b, a) = (gh[free_idx[static_cast<std::size_t>(b)]] - gl[free_idx[static_cast<std::size_t>(b)]]) / width;
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) return false;
    Eigen::VectorXd gf(nfree);
    for (int a = 0; a < nfree; ++a) gf[a] = g[free_idx[static_cast<std::size_t>(a)]];
    const Eigen::VectorXd df = ldlt.solve(-gf);
    Vec4 delta = Vec4::Zero();
    for (int a = 0; a < nfree; ++a) delta[free_idx[static_cast<std::size_t>(a)]] = df[a];
    const Vec4 trial = project_feasible(p + delta, cfg);
    if (!trial.allFinite() || trial == p) return false;
    const double cost_trial = prob.cost_and_jacobian(trial, rt, jt);
    const Vec4 g_trial = jt.transpose() * rt;
    const double pg_trial = 2.0 * projected_gradient(trial, g_trial, cfg).lpNorm<Eigen::Infinity>() / scale;
    // Near the minimum the cost is flat to rounding; the gradient must improve.
    if (!(cost_trial <= cost * (1.0 + 1e-12)) || !(pg_trial < pg)) return false;
    p = trial;
    cost = cost_trial;
    r = rt;
    jac = jt;
    g = g_trial;
  }
  return 2.0 * projected_gradient(p, g, cfg).lpNorm<Eigen::Infinity>() / scale <= cfg.gradient_tolerance;
}

inline void finalize(FitResult& res, const Vec4& p, double sum_sq, const JacMat* jac, Eigen::Index n,
                     const FitConfig& cfg) {
  res.params = to_params(p);
  res.final_cost = sum_sq / static_cast<double>(n);
  for (int i = 0; i < 4; ++i) {
    const Interval& b = cfg.bounds.range[static_cast<std::size_t>(i)];
    res.at_bound[static_cast<std::size_t>(i)] = p[i] <= b.lo || p[i] >= b.hi;
  }
  if (jac != nullptr && n > 4) {
    const Mat4 h = jac->transpose() * (*jac);
    Eigen::FullPivLU<Mat4> lu(h);
    if (lu.isInvertible() && lu.rcond() > 1e-14) {
      const double sigma2 = sum_sq / static_cast<double>(n - 4);
      const Mat4 cov = sigma2 * lu.inverse();
      std::array<double, 4> se{};
      for (int i = 0; i < 4; ++i) se[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, cov(i, i)));
      res.standard_errors = se;
    }
  }
}

}  // namespace detail

/// Least-squares fit of one TAC against a prepared forward model.
inline FitResult fit_tac(const Tac& tac, const ForwardModel& model, const FitConfig& cfg) {
  using namespace detail;
  cfg.validate();
  if (tac.size() != model.frame_count()) throw DomainError("fit_tac: TAC length does not match the schedule");
  for (double v : tac)
    if (!std::isfinite(v)) throw DomainError("fit_tac: TAC contains non-finite values");

  const auto n = static_cast<Eigen::Index>(tac.size());
  FitResult res;
  Vec4 p = project_feasible(to_vec(cfg.initial), cfg);

  const auto grid = model.input_grid();
  const bool zero_input = std::all_of(grid.begin(), grid.end(), [](double a) { return a == 0.0; });
  const bool zero_tac = std::all_of(tac.begin(), tac.end(), [](double v) { return v == 0.0; });
  double sum_y2 = 0.0;
  for (double v : tac) sum_y2 += v * v;

  if (zero_input) {
    // C(t) is identically zero for every parameter vector.
    res.converged = true;
    res.degenerate = true;
    res.termination = Termination::Degenerate;
    finalize(res, p, sum_y2, nullptr, n, cfg);
    return res;
  }
  if (zero_tac && cfg.bounds.range[0].lo == 0.0 && cfg.bounds.range[3].lo == 0.0) {
    // K1 = VB = 0 reproduces the zero curve exactly; k2, k3 are then unidentifiable.
    p[0] = 0.0;
    p[3] = 0.0;
    res.converged = true;
    res.degenerate = true;
    res.termination = Termination::ZeroCost;
    finalize(res, p, 0.0, nullptr, n, cfg);
    return res;
  }

  const double scale = sum_y2 > 0.0 ? sum_y2 : 1.0;
  const Problem prob(tac, model, cfg);
  Eigen::VectorXd r, r_trial;
  JacMat jac;
  double cost = prob.cost_and_jacobian(p, r, jac);
  Mat4 h = jac.transpose() * jac;
  Vec4 g = jac.transpose() * r;
  double mu = 1e-3;
  double nu = 2.0;
  int small_steps = 0;
  res.termination = Termination::MaxIterations;

  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    const double pg = 2.0 * projected_gradient(p, g, cfg).lpNorm<Eigen::Infinity>() / scale;
    if (cost == 0.0) {
      res.termination = Termination::ZeroCost;
      break;
    }
    if (pg <= cfg.gradient_tolerance) {
      res.termination = Termination::Gradient;
      break;
    }
    if (small_steps >= 3) {
      res.termination = Termination::Stalled;
      break;
    }

    // Active set: bound-pinned parameters whose descent direction leaves the box.
    std::array<int, 4> free_idx{};
    int nfree = 0;
    for (int i = 0; i < 4; ++i) {
      const Interval& b = cfg.bounds.range[static_cast<std::size_t>(i)];
      const bool blocked = (p[i] <= b.lo && g[i] > 0.0) || (p[i] >= b.hi && g[i] < 0.0);
      if (!blocked) free_idx[static_cast<std::size_t>(nfree++)] = i;
    }
    if (nfree == 0) {
      res.termination = Termination::Gradient;
      break;
    }
    // Marquardt step as the least-squares solution of [J D^-1; sqrt(mu) I] z = [-r; 0],
    // delta = D^-1 z with D the column norms; avoids squaring the condition number.
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + nfree, nfree);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + nfree);
    rhs.head(n) = -r;
    Eigen::VectorXd col_scale(nfree);
    const double diag_max = h.diagonal().maxCoeff();
    for (int a = 0; a < nfree; ++a) {
      const int i = free_idx[static_cast<std::size_t>(a)];
      col_scale[a] = std::sqrt(std::max(h(i, i), 1e-12 * std::max(diag_max, 1e-300)));
      aug.col(a).head(n) = jac.col(i) / col_scale[a];
      aug(n + a, a) = std::sqrt(mu);
    }
    const Eigen::VectorXd df = aug.colPivHouseholderQr().solve(rhs).cwiseQuotient(col_scale);

    Vec4 delta = Vec4::Zero();
    for (int a = 0; a < nfree; ++a) delta[free_idx[static_cast<std::size_t>(a)]] = df[a];
    const Vec4 trial = project_feasible(p + delta, cfg);
    const Vec4 step = trial - p;
    if (!step.allFinite() || step.lpNorm<Eigen::Infinity>() == 0.0) {
      mu *= nu;
      nu *= 2.0;
      if (mu > 1e30) {
        res.termination = Termination::Stalled;
        break;
      }
      continue;
    }

    const double cost_trial = prob.cost(trial, r_trial);
    const double predicted = -(2.0 * g.dot(step) + step.dot(h * step));
    const double actual = cost - cost_trial;
    if (std::isfinite(cost_trial) && actual > 0.0) {
      const double rho = predicted > 0.0 ? actual / predicted : 1.0;
      const bool step_small = step.norm() <= cfg.step_tolerance * (p.norm() + cfg.step_tolerance);
      const bool cost_small = actual <= cfg.cost_tolerance * cost;
      small_steps = (step_small || cost_small) ? small_steps + 1 : 0;
      p = trial;
      cost = prob.cost_and_jacobian(p, r, jac);
      h = jac.transpose() * jac;
      g = jac.transpose() * r;
      const double t = 2.0 * rho - 1.0;
      mu *= std::max(1.0 / 3.0, 1.0 - t * t * t);
      nu = 2.0;
    } else {
      mu *= nu;
      nu *= 2.0;
      if (mu > 1e30) {
        res.termination = Termination::Stalled;
        break;
      }
    }
  }

  if (res.termination == Termination::Stalled || res.termination == Termination::MaxIterations) {
    if (newton_polish(prob, cfg, scale, p, cost, r, jac, g)) res.termination = Termination::Gradient;
  }
  res.iterations = iter;
  res.projected_gradient = 2.0 * projected_gradient(p, g, cfg).lpNorm<Eigen::Infinity>() / scale;
  res.converged = res.termination == Termination::Gradient || res.termination == Termination::ZeroCost;
  finalize(res, p, cost, &jac, n, cfg);
  return res;
}

inline FitResult fit_tac(const Tac& tac, const InputFunction& a, const FrameSchedule& s, const FitConfig& cfg) {
  const ForwardModel model(a, s, cfg.model);
  return fit_tac(tac, model, cfg);
}

struct VoxelwiseOptions {
  unsigned threads = 1;
  /// Restrict to one axial slice.
  std::optional<std::size_t> slice;
};

/// Independent fit_tac per voxel. Output channels K1, k2, k3, VB, converged;
/// voxels outside the mask (label 0) are left at zero.
inline ParametricVolume fit_voxelwise(const DynamicVolume& vol, const InputFunction& a, const FitConfig& cfg,
                                      const LabelMap* mask = nullptr, VoxelwiseOptions opt = {}) {
  cfg.validate();
  const Dims3 dims = vol.dims();
  if (mask != nullptr && mask->dims() != dims) throw DomainError("fit_voxelwise: mask dims do not match the volume");
  if (opt.slice && *opt.slice >= dims.z) throw DomainError("fit_voxelwise: slice index out of range");
  const ForwardModel model(a, vol.schedule(), cfg.model);

  std::vector<std::size_t> voxels;
  const std::size_t z0 = opt.slice ? *opt.slice : 0;
  const std::size_t z1 = opt.slice ? *opt.slice + 1 : dims.z;
  for (std::size_t z = z0; z < z1; ++z)
    for (std::size_t i = dims.index(z, 0, 0); i < dims.index(z, 0, 0) + dims.y * dims.x; ++i)
      if (mask == nullptr || (*mask)[i] != 0) voxels.push_back(i);

  ParametricVolume out(dims, ParametricVolume::kinetic_channels(), vol.spacing());
  parallel_for(voxels.size(), opt.threads, [&](std::size_t k) {
    const std::size_t v = voxels[k];
    const FitResult r = fit_tac(vol.tac(v), model, cfg);
    out.set_params(v, r.params);
    out.at(4, v) = r.converged ? 1.0f : 0.0f;
  });
  return out;
}

/// Mean TAC over the voxels carrying `label`.
inline Tac voi_mean_tac(const DynamicVolume& vol, const LabelMap& mask, std::uint8_t label) {
  if (mask.dims() != vol.dims()) throw DomainError("voi_mean_tac: mask dims do not match the volume");
  Tac mean(vol.frames(), 0.0);
  std::size_t count = 0;
  for (std::size_t v = 0; v < vol.dims().voxels(); ++v) {
    if (mask[v] != label) continue;
    ++count;
    for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += vol.at(t, v);
  }
  if (count == 0) throw DomainError("voi_mean_tac: label " + std::to_string(label) + " has no voxels");
  for (double& m : mean) m /= static_cast<double>(count);
  return mean;
}

/// Averages the VoI's TACs, then fits once.
inline FitResult fit_voi(const DynamicVolume& vol, const LabelMap& mask, std::uint8_t label, const InputFunction& a,
                         const FitConfig& cfg) {
  return fit_tac(voi_mean_tac(vol, mask, label), a, vol.schedule(), cfg);
}

}  // namespace pbpk

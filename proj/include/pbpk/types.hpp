#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbpk {

/// Raised when inputs violate a mathematical precondition (k2+k3 = 0, t < 0,
/// schedule/input mismatch, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised for malformed files, sidecars and configs.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSecondsPerMinute = 60.0;

/// Irreversible two-tissue compartment micro-parameters.
///   k1 [ml/cm^3/min], k2 [1/min], k3 [1/min], vb [-]
struct KineticParams {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double vb = 0.0;

  static constexpr std::size_t size = 4;

  [[nodiscard]] std::array<double, 4> to_array() const { return {k1, k2, k3, vb}; }
  static KineticParams from_array(std::span<const double, 4> v) { return {v[0], v[1], v[2], v[3]}; }

  [[nodiscard]] double rate_sum() const { return k2 + k3; }

  [[nodiscard]] bool is_physical() const {
    return std::isfinite(k1) && std::isfinite(k2) && std::isfinite(k3) && std::isfinite(vb) &&
           k1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0 && vb >= 0.0 && vb <= 1.0;
  }

  /// The forward model is defined for any non-negative finite values; vb > 1
  /// only arises under the unbounded curve-fit box.
  [[nodiscard]] bool is_evaluable() const {
    return std::isfinite(k1) && std::isfinite(k2) && std::isfinite(k3) && std::isfinite(vb) &&
           k1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0 && vb >= 0.0;
  }

  friend bool operator==(const KineticParams&, const KineticParams&) = default;
};

inline const std::array<std::string, 4> kParamNames{"K1", "k2", "k3", "VB"};

struct Interval {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  [[nodiscard]] double clamp(double v) const {
    if (std::isnan(v)) return lo;
    return std::min(std::max(v, lo), hi);
  }
  [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Per-parameter closed intervals in (k1, k2, k3, vb) order.
struct ParamBounds {
  std::array<Interval, 4> range{};

  /// Output box of the network head: K1 in [0.01,2], k2 in [0.01,3], k3 in [0.01,1], VB in [0,1].
  static ParamBounds clamp_box() { return {{{{0.01, 2.0}, {0.01, 3.0}, {0.01, 1.0}, {0.0, 1.0}}}}; }

  /// [0, +inf) on every parameter, as used by the classical curve fit.
  static ParamBounds non_negative() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {{{{0.0, inf}, {0.0, inf}, {0.0, inf}, {0.0, inf}}}};
  }

  [[nodiscard]] bool contains(const KineticParams& p) const {
    const auto v = p.to_array();
    for (std::size_t i = 0; i < 4; ++i)
      if (!range[i].contains(v[i])) return false;
    return true;
  }

  void validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
      if (std::isnan(range[i].lo) || std::isnan(range[i].hi) || range[i].lo > range[i].hi)
        throw DomainError("ParamBounds: lo > hi for " + kParamNames[i]);
    }
  }
};

/// One acquisition window, seconds.
struct Frame {
  double start_s = 0.0;
  double duration_s = 0.0;

  [[nodiscard]] double end_s() const { return start_s + duration_s; }
  [[nodiscard]] double mid_s() const { return start_s + 0.5 * duration_s; }
};

/// Contiguous, non-overlapping acquisition windows.
///
/// Full acquisition schedules start at t = 0. A schedule obtained with
/// subschedule() keeps absolute times and may start later; every model
/// still integrates from t = 0.
class FrameSchedule {
 public:
  FrameSchedule() = default;

  explicit FrameSchedule(std::vector<Frame> frames) : frames_(std::move(frames)) {
    if (frames_.empty()) throw DomainError("FrameSchedule: no frames");
    if (!(frames_.front().start_s >= 0.0)) throw DomainError("FrameSchedule: negative start time");
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      const Frame& f = frames_[i];
      if (!(f.duration_s > 0.0) || !std::isfinite(f.duration_s))
        throw DomainError("FrameSchedule: frame " + std::to_string(i) + " has non-positive duration");
      if (i > 0) {
        const double expected = frames_[i - 1].end_s();
        if (std::abs(f.start_s - expected) > 1e-9 * std::max(1.0, expected))
          throw DomainError("FrameSchedule: frame " + std::to_string(i) + " is not contiguous with its predecessor");
      }
    }
  }

  static FrameSchedule from_durations(std::span<const double> durations_s, double start_s = 0.0) {
    std::vector<Frame> frames;
    frames.reserve(durations_s.size());
    double t = start_s;
    for (double d : durations_s) {
      frames.push_back({t, d});
      t += d;
    }
    return FrameSchedule(std::move(frames));
  }

  /// 62-frame, 65-minute whole-body FDG protocol:
  /// 2x10 s, 30x2 s, 4x10 s, 8x30 s, 4x60 s, 5x120 s, 9x300 s.
  static FrameSchedule reference_62() {
    std::vector<double> d;
    auto add = [&d](int n, double dur) { d.insert(d.end(), static_cast<std::size_t>(n), dur); };
    add(2, 10.0);
    add(30, 2.0);
    add(4, 10.0);
    add(8, 30.0);
    add(4, 60.0);
    add(5, 120.0);
    add(9, 300.0);
    return from_durations(d);
  }

  [[nodiscard]] std::size_t size() const { return frames_.size(); }
  [[nodiscard]] bool empty() const { return frames_.empty(); }
  [[nodiscard]] const Frame& operator[](std::size_t i) const { return frames_[i]; }
  [[nodiscard]] const std::vector<Frame>& frames() const { return frames_; }
  [[nodiscard]] double start_time_s() const { return frames_.front().start_s; }
  [[nodiscard]] double end_time_s() const { return frames_.back().end_s(); }

  [[nodiscard]] std::vector<double> mid_times_s() const {
    std::vector<double> m(frames_.size());
    std::transform(frames_.begin(), frames_.end(), m.begin(), [](const Frame& f) { return f.mid_s(); });
    return m;
  }

  [[nodiscard]] std::vector<double> durations_s() const {
    std::vector<double> d(frames_.size());
    std::transform(frames_.begin(), frames_.end(), d.begin(), [](const Frame& f) { return f.duration_s; });
    return d;
  }

  [[nodiscard]] FrameSchedule subschedule(std::size_t first, std::size_t count) const {
    if (first + count > frames_.size() || count == 0) throw DomainError("FrameSchedule: subschedule out of range");
    return FrameSchedule(std::vector<Frame>(frames_.begin() + static_cast<std::ptrdiff_t>(first),
                                            frames_.begin() + static_cast<std::ptrdiff_t>(first + count)));
  }

  friend bool operator==(const FrameSchedule& a, const FrameSchedule& b) {
    return a.frames_.size() == b.frames_.size() &&
           std::equal(a.frames_.begin(), a.frames_.end(), b.frames_.begin(), [](const Frame& x, const Frame& y) {
             return x.start_s == y.start_s && x.duration_s == y.duration_s;
           });
  }

 private:
  std::vector<Frame> frames_;
};

/// A sample of the arterial input. duration_s == 0 is an instantaneous
/// sample at start_s; otherwise the value is a frame average and is placed
/// at the frame mid-time.
struct InputSample {
  double start_s = 0.0;
  double duration_s = 0.0;
  double value = 0.0;

  [[nodiscard]] double time_s() const { return start_s + 0.5 * duration_s; }
  [[nodiscard]] double end_s() const { return start_s + duration_s; }
};

/// Arterial input A(t) [Bq/ml]. Piecewise linear between sample times,
/// zero before the first sample, held at the last value afterwards.
class InputFunction {
 public:
  InputFunction() = default;

  explicit InputFunction(std::vector<InputSample> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw DomainError("InputFunction: no samples");
    times_.reserve(samples_.size());
    values_.reserve(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const InputSample& s = samples_[i];
      if (!std::isfinite(s.start_s) || !std::isfinite(s.duration_s) || s.duration_s < 0.0)
        throw DomainError("InputFunction: invalid sample window at row " + std::to_string(i));
      if (!std::isfinite(s.value) || s.value < 0.0)
        throw DomainError("InputFunction: negative or non-finite activity at row " + std::to_string(i));
      if (!times_.empty() && !(s.time_s() > times_.back()))
        throw DomainError("InputFunction: sample times not strictly increasing at row " + std::to_string(i));
      if (i > 0 && s.start_s < samples_[i - 1].end_s())
        throw DomainError("InputFunction: sample window overlaps the previous one at row " + std::to_string(i));
      times_.push_back(s.time_s());
      values_.push_back(s.value);
      coverage_end_s_ = std::max(coverage_end_s_, s.end_s());
    }
  }

  static InputFunction from_points(std::span<const double> times_s, std::span<const double> values) {
    if (times_s.size() != values.size()) throw DomainError("InputFunction: times/values length mismatch");
    std::vector<InputSample> s(times_s.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = {times_s[i], 0.0, values[i]};
    return InputFunction(std::move(s));
  }

  /// Frame-averaged activities placed at frame mid-times.
  static InputFunction from_frames(const FrameSchedule& s, std::span<const double> values) {
    if (s.size() != values.size()) throw DomainError("InputFunction: frame/value count mismatch");
    std::vector<InputSample> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = {s[i].start_s, s[i].duration_s, values[i]};
    return InputFunction(std::move(out));
  }

  [[nodiscard]] double at(double t_s) const {
    if (times_.empty() || t_s < times_.front()) return 0.0;
    if (t_s >= times_.back()) return values_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t_s);
    const auto hi = static_cast<std::size_t>(it - times_.begin());
    const std::size_t lo = hi - 1;
    const double w = (t_s - times_[lo]) / (times_[hi] - times_[lo]);
    return values_[lo] + w * (values_[hi] - values_[lo]);
  }

  /// Last time the samples describe (end of the last window).
  [[nodiscard]] double coverage_end_s() const { return coverage_end_s_; }
  [[nodiscard]] const std::vector<InputSample>& samples() const { return samples_; }
  [[nodiscard]] const std::vector<double>& times_s() const { return times_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] std::size_t size() const { return samples_.size(); }

  [[nodiscard]] InputFunction scaled(double factor) const {
    std::vector<InputSample> s = samples_;
    for (auto& x : s) x.value *= factor;
    return InputFunction(std::move(s));
  }

 private:
  std::vector<InputSample> samples_;
  std::vector<double> times_;
  std::vector<double> values_;
  double coverage_end_s_ = 0.0;
};

/// Per-frame mean activity [Bq/ml], aligned with a FrameSchedule.
using Tac = std::vector<double>;

}  // namespace pbpk

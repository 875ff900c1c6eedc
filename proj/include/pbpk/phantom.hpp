#pragma once

// Synthetic dynamic PET datasets with known ground truth.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pbpk/kinetic.hpp"
#include "pbpk/parallel.hpp"
#include "pbpk/types.hpp"
#include "pbpk/volume.hpp"

namespace pbpk {

/// Tri-exponential arterial input (Feng-style FDG shape), with tau = t - delay in minutes:
///   A = (peak_slope tau - amp2 - amp3) e^{-rate1 tau} + amp2 e^{-rate2 tau} + amp3 e^{-rate3 tau}
/// and A = 0 before the delay. Default coefficients are synthetic, not patient-derived.
struct InputFunctionModel {
  double peak_slope = 851.1225;  // [Bq/ml/min]
  double amp2 = 21.8798;         // [Bq/ml]
  double amp3 = 20.8113;         // [Bq/ml]
  double rate1 = 4.1339;         // [1/min]
  double rate2 = 0.1191;         // [1/min]
  double rate3 = 0.0104;         // [1/min]
  double delay_s = 30.0;

  [[nodiscard]] double operator()(double t_s) const {
    if (t_s < delay_s) return 0.0;
    const double tau = (t_s - delay_s) / kSecondsPerMinute;
    return (peak_slope * tau - amp2 - amp3) * std::exp(-rate1 * tau) + amp2 * std::exp(-rate2 * tau) +
           amp3 * std::exp(-rate3 * tau);
  }

  /// Rejects coefficient sets that go negative on [0, horizon_s].
  void validate(double horizon_s = 65.0 * kSecondsPerMinute) const {
    const std::array<double, 7> c{peak_slope, amp2, amp3, rate1, rate2, rate3, delay_s};
    for (double v : c)
      if (!std::isfinite(v) || v < 0.0) throw DomainError("InputFunctionModel: coefficients must be finite and non-negative");
    for (double t = delay_s; t <= horizon_s; t += 0.1) {
      if ((*this)(t) < -1e-12 * (peak_slope + amp2 + amp3))
        throw DomainError("InputFunctionModel: coefficients produce negative activity at t = " + std::to_string(t) + " s");
    }
  }
};

/// Samples the analytic input on the uniform grid [0, end] (values clipped at 0).
inline InputFunction synth_input(const InputFunctionModel& m, const FrameSchedule& s, double fine_step_s = 1.0) {
  m.validate(std::max(s.end_time_s(), 65.0 * kSecondsPerMinute));
  if (!(fine_step_s > 0.0)) throw DomainError("synth_input: fine step must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(s.end_time_s() / fine_step_s - 1e-9));
  std::vector<double> t(n + 1), v(n + 1);
  for (std::size_t j = 0; j <= n; ++j) {
    t[j] = static_cast<double>(j) * fine_step_s;
    v[j] = std::max(0.0, m(t[j]));
  }
  return InputFunction::from_points(t, v);
}

enum class RegionShape { Box, Ellipsoid };

/// Region in voxel coordinates (z, y, x); a voxel belongs to a box when
/// |i - center| <= half_extent on every axis, to an ellipsoid when the
/// normalized squared distance is <= 1.
struct OrganRegion {
  std::uint8_t label = 0;
  std::string name;
  RegionShape shape = RegionShape::Ellipsoid;
  std::array<double, 3> center{};
  std::array<double, 3> half_extent{};
  KineticParams params{};

  [[nodiscard]] bool contains(std::size_t z, std::size_t y, std::size_t x) const {
    const std::array<double, 3> p{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
    if (shape == RegionShape::Box) {
      for (int i = 0; i < 3; ++i)
        if (std::abs(p[i] - center[i]) > half_extent[i]) return false;
      return true;
    }
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = (p[i] - center[i]) / half_extent[i];
      s += d * d;
    }
    return s <= 1.0;
  }
};

enum class NoiseKind {
  None,
  Gaussian,          // sd proportional to sqrt(C / duration)
  GaussianFraction,  // sd = level * C
  ScaledPoisson,     // Poisson counts with the same variance as Gaussian
};

struct NoiseModel {
  NoiseKind kind = NoiseKind::None;
  double level = 0.0;
};

/// Organ table (value, ml/cm^3/min and 1/min) used for the default phantom.
struct OrganPreset {
  std::uint8_t label;
  const char* name;
  KineticParams params;
};

inline const std::array<OrganPreset, 7>& organ_presets() {
  static const std::array<OrganPreset, 7> presets{{
      {1, "bones", {0.112, 0.619, 0.025, 0.005}},
      {2, "lungs", {0.116, 0.683, 0.022, 0.098}},
      {3, "heart", {0.644, 1.108, 0.020, 0.376}},
      {4, "liver", {0.611, 0.793, 0.014, 0.005}},
      {5, "kidneys", {0.867, 1.135, 0.016, 0.115}},
      {6, "spleen", {0.678, 1.165, 0.017, 0.092}},
      {7, "aorta", {0.657, 1.346, 0.035, 0.622}},
  }};
  return presets;
}

inline const OrganPreset& organ_preset(const std::string& name) {
  for (const auto& p : organ_presets())
    if (name == p.name) return p;
  throw DomainError("unknown organ preset: " + name);
}

struct PhantomSpec {
  Dims3 dims{32, 64, 64};
  Spacing spacing = kDefaultSpacing;
  std::vector<OrganRegion> organs;
  NoiseModel noise{};
  std::uint64_t seed = 0;
  InputFunctionModel input{};

  /// Seven organs on a 64x64x32 grid at 2.5 mm. Spine and aorta run through
  /// every axial slice.
  static PhantomSpec default_spec() {
    PhantomSpec s;
    auto add = [&s](const char* organ, RegionShape shape, std::array<double, 3> c, std::array<double, 3> r) {
      const OrganPreset& p = organ_preset(organ);
      s.organs.push_back({p.label, p.name, shape, c, r, p.params});
    };
    using enum RegionShape;
    add("lungs", Ellipsoid, {24, 30, 16}, {7, 12, 9});
    add("lungs", Ellipsoid, {24, 30, 48}, {7, 12, 9});
    add("heart", Ellipsoid, {26, 24, 32}, {5, 7, 6});
    add("aorta", Box, {15.5, 37.5, 31.5}, {15.5, 1.5, 1.5});
    add("bones", Box, {15.5, 47.5, 31.5}, {15.5, 3.5, 2.5});
    add("liver", Ellipsoid, {9, 30, 18}, {6, 11, 11});
    add("spleen", Ellipsoid, {11, 34, 48}, {4, 6, 6});
    add("kidneys", Ellipsoid, {6, 48, 22}, {4, 5, 4});
    add("kidneys", Ellipsoid, {6, 48, 42}, {4, 5, 4});
    return s;
  }

  void validate() const {
    if (dims.voxels() == 0) throw DomainError("PhantomSpec: empty grid");
    std::map<std::uint8_t, KineticParams> seen;
    const ParamBounds box = ParamBounds::clamp_box();
    for (const auto& o : organs) {
      if (o.label == 0) throw DomainError("PhantomSpec: organ label 0 is reserved for background");
      if (!box.contains(o.params)) throw DomainError("PhantomSpec: preset for " + o.name + " is outside the clamp box");
      for (double h : o.half_extent)
        if (!(h >= 0.0)) throw DomainError("PhantomSpec: negative region extent for " + o.name);
      if (o.shape == RegionShape::Ellipsoid)
        for (double h : o.half_extent)
          if (!(h > 0.0)) throw DomainError("PhantomSpec: ellipsoid radius must be positive for " + o.name);
      const auto [it, inserted] = seen.emplace(o.label, o.params);
      if (!inserted && !(it->second == o.params))
        throw DomainError("PhantomSpec: label " + std::to_string(o.label) + " has conflicting presets");
    }
    if (noise.kind != NoiseKind::None && !(noise.level >= 0.0)) throw DomainError("PhantomSpec: negative noise level");
  }
};

/// Rasterizes the organ regions; overlapping regions are an error.
inline LabelMap rasterize(const PhantomSpec& spec) {
  spec.validate();
  LabelMap labels(spec.dims, spec.spacing);
  const Dims3& d = spec.dims;
  for (const auto& o : spec.organs) {
    labels.legend()[o.label] = o.name;
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
          if (!o.contains(z, y, x)) continue;
          std::uint8_t& l = labels[d.index(z, y, x)];
          if (l != 0)
            throw DomainError("PhantomSpec: region " + o.name + " overlaps label " + std::to_string(l) + " at (z=" +
                              std::to_string(z) + ", y=" + std::to_string(y) + ", x=" + std::to_string(x) + ")");
          l = o.label;
        }
  }
  return labels;
}

/// Per-frame noise standard deviation for a noiseless TAC.
inline std::vector<double> noise_sd(const NoiseModel& noise, const Tac& clean, const FrameSchedule& s) {
  std::vector<double> sd(clean.size(), 0.0);
  if (noise.kind == NoiseKind::None) return sd;
  if (noise.kind == NoiseKind::GaussianFraction) {
    for (std::size_t f = 0; f < sd.size(); ++f) sd[f] = noise.level * std::abs(clean[f]);
    return sd;
  }
  // Duration-weighted mean activity and mean duration fix the scale so that
  // a flat curve on equal frames gets sd = level * C.
  double total = 0.0, weighted = 0.0;
  for (std::size_t f = 0; f < sd.size(); ++f) {
    total += s[f].duration_s;
    weighted += std::max(clean[f], 0.0) * s[f].duration_s;
  }
  const double c_ref = weighted / total;
  const double d_ref = total / static_cast<double>(s.size());
  for (std::size_t f = 0; f < sd.size(); ++f)
    sd[f] = noise.level * std::sqrt(std::max(clean[f], 0.0) * c_ref * d_ref / s[f].duration_s);
  return sd;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Noise draw for one voxel; the stream depends only on (seed, voxel).
inline Tac add_noise(const NoiseModel& noise, const Tac& clean, const FrameSchedule& s, std::uint64_t seed,
                     std::uint64_t voxel) {
  if (noise.kind == NoiseKind::None || noise.level == 0.0) return clean;
  std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(voxel + 1)));
  const std::vector<double> sd = noise_sd(noise, clean, s);
  Tac out(clean.size());
  if (noise.kind == NoiseKind::ScaledPoisson) {
    // counts = C * D * k with k chosen so that var(C) matches sd^2.
    for (std::size_t f = 0; f < out.size(); ++f) {
      const double c = std::max(clean[f], 0.0);
      if (c == 0.0 || sd[f] == 0.0) {
        out[f] = c;
        continue;
      }
      const double counts_per_unit = c / (sd[f] * sd[f]);
      std::poisson_distribution<long long> draw(c * counts_per_unit);
      out[f] = static_cast<double>(draw(rng)) / counts_per_unit;
    }
    return out;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t f = 0; f < out.size(); ++f) out[f] = clean[f] + sd[f] * gauss(rng);
  return out;
}

struct Phantom {
  DynamicVolume volume;
  LabelMap labels;
  ParametricVolume truth;
};

/// Organ-labeled dynamic volume whose voxel TACs are model_tac of the organ
/// preset plus per-voxel noise. Unlabeled voxels stay zero.
inline Phantom build_phantom(const PhantomSpec& spec, const InputFunction& a, const FrameSchedule& s,
                             ModelOptions opt = {}, unsigned threads = 1) {
  Phantom ph{DynamicVolume(spec.dims, s, spec.spacing), rasterize(spec),
             ParametricVolume(spec.dims, ParametricVolume::truth_channels(), spec.spacing)};
  const ForwardModel model(a, s, opt);
  std::map<std::uint8_t, Tac> clean;
  std::map<std::uint8_t, KineticParams> params;
  for (const auto& o : spec.organs) {
    if (!clean.contains(o.label)) clean.emplace(o.label, model(o.params));
    params[o.label] = o.params;
  }
  const std::size_t nvox = spec.dims.voxels();
  parallel_for(nvox, threads, [&](std::size_t v) {
    const std::uint8_t l = ph.labels[v];
    if (l == 0) return;
    ph.volume.set_tac(v, add_noise(spec.noise, clean.at(l), s, spec.seed, v));
    ph.truth.set_params(v, params.at(l));
  });
  return ph;
}

}  // namespace pbpk

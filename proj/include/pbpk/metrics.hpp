#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbpk/kinetic.hpp"
#include "pbpk/parallel.hpp"
#include "pbpk/types.hpp"
#include "pbpk/volume.hpp"

namespace pbpk {

/// Cosine similarity of a zero-norm curve.
class UndefinedCosineError : public DomainError {
 public:
  using DomainError::DomainError;
};

struct TacMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double cosine_similarity = 1.0;
};

inline TacMetrics tac_metrics(const Tac& measured, const Tac& modeled) {
  if (measured.size() != modeled.size()) throw DomainError("tac_metrics: length mismatch");
  if (measured.empty()) throw DomainError("tac_metrics: empty curves");
  double se = 0.0, ae = 0.0, dot = 0.0, nm = 0.0, nd = 0.0;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const double d = modeled[i] - measured[i];
    se += d * d;
    ae += std::abs(d);
    dot += measured[i] * modeled[i];
    nm += measured[i] * measured[i];
    nd += modeled[i] * modeled[i];
  }
  if (nm == 0.0 || nd == 0.0) throw UndefinedCosineError("tac_metrics: cosine similarity undefined for a zero-norm curve");
  const auto n = static_cast<double>(measured.size());
  TacMetrics m;
  m.mse = se / n;
  m.mae = ae / n;
  m.cosine_similarity = std::clamp(dot / (std::sqrt(nm) * std::sqrt(nd)), -1.0, 1.0);
  return m;
}

struct ChannelStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct OrganStats {
  std::uint8_t label = 0;
  std::string name;
  std::size_t count = 0;
  std::vector<ChannelStats> channels;
  /// Voxel-mean TAC metrics, when a reconstruction was requested.
  std::optional<TacMetrics> tac;
};

struct OrganReport {
  std::vector<std::string> channel_names;
  std::vector<OrganStats> organs;

  [[nodiscard]] const OrganStats& organ(std::uint8_t label) const {
    for (const auto& o : organs)
      if (o.label == label) return o;
    throw DomainError("OrganReport: label " + std::to_string(label) + " not reported");
  }
};

/// Per-label mean and population std of every channel.
/// If `labels` is given, each listed label must be present.
inline OrganReport organ_aggregate(const ParametricVolume& pv, const LabelMap& mask,
                                   const std::vector<std::uint8_t>& labels = {}) {
  if (pv.dims() != mask.dims()) throw DomainError("organ_aggregate: dims mismatch");
  const std::size_t nc = pv.channel_count();
  std::map<std::uint8_t, std::vector<std::size_t>> members;
  for (std::size_t v = 0; v < mask.dims().voxels(); ++v)
    if (mask[v] != 0) members[mask[v]].push_back(v);
  for (std::uint8_t l : labels)
    if (!members.contains(l)) throw DomainError("organ_aggregate: label " + std::to_string(l) + " absent from mask");

  OrganReport rep;
  rep.channel_names = pv.channels();
  for (const auto& [label, voxels] : members) {
    if (!labels.empty() && std::find(labels.begin(), labels.end(), label) == labels.end()) continue;
    OrganStats st;
    st.label = label;
    st.name = mask.name(label);
    st.count = voxels.size();
    st.channels.resize(nc);
    const auto n = static_cast<double>(voxels.size());
    for (std::size_t c = 0; c < nc; ++c) {
      double sum = 0.0;
      for (std::size_t v : voxels) sum += pv.at(c, v);
      const double mean = sum / n;
      double ss = 0.0;
      for (std::size_t v : voxels) ss += (pv.at(c, v) - mean) * (pv.at(c, v) - mean);
      st.channels[c] = {mean, std::sqrt(ss / n)};
    }
    rep.organs.push_back(std::move(st));
  }
  return rep;
}

/// Adds voxel-averaged TAC metrics (measured vs reconstructed from the
/// parameter map) to every organ in the report.
inline void add_tac_metrics(OrganReport& rep, const DynamicVolume& vol, const ParametricVolume& pv,
                            const LabelMap& mask, const ForwardModel& model) {
  if (vol.dims() != pv.dims() || vol.dims() != mask.dims()) throw DomainError("add_tac_metrics: dims mismatch");
  for (auto& organ : rep.organs) {
    TacMetrics acc{0.0, 0.0, 0.0};
    std::size_t n = 0;
    for (std::size_t v = 0; v < mask.dims().voxels(); ++v) {
      if (mask[v] != organ.label) continue;
      const TacMetrics m = tac_metrics(vol.tac(v), model(pv.params(v)));
      acc.mse += m.mse;
      acc.mae += m.mae;
      acc.cosine_similarity += m.cosine_similarity;
      ++n;
    }
    const auto dn = static_cast<double>(n);
    organ.tac = TacMetrics{acc.mse / dn, acc.mae / dn, acc.cosine_similarity / dn};
  }
}

struct SliceCs {
  std::size_t z = 0;
  std::size_t voxels = 0;
  double cosine_similarity = 0.0;
};

enum class SliceCsMode {
  VoxelMean,  // CS per voxel, averaged over the slice
  Pooled,     // one CS over the concatenated TACs of the slice
};

/// Cosine similarity between measured TACs and TACs reconstructed from the
/// parameter map, per axial slice. Voxels outside the mask (label 0) are
/// skipped; a slice without scored voxels is an error unless skip_empty,
/// in which case it is left out of the profile.
inline std::vector<SliceCs> per_slice_cs(const DynamicVolume& vol, const ParametricVolume& pv, const ForwardModel& model,
                                         const LabelMap* mask = nullptr, SliceCsMode mode = SliceCsMode::VoxelMean,
                                         unsigned threads = 1, bool skip_empty = false) {
  const Dims3 d = vol.dims();
  if (pv.dims() != d || (mask != nullptr && mask->dims() != d)) throw DomainError("per_slice_cs: dims mismatch");
  if (vol.frames() != model.frame_count()) throw DomainError("per_slice_cs: schedule mismatch");
  std::vector<SliceCs> out(d.z);
  const std::size_t plane = d.y * d.x;
  parallel_for(d.z, threads, [&](std::size_t z) {
    double sum = 0.0, dot = 0.0, nm = 0.0, nr = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t v = z * plane + i;
      if (mask != nullptr && (*mask)[v] == 0) continue;
      const Tac measured = vol.tac(v);
      const Tac modeled = model(pv.params(v));
      if (mode == SliceCsMode::VoxelMean) {
        sum += tac_metrics(measured, modeled).cosine_similarity;
      } else {
        for (std::size_t t = 0; t < measured.size(); ++t) {
          dot += measured[t] * modeled[t];
          nm += measured[t] * measured[t];
          nr += modeled[t] * modeled[t];
        }
      }
      ++count;
    }
    if (count == 0) {
      if (skip_empty) return;
      throw DomainError("per_slice_cs: slice " + std::to_string(z) + " has no voxels to score");
    }
    double cs = 0.0;
    if (mode == SliceCsMode::VoxelMean) {
      cs = sum / static_cast<double>(count);
    } else {
      if (nm == 0.0 || nr == 0.0) throw UndefinedCosineError("per_slice_cs: zero-norm slice " + std::to_string(z));
      cs = std::clamp(dot / (std::sqrt(nm) * std::sqrt(nr)), -1.0, 1.0);
    }
    out[z] = {z, count, cs};
  });
  if (skip_empty) std::erase_if(out, [](const SliceCs& s) { return s.voxels == 0; });
  return out;
}

/// Parameter error of one organ against ground truth.
struct ParamError {
  std::uint8_t label = 0;
  std::string name;
  std::size_t count = 0;
  std::array<double, 4> truth{};
  std::array<double, 4> estimate{};  // organ mean of the estimates
  std::array<double, 4> relative_bias{};
  std::array<double, 4> mean_abs_error{};
};

inline std::vector<ParamError> parameter_errors(const ParametricVolume& estimate, const ParametricVolume& truth,
                                                const LabelMap& mask) {
  if (estimate.dims() != truth.dims() || estimate.dims() != mask.dims())
    throw DomainError("parameter_errors: dims mismatch");
  const OrganReport est = organ_aggregate(estimate, mask);
  const OrganReport ref = organ_aggregate(truth, mask);
  std::vector<ParamError> out;
  for (std::size_t k = 0; k < est.organs.size(); ++k) {
    const OrganStats& e = est.organs[k];
    const OrganStats& r = ref.organs[k];
    ParamError pe;
    pe.label = e.label;
    pe.name = e.name;
    pe.count = e.count;
    for (std::size_t c = 0; c < 4; ++c) {
      pe.truth[c] = r.channels[c].mean;
      pe.estimate[c] = e.channels[c].mean;
      pe.relative_bias[c] = pe.truth[c] != 0.0 ? (pe.estimate[c] - pe.truth[c]) / pe.truth[c] : 0.0;
      double abs_err = 0.0;
      for (std::size_t v = 0; v < mask.dims().voxels(); ++v)
        if (mask[v] == e.label) abs_err += std::abs(static_cast<double>(estimate.at(c, v)) - truth.at(c, v));
      pe.mean_abs_error[c] = abs_err / static_cast<double>(e.count);
    }
    out.push_back(pe);
  }
  return out;
}

}  // namespace pbpk

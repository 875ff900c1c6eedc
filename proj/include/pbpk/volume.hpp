#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pbpk/types.hpp"

namespace pbpk {

/// Spatial extent in voxels, x fastest.
struct Dims3 {
  std::size_t z = 0;
  std::size_t y = 0;
  std::size_t x = 0;

  [[nodiscard]] std::size_t voxels() const { return z * y * x; }
  [[nodiscard]] std::size_t index(std::size_t iz, std::size_t iy, std::size_t ix) const { return (iz * y + iy) * x + ix; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Voxel spacing in mm, (z, y, x).
using Spacing = std::array<double, 3>;

inline constexpr Spacing kDefaultSpacing{2.5, 2.5, 2.5};

/// 4D activity stack [T, Z, Y, X] in Bq/ml.
class DynamicVolume {
 public:
  DynamicVolume() = default;
  DynamicVolume(Dims3 dims, FrameSchedule schedule, Spacing spacing = kDefaultSpacing)
      : dims_(dims), spacing_(spacing), schedule_(std::move(schedule)), data_(dims.voxels() * schedule_.size(), 0.0f) {}

  DynamicVolume(Dims3 dims, FrameSchedule schedule, Spacing spacing, std::vector<float> data)
      : dims_(dims), spacing_(spacing), schedule_(std::move(schedule)), data_(std::move(data)) {
    if (data_.size() != dims_.voxels() * schedule_.size())
      throw DomainError("DynamicVolume: payload has " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(dims_.voxels() * schedule_.size()));
  }

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] const FrameSchedule& schedule() const { return schedule_; }
  [[nodiscard]] std::size_t frames() const { return schedule_.size(); }
  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] std::span<float> data() { return data_; }

  [[nodiscard]] float& at(std::size_t t, std::size_t voxel) { return data_[t * dims_.voxels() + voxel]; }
  [[nodiscard]] float at(std::size_t t, std::size_t voxel) const { return data_[t * dims_.voxels() + voxel]; }

  [[nodiscard]] Tac tac(std::size_t voxel) const {
    Tac out(frames());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = at(t, voxel);
    return out;
  }

  void set_tac(std::size_t voxel, std::span<const double> values) {
    if (values.size() != frames()) throw DomainError("DynamicVolume: TAC length does not match frame count");
    for (std::size_t t = 0; t < values.size(); ++t) at(t, voxel) = static_cast<float>(values[t]);
  }

 private:
  Dims3 dims_{};
  Spacing spacing_{kDefaultSpacing};
  FrameSchedule schedule_;
  std::vector<float> data_;
};

/// 8-bit organ labels; 0 is background.
class LabelMap {
 public:
  using Legend = std::map<std::uint8_t, std::string>;

  LabelMap() = default;
  LabelMap(Dims3 dims, Spacing spacing = kDefaultSpacing) : dims_(dims), spacing_(spacing), data_(dims.voxels(), 0) {}
  LabelMap(Dims3 dims, Spacing spacing, std::vector<std::uint8_t> data, Legend legend)
      : dims_(dims), spacing_(spacing), data_(std::move(data)), legend_(std::move(legend)) {
    if (data_.size() != dims_.voxels()) throw DomainError("LabelMap: payload size does not match dims");
  }

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] std::span<const std::uint8_t> data() const { return data_; }
  [[nodiscard]] std::span<std::uint8_t> data() { return data_; }
  [[nodiscard]] std::uint8_t operator[](std::size_t voxel) const { return data_[voxel]; }
  [[nodiscard]] std::uint8_t& operator[](std::size_t voxel) { return data_[voxel]; }
  [[nodiscard]] const Legend& legend() const { return legend_; }
  [[nodiscard]] Legend& legend() { return legend_; }

  [[nodiscard]] std::string name(std::uint8_t label) const {
    const auto it = legend_.find(label);
    return it == legend_.end() ? "label_" + std::to_string(label) : it->second;
  }

  [[nodiscard]] std::vector<std::size_t> voxels_with(std::uint8_t label) const {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i] == label) v.push_back(i);
    return v;
  }

  /// Every nonzero label must be named.
  void validate_legend() const {
    for (std::uint8_t l : data_)
      if (l != 0 && !legend_.contains(l)) throw FormatError("LabelMap: label " + std::to_string(l) + " missing from legend");
  }

 private:
  Dims3 dims_{};
  Spacing spacing_{kDefaultSpacing};
  std::vector<std::uint8_t> data_;
  Legend legend_;
};

/// Multi-channel parameter map [C, Z, Y, X].
class ParametricVolume {
 public:
  static std::vector<std::string> kinetic_channels() { return {"K1", "k2", "k3", "VB", "converged"}; }
  static std::vector<std::string> truth_channels() { return {"K1", "k2", "k3", "VB"}; }

  ParametricVolume() = default;
  ParametricVolume(Dims3 dims, std::vector<std::string> channels, Spacing spacing = kDefaultSpacing)
      : dims_(dims), spacing_(spacing), channels_(std::move(channels)), data_(channels_.size() * dims.voxels(), 0.0f) {}
  ParametricVolume(Dims3 dims, std::vector<std::string> channels, Spacing spacing, std::vector<float> data)
      : dims_(dims), spacing_(spacing), channels_(std::move(channels)), data_(std::move(data)) {
    if (data_.size() != channels_.size() * dims_.voxels())
      throw DomainError("ParametricVolume: payload size does not match dims and channel count");
  }

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] const std::vector<std::string>& channels() const { return channels_; }
  [[nodiscard]] std::size_t channel_count() const { return channels_.size(); }
  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] std::span<float> data() { return data_; }

  [[nodiscard]] float& at(std::size_t c, std::size_t voxel) { return data_[c * dims_.voxels() + voxel]; }
  [[nodiscard]] float at(std::size_t c, std::size_t voxel) const { return data_[c * dims_.voxels() + voxel]; }

  [[nodiscard]] std::size_t channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (channels_[i] == name) return i;
    throw DomainError("ParametricVolume: no channel named " + name);
  }

  /// First four channels as kinetic parameters.
  [[nodiscard]] KineticParams params(std::size_t voxel) const {
    if (channels_.size() < 4) throw DomainError("ParametricVolume: fewer than 4 channels");
    return {at(0, voxel), at(1, voxel), at(2, voxel), at(3, voxel)};
  }

  void set_params(std::size_t voxel, const KineticParams& p) {
    if (channels_.size() < 4) throw DomainError("ParametricVolume: fewer than 4 channels");
    at(0, voxel) = static_cast<float>(p.k1);
    at(1, voxel) = static_cast<float>(p.k2);
    at(2, voxel) = static_cast<float>(p.k3);
    at(3, voxel) = static_cast<float>(p.vb);
  }

 private:
  Dims3 dims_{};
  Spacing spacing_{kDefaultSpacing};
  std::vector<std::string> channels_;
  std::vector<float> data_;
};

}  // namespace pbpk

#pragma once

// On-disk formats.
//
// Volumes: a JSON sidecar (<name>.json) next to a raw little-endian payload
// (<name>.raw). The sidecar carries the magic string, a semantic version,
// dims, dtype, spacing and the kind-specific metadata (frame schedule,
// channel legend, label legend).
//
// Input functions: CSV with header frame_start_s,duration_s,activity_bq_ml.
// Rows with duration 0 are instantaneous samples.

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pbpk/fitter.hpp"
#include "pbpk/metrics.hpp"
#include "pbpk/phantom.hpp"
#include "pbpk/types.hpp"
#include "pbpk/volume.hpp"

namespace pbpk::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kVolumeMagic = "pbpk-volume";
inline constexpr int kFormatMajor = 1;
inline constexpr const char* kFormatVersion = "1.0.0";

enum class VolumeKind { Dynamic, Parametric, Labels };

inline const char* to_string(VolumeKind k) {
  switch (k) {
    case VolumeKind::Dynamic: return "dynamic";
    case VolumeKind::Parametric: return "parametric";
    case VolumeKind::Labels: return "labels";
  }
  return "?";
}

/// Sidecar path for a base path: "out/vol" and "out/vol.json" both map to "out/vol.json".
inline fs::path sidecar_path(const fs::path& p) {
  fs::path s = p;
  if (s.extension() != ".json") s += ".json";
  return s;
}

inline fs::path payload_path(const fs::path& sidecar) {
  fs::path r = sidecar;
  r.replace_extension(".raw");
  return r;
}

namespace detail {

template <typename T>
void write_payload(const fs::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    std::vector<unsigned char> buf(values.size_bytes());
    for (std::size_t i = 0; i < values.size(); ++i) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &values[i], sizeof(T));
      for (std::size_t k = 0; k < sizeof(T); ++k) buf[i * sizeof(T) + k] = b[sizeof(T) - 1 - k];
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

template <typename T>
std::vector<T> read_payload(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw FormatError("cannot stat payload " + path.string() + ": " + ec.message());
  const std::uintmax_t expected = static_cast<std::uintmax_t>(count) * sizeof(T);
  if (actual != expected)
    throw FormatError("payload " + path.string() + " has " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected) + " bytes");
  std::vector<T> values(count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read on " + path.string());
  if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
    for (auto& v : values) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      std::reverse(b, b + sizeof(T));
      std::memcpy(&v, b, sizeof(T));
    }
  }
  return values;
}

inline json header(VolumeKind kind, const char* dtype, const Dims3& d, const Spacing& sp, const fs::path& payload) {
  return json{{"format", kVolumeMagic},
              {"version", kFormatVersion},
              {"kind", to_string(kind)},
              {"dtype", dtype},
              {"byte_order", "little"},
              {"dims", {{"z", d.z}, {"y", d.y}, {"x", d.x}}},
              {"spacing_mm", {sp[0], sp[1], sp[2]}},
              {"payload", payload.filename().string()}};
}

inline void write_sidecar(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

inline json load_sidecar(const fs::path& path, VolumeKind expected) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sidecar " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kVolumeMagic) throw FormatError(path.string() + ": not a pbpk volume sidecar");
    const std::string version = j.at("version").get<std::string>();
    const int major = std::stoi(version.substr(0, version.find('.')));
    if (major != kFormatMajor)
      throw FormatError(path.string() + ": format version " + version + " is not compatible with " + kFormatVersion);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != to_string(expected))
      throw FormatError(path.string() + ": expected a " + std::string(to_string(expected)) + " volume, found " + kind);
    if (j.value("byte_order", "little") != "little") throw FormatError(path.string() + ": unsupported byte order");
  } catch (const json::exception& e) {
    throw FormatError("sidecar " + path.string() + " is missing a field: " + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("sidecar " + path.string() + " has an unparsable version");
  }
  return j;
}

inline Dims3 dims_of(const json& j) {
  const json& d = j.at("dims");
  return {d.at("z").get<std::size_t>(), d.at("y").get<std::size_t>(), d.at("x").get<std::size_t>()};
}

inline Spacing spacing_of(const json& j) {
  const auto v = j.at("spacing_mm").get<std::vector<double>>();
  if (v.size() != 3) throw FormatError("spacing_mm must have 3 entries");
  return {v[0], v[1], v[2]};
}

inline void expect_dtype(const json& j, const char* dtype) {
  if (j.at("dtype").get<std::string>() != dtype)
    throw FormatError("unexpected dtype " + j.at("dtype").get<std::string>() + ", expected " + dtype);
}

template <typename Fn>
auto guarded(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError("sidecar " + path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline void write_volume(const fs::path& path, const DynamicVolume& v) {
  const fs::path side = sidecar_path(path);
  const fs::path raw = payload_path(side);
  json j = detail::header(VolumeKind::Dynamic, "float32", v.dims(), v.spacing(), raw);
  j["dims"]["t"] = v.frames();
  json frames = json::array();
  for (const Frame& f : v.schedule().frames()) frames.push_back({{"start_s", f.start_s}, {"duration_s", f.duration_s}});
  j["frames"] = frames;
  detail::write_payload<float>(raw, v.data());
  detail::write_sidecar(side, j);
}

inline void write_volume(const fs::path& path, const ParametricVolume& v) {
  const fs::path side = sidecar_path(path);
  const fs::path raw = payload_path(side);
  json j = detail::header(VolumeKind::Parametric, "float32", v.dims(), v.spacing(), raw);
  j["dims"]["c"] = v.channel_count();
  j["channels"] = v.channels();
  detail::write_payload<float>(raw, v.data());
  detail::write_sidecar(side, j);
}

inline void write_volume(const fs::path& path, const LabelMap& v) {
  v.validate_legend();
  const fs::path side = sidecar_path(path);
  const fs::path raw = payload_path(side);
  json j = detail::header(VolumeKind::Labels, "uint8", v.dims(), v.spacing(), raw);
  json legend = json::object();
  for (const auto& [label, name] : v.legend()) legend[std::to_string(label)] = name;
  j["labels"] = legend;
  detail::write_payload<std::uint8_t>(raw, v.data());
  detail::write_sidecar(side, j);
}

inline DynamicVolume read_dynamic(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = detail::load_sidecar(side, VolumeKind::Dynamic);
  return detail::guarded(side, [&] {
    detail::expect_dtype(j, "float32");
    const Dims3 d = detail::dims_of(j);
    std::vector<Frame> frames;
    for (const auto& f : j.at("frames")) frames.push_back({f.at("start_s").get<double>(), f.at("duration_s").get<double>()});
    const std::size_t t = j.at("dims").at("t").get<std::size_t>();
    if (t != frames.size())
      throw FormatError(side.string() + ": dims.t = " + std::to_string(t) + " but " + std::to_string(frames.size()) +
                        " frames are listed");
    FrameSchedule schedule;
    try {
      schedule = FrameSchedule(std::move(frames));
    } catch (const DomainError& e) {
      throw FormatError(side.string() + ": invalid frame schedule: " + e.what());
    }
    auto data = detail::read_payload<float>(side.parent_path() / j.at("payload").get<std::string>(), d.voxels() * t);
    return DynamicVolume(d, std::move(schedule), detail::spacing_of(j), std::move(data));
  });
}

inline ParametricVolume read_parametric(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = detail::load_sidecar(side, VolumeKind::Parametric);
  return detail::guarded(side, [&] {
    detail::expect_dtype(j, "float32");
    const Dims3 d = detail::dims_of(j);
    auto channels = j.at("channels").get<std::vector<std::string>>();
    const std::size_t c = j.at("dims").at("c").get<std::size_t>();
    if (c != channels.size()) throw FormatError(side.string() + ": channel legend does not match dims.c");
    auto data = detail::read_payload<float>(side.parent_path() / j.at("payload").get<std::string>(), d.voxels() * c);
    return ParametricVolume(d, std::move(channels), detail::spacing_of(j), std::move(data));
  });
}

inline LabelMap read_labels(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = detail::load_sidecar(side, VolumeKind::Labels);
  return detail::guarded(side, [&] {
    detail::expect_dtype(j, "uint8");
    const Dims3 d = detail::dims_of(j);
    LabelMap::Legend legend;
    for (const auto& [k, v] : j.at("labels").items()) {
      const int id = std::stoi(k);
      if (id <= 0 || id > 255) throw FormatError(side.string() + ": label id out of range: " + k);
      legend[static_cast<std::uint8_t>(id)] = v.get<std::string>();
    }
    auto data = detail::read_payload<std::uint8_t>(side.parent_path() / j.at("payload").get<std::string>(), d.voxels());
    LabelMap m(d, detail::spacing_of(j), std::move(data), std::move(legend));
    m.validate_legend();
    return m;
  });
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError(where + ": not a number: '" + s + "'");
  }
  if (used != s.size()) throw FormatError(where + ": trailing characters in '" + s + "'");
  return v;
}

// Non-empty, non-comment lines.
inline std::vector<std::string> data_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace detail

inline constexpr const char* kIdifHeader = "frame_start_s,duration_s,activity_bq_ml";

inline InputFunction parse_idif(std::istream& in, const std::string& name = "idif") {
  const auto lines = detail::data_lines(in);
  if (lines.empty()) throw FormatError(name + ": empty input function file");
  if (detail::split_csv(lines.front()) != std::vector<std::string>{"frame_start_s", "duration_s", "activity_bq_ml"})
    throw FormatError(name + ": expected header '" + std::string(kIdifHeader) + "'");
  if (lines.size() < 2) throw FormatError(name + ": no samples after the header");
  std::vector<InputSample> samples;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    const std::string where = name + " row " + std::to_string(i);
    if (cells.size() != 3) throw FormatError(where + ": expected 3 columns");
    samples.push_back({detail::parse_double(cells[0], where), detail::parse_double(cells[1], where),
                       detail::parse_double(cells[2], where)});
  }
  try {
    return InputFunction(std::move(samples));
  } catch (const DomainError& e) {
    throw FormatError(name + ": " + e.what());
  }
}

inline InputFunction read_idif(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open input function " + path.string());
  return parse_idif(in, path.string());
}

inline void write_idif(const fs::path& path, const InputFunction& a) {
  auto out = detail::open_out(path);
  out << kIdifHeader << '\n';
  for (const auto& s : a.samples()) out << s.start_s << ',' << s.duration_s << ',' << s.value << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

inline void write_tac_csv(std::ostream& out, const Tac& tac, const FrameSchedule& s) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "frame,start_s,duration_s,mid_s,activity_bq_ml\n";
  for (std::size_t f = 0; f < tac.size(); ++f)
    out << f << ',' << s[f].start_s << ',' << s[f].duration_s << ',' << s[f].mid_s() << ',' << tac[f] << '\n';
}

// ---------------------------------------------------------------------------
// Reference parameter tables: organ,K1,K1_sd,k2,k2_sd,k3,k3_sd,VB,VB_sd

struct ReferenceRow {
  std::string organ;
  KineticParams mean{};
  KineticParams sd{};
};

inline std::vector<ReferenceRow> read_reference_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open reference table " + path.string());
  const auto lines = detail::data_lines(in);
  const std::vector<std::string> header{"organ", "K1", "K1_sd", "k2", "k2_sd", "k3", "k3_sd", "VB", "VB_sd"};
  if (lines.empty() || detail::split_csv(lines.front()) != header)
    throw FormatError(path.string() + ": expected header organ,K1,K1_sd,k2,k2_sd,k3,k3_sd,VB,VB_sd");
  std::vector<ReferenceRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = detail::split_csv(lines[i]);
    const std::string where = path.string() + " row " + std::to_string(i);
    if (c.size() != header.size()) throw FormatError(where + ": expected 9 columns");
    std::array<double, 8> v{};
    for (std::size_t k = 0; k < 8; ++k) v[k] = detail::parse_double(c[k + 1], where);
    rows.push_back({c[0], {v[0], v[2], v[4], v[6]}, {v[1], v[3], v[5], v[7]}});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Phantom configuration (JSON). Every key is optional; see README.

namespace detail {

inline KineticParams params_from_json(const json& j) {
  return {j.at("K1").get<double>(), j.at("k2").get<double>(), j.at("k3").get<double>(), j.at("VB").get<double>()};
}

inline NoiseKind noise_kind(const std::string& s) {
  if (s == "none") return NoiseKind::None;
  if (s == "gaussian") return NoiseKind::Gaussian;
  if (s == "gaussian-fraction") return NoiseKind::GaussianFraction;
  if (s == "scaled-poisson") return NoiseKind::ScaledPoisson;
  throw FormatError("unknown noise kind '" + s + "' (none | gaussian | gaussian-fraction | scaled-poisson)");
}

}  // namespace detail

struct SimulationConfig {
  PhantomSpec phantom = PhantomSpec::default_spec();
  FrameSchedule schedule = FrameSchedule::reference_62();
  double fine_step_s = 1.0;
};

inline SimulationConfig parse_simulation_config(const json& j, const std::string& name = "config") {
  SimulationConfig cfg;
  try {
    static const std::vector<std::string> known{"dims", "spacing_mm", "seed", "noise", "input", "schedule", "fine_step_s",
                                                "organs"};
    for (const auto& [k, v] : j.items())
      if (std::find(known.begin(), known.end(), k) == known.end()) throw FormatError(name + ": unknown key '" + k + "'");
    PhantomSpec& p = cfg.phantom;
    if (j.contains("dims")) p.dims = detail::dims_of(j);
    if (j.contains("spacing_mm")) p.spacing = detail::spacing_of(j);
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      p.noise.kind = detail::noise_kind(n.value("kind", "gaussian"));
      p.noise.level = n.value("level", 0.0);
    }
    if (j.contains("input")) {
      const json& in = j.at("input");
      InputFunctionModel& m = p.input;
      m.peak_slope = in.value("peak_slope", m.peak_slope);
      m.amp2 = in.value("amp2", m.amp2);
      m.amp3 = in.value("amp3", m.amp3);
      m.rate1 = in.value("rate1", m.rate1);
      m.rate2 = in.value("rate2", m.rate2);
      m.rate3 = in.value("rate3", m.rate3);
      m.delay_s = in.value("delay_s", m.delay_s);
    }
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      if (s.is_string()) {
        if (s.get<std::string>() != "reference_62") throw FormatError(name + ": unknown schedule " + s.get<std::string>());
      } else {
        const auto d = s.at("durations_s").get<std::vector<double>>();
        cfg.schedule = FrameSchedule::from_durations(d);
      }
    }
    cfg.fine_step_s = j.value("fine_step_s", cfg.fine_step_s);
    if (j.contains("organs") && !(j.at("organs").is_string() && j.at("organs").get<std::string>() == "default")) {
      p.organs.clear();
      for (const auto& o : j.at("organs")) {
        OrganRegion r;
        r.name = o.at("name").get<std::string>();
        const std::string shape = o.value("shape", "ellipsoid");
        if (shape == "box") r.shape = RegionShape::Box;
        else if (shape == "ellipsoid") r.shape = RegionShape::Ellipsoid;
        else throw FormatError(name + ": unknown shape '" + shape + "'");
        const auto c = o.at("center").get<std::vector<double>>();
        const auto h = o.at("half_extent").get<std::vector<double>>();
        if (c.size() != 3 || h.size() != 3) throw FormatError(name + ": center/half_extent need 3 entries (z, y, x)");
        r.center = {c[0], c[1], c[2]};
        r.half_extent = {h[0], h[1], h[2]};
        if (o.contains("params")) {
          r.params = detail::params_from_json(o.at("params"));
          r.label = o.at("label").get<std::uint8_t>();
        } else {
          const OrganPreset& pre = organ_preset(o.value("preset", r.name));
          r.params = pre.params;
          r.label = o.value("label", pre.label);
        }
        p.organs.push_back(r);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(name + ": " + e.what());
  } catch (const DomainError& e) {
    throw FormatError(name + ": " + e.what());
  }
  return cfg;
}

inline SimulationConfig read_simulation_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw FormatError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_simulation_config(j, path.string());
}

// ---------------------------------------------------------------------------
// Reports

inline void write_organ_report_csv(const fs::path& path, const OrganReport& rep) {
  auto out = detail::open_out(path);
  out << "label,organ,voxels";
  for (const auto& c : rep.channel_names) out << ',' << c << "_mean," << c << "_std";
  out << ",mse,mae,cs\n";
  for (const auto& o : rep.organs) {
    out << int(o.label) << ',' << o.name << ',' << o.count;
    for (const auto& c : o.channels) out << ',' << c.mean << ',' << c.std;
    if (o.tac) out << ',' << o.tac->mse << ',' << o.tac->mae << ',' << o.tac->cosine_similarity;
    else out << ",,,";
    out << '\n';
  }
}

inline void write_slice_cs_csv(const fs::path& path, const std::vector<SliceCs>& profile) {
  auto out = detail::open_out(path);
  out << "z,voxels,cs\n";
  for (const auto& s : profile) out << s.z << ',' << s.voxels << ',' << s.cosine_similarity << '\n';
}

inline void write_param_errors_csv(const fs::path& path, const std::vector<ParamError>& errors) {
  auto out = detail::open_out(path);
  out << "label,organ,voxels";
  for (const auto& n : kParamNames) out << ',' << n << "_truth," << n << "_mean," << n << "_rel_bias," << n << "_mae";
  out << '\n';
  for (const auto& e : errors) {
    out << int(e.label) << ',' << e.name << ',' << e.count;
    for (std::size_t c = 0; c < 4; ++c)
      out << ',' << e.truth[c] << ',' << e.estimate[c] << ',' << e.relative_bias[c] << ',' << e.mean_abs_error[c];
    out << '\n';
  }
}

}  // namespace pbpk::io

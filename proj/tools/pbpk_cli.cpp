// pbpk: command-line front end for simulation, fitting and evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "pbpk/pbpk.hpp"

namespace fs = std::filesystem;
using namespace pbpk;

namespace {

constexpr const char* kDatasetManifest = "dataset.json";

struct Dataset {
  fs::path dir;
  DynamicVolume volume;
  LabelMap labels;
  InputFunction input;
  double fine_step_s = 1.0;
  std::optional<ParametricVolume> truth;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw FormatError(what + " not found: " + p.string());
}

Dataset load_dataset(const fs::path& dir, bool need_truth = false) {
  if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
  Dataset d{dir, io::read_dynamic(dir / "dynamic"), io::read_labels(dir / "labels"), io::read_idif(dir / "idif.csv"), 1.0,
            std::nullopt};
  if (d.labels.dims() != d.volume.dims()) throw FormatError(dir.string() + ": labels and dynamic volume differ in size");
  const fs::path manifest = dir / kDatasetManifest;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    d.fine_step_s = io::json::parse(in).value("fine_step_s", 1.0);
  }
  if (fs::exists(io::sidecar_path(dir / "truth"))) d.truth = io::read_parametric(dir / "truth");
  else if (need_truth) throw FormatError(dir.string() + ": ground truth volume missing");
  return d;
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "none") return NoiseKind::None;
  if (s == "gaussian") return NoiseKind::Gaussian;
  if (s == "gaussian-fraction") return NoiseKind::GaussianFraction;
  if (s == "scaled-poisson") return NoiseKind::ScaledPoisson;
  throw FormatError("unknown noise kind '" + s + "'");
}

const char* noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::None: return "none";
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::GaussianFraction: return "gaussian-fraction";
    case NoiseKind::ScaledPoisson: return "scaled-poisson";
  }
  return "?";
}

KineticParams parse_params(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw FormatError("--params: not a number: '" + cell + "'");
    }
  }
  if (v.size() != 4) throw FormatError("--params expects K1,k2,k3,VB");
  return {v[0], v[1], v[2], v[3]};
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  fs::path out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string noise;
  std::optional<double> noise_level;
  std::optional<double> fine_step_s;
  unsigned threads = 1;
};

int run_simulate(const SimulateArgs& a) {
  io::SimulationConfig cfg = a.config.empty() ? io::SimulationConfig{} : io::read_simulation_config(a.config);
  if (a.seed) cfg.phantom.seed = *a.seed;
  if (!a.noise.empty()) cfg.phantom.noise.kind = parse_noise_kind(a.noise);
  if (a.noise_level) cfg.phantom.noise.level = *a.noise_level;
  if (a.fine_step_s) cfg.fine_step_s = *a.fine_step_s;

  const auto t0 = std::chrono::steady_clock::now();
  const InputFunction input = synth_input(cfg.phantom.input, cfg.schedule, cfg.fine_step_s);
  const Phantom ph = build_phantom(cfg.phantom, input, cfg.schedule, {cfg.fine_step_s}, a.threads);

  fs::create_directories(a.out);
  io::write_volume(a.out / "dynamic", ph.volume);
  io::write_volume(a.out / "labels", ph.labels);
  io::write_volume(a.out / "truth", ph.truth);
  io::write_idif(a.out / "idif.csv", input);
  const io::json manifest{{"format", "pbpk-dataset"},
                          {"version", io::kFormatVersion},
                          {"seed", cfg.phantom.seed},
                          {"noise", {{"kind", noise_name(cfg.phantom.noise.kind)}, {"level", cfg.phantom.noise.level}}},
                          {"fine_step_s", cfg.fine_step_s},
                          {"frames", cfg.schedule.size()}};
  std::ofstream(a.out / kDatasetManifest) << manifest.dump(2) << '\n';

  const Dims3 d = cfg.phantom.dims;
  std::size_t labeled = 0;
  for (std::size_t v = 0; v < d.voxels(); ++v) labeled += ph.labels[v] != 0;
  std::cout << "simulated " << d.z << "x" << d.y << "x" << d.x << " voxels x " << cfg.schedule.size() << " frames ("
            << labeled << " labeled, noise " << noise_name(cfg.phantom.noise.kind) << " " << cfg.phantom.noise.level
            << ", seed " << cfg.phantom.seed << ") -> " << a.out.string() << " in " << std::fixed << std::setprecision(2)
            << seconds_since(t0) << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TacgenArgs {
  std::string preset;
  std::string params;
  std::string idif;
  std::string out;
  std::string noise = "gaussian";
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  double fine_step_s = 1.0;
  bool values_only = false;
};

int run_tacgen(const TacgenArgs& a) {
  if (a.preset.empty() == a.params.empty()) throw FormatError("tacgen needs exactly one of --preset or --params");
  const KineticParams p = a.preset.empty() ? parse_params(a.params) : organ_preset(lower(a.preset)).params;
  const FrameSchedule s = FrameSchedule::reference_62();
  const InputFunction input = a.idif.empty() ? synth_input(InputFunctionModel{}, s, a.fine_step_s) : io::read_idif(a.idif);
  Tac tac = model_tac(p, input, s, {a.fine_step_s});
  if (a.noise_level > 0.0) tac = add_noise({parse_noise_kind(a.noise), a.noise_level}, tac, s, a.seed, 0);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw FormatError("cannot open " + a.out + " for writing");
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  if (a.values_only) {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (double v : tac) out << v << '\n';
  } else {
    io::write_tac_csv(out, tac, s);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  fs::path dataset;
  std::string out;
  std::string bounds = "open";
  std::string jacobian = "analytic";
  double fd_step = 1e-3;
  std::string voi;
  std::optional<std::size_t> slice;
  bool all_voxels = false;
  std::optional<double> fine_step_s;
  unsigned threads = 1;
};

FitConfig make_fit_config(const FitArgs& a, double fine_step_s) {
  FitConfig cfg;
  if (a.bounds == "clamp") cfg = FitConfig::clamp_box();
  else if (a.bounds != "open") throw FormatError("--bounds must be 'open' or 'clamp'");
  if (a.jacobian == "fd") cfg.jacobian = JacobianMode::FiniteDifference;
  else if (a.jacobian != "analytic") throw FormatError("--jacobian must be 'analytic' or 'fd'");
  cfg.fd_step = a.fd_step;
  cfg.model.fine_step_s = fine_step_s;
  return cfg;
}

int run_fit(const FitArgs& a) {
  const Dataset d = load_dataset(a.dataset);
  const FitConfig cfg = make_fit_config(a, a.fine_step_s.value_or(d.fine_step_s));
  const auto t0 = std::chrono::steady_clock::now();

  if (!a.voi.empty()) {
    std::vector<std::uint8_t> labels;
    if (a.voi == "all") {
      for (const auto& [label, name] : d.labels.legend())
        if (!d.labels.voxels_with(label).empty()) labels.push_back(label);
    } else {
      int id = 0;
      try {
        id = std::stoi(a.voi);
      } catch (const std::exception&) {
        throw FormatError("--voi expects a label id or 'all'");
      }
      if (id <= 0 || id > 255) throw FormatError("--voi label out of range: " + a.voi);
      labels.push_back(static_cast<std::uint8_t>(id));
    }
    const fs::path out = a.out.empty() ? d.dir / "voi_fit.csv" : fs::path(a.out);
    std::ofstream csv(out);
    if (!csv) throw FormatError("cannot open " + out.string() + " for writing");
    csv << std::setprecision(std::numeric_limits<double>::max_digits10);
    csv << "label,organ,voxels,K1,k2,k3,VB,Ki,mse,converged,termination,iterations\n";
    std::cout << "label  organ      voxels      K1      k2      k3      VB  converged\n";
    const ForwardModel model(d.input, d.volume.schedule(), cfg.model);
    for (std::uint8_t l : labels) {
      const std::size_t n = d.labels.voxels_with(l).size();
      const FitResult r = fit_tac(voi_mean_tac(d.volume, d.labels, l), model, cfg);
      const double ki = r.params.rate_sum() > 0.0 ? macro_ki(r.params) : 0.0;
      csv << int(l) << ',' << d.labels.name(l) << ',' << n << ',' << r.params.k1 << ',' << r.params.k2 << ','
          << r.params.k3 << ',' << r.params.vb << ',' << ki << ',' << r.final_cost << ',' << (r.converged ? 1 : 0) << ','
          << to_string(r.termination) << ',' << r.iterations << '\n';
      std::printf("%5d  %-9s %7zu  %6.3f  %6.3f  %6.3f  %6.3f  %s\n", int(l), d.labels.name(l).c_str(), n, r.params.k1,
                  r.params.k2, r.params.k3, r.params.vb, r.converged ? "yes" : "no");
    }
    std::cout << "wrote " << out.string() << '\n';
    return 0;
  }

  VoxelwiseOptions opt;
  opt.threads = a.threads;
  opt.slice = a.slice;
  const LabelMap* mask = a.all_voxels ? nullptr : &d.labels;
  const ParametricVolume pv = fit_voxelwise(d.volume, d.input, cfg, mask, opt);
  const double elapsed = seconds_since(t0);
  const fs::path out = a.out.empty() ? d.dir / "fit_params" : fs::path(a.out);
  io::write_volume(out, pv);

  std::size_t fitted = 0, converged = 0;
  const Dims3 dims = d.volume.dims();
  const std::size_t plane = dims.y * dims.x;
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (a.slice && v / plane != *a.slice) continue;
    if (mask != nullptr && (*mask)[v] == 0) continue;
    ++fitted;
    converged += pv.at(4, v) != 0.0f;
  }
  std::cout << "fitted " << fitted << " voxels (" << converged << " converged) in " << std::fixed << std::setprecision(2)
            << elapsed << " s -> " << io::sidecar_path(out).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct PatlakArgs {
  fs::path dataset;
  std::string out;
  double t_star_s = kDefaultPatlakTStarS;
  std::optional<double> fine_step_s;
};

int run_patlak(const PatlakArgs& a) {
  const Dataset d = load_dataset(a.dataset);
  const ForwardModel model(d.input, d.volume.schedule(), {a.fine_step_s.value_or(d.fine_step_s)});
  ParametricVolume pv(d.volume.dims(), {"Ki", "intercept", "r_squared"}, d.volume.spacing());
  std::map<std::uint8_t, std::pair<double, std::size_t>> ki_sum;
  for (std::size_t v = 0; v < d.volume.dims().voxels(); ++v) {
    if (d.labels[v] == 0) continue;
    const PatlakResult r = patlak(d.volume.tac(v), model, a.t_star_s);
    pv.at(0, v) = static_cast<float>(r.ki_slope);
    pv.at(1, v) = static_cast<float>(r.intercept);
    pv.at(2, v) = static_cast<float>(r.r_squared);
    auto& [sum, n] = ki_sum[d.labels[v]];
    sum += r.ki_slope;
    ++n;
  }
  const fs::path out = a.out.empty() ? d.dir / "patlak" : fs::path(a.out);
  io::write_volume(out, pv);
  std::cout << "organ      voxels   mean Ki [ml/cm^3/min]\n";
  for (const auto& [label, acc] : ki_sum)
    std::printf("%-9s %7zu   %.5f\n", d.labels.name(label).c_str(), acc.second, acc.first / static_cast<double>(acc.second));
  std::cout << "wrote " << io::sidecar_path(out).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path dataset;
  std::string params;
  std::string out;
  std::string reference;
  double agreement_sd = 1.0;
  std::string slice_mode = "voxel-mean";
  std::optional<double> fine_step_s;
  unsigned threads = 1;
};

int run_eval(const EvalArgs& a) {
  const Dataset d = load_dataset(a.dataset);
  const fs::path params_path = a.params.empty() ? d.dir / "fit_params" : fs::path(a.params);
  require_file(io::sidecar_path(params_path), "parameter map");
  const ParametricVolume pv = io::read_parametric(params_path);
  if (pv.dims() != d.volume.dims()) throw FormatError("parameter map and dataset differ in size");
  for (std::size_t c = 0; c < kParamNames.size(); ++c)
    if (pv.channel_count() <= c || pv.channels()[c] != kParamNames[c])
      throw FormatError("parameter map must start with channels K1, k2, k3, VB");
  SliceCsMode mode = SliceCsMode::VoxelMean;
  if (a.slice_mode == "pooled") mode = SliceCsMode::Pooled;
  else if (a.slice_mode != "voxel-mean") throw FormatError("--slice-cs must be 'voxel-mean' or 'pooled'");

  const fs::path out = a.out.empty() ? d.dir : fs::path(a.out);
  fs::create_directories(out);
  const ForwardModel model(d.input, d.volume.schedule(), {a.fine_step_s.value_or(d.fine_step_s)});

  OrganReport rep = organ_aggregate(pv, d.labels);
  add_tac_metrics(rep, d.volume, pv, d.labels, model);
  io::write_organ_report_csv(out / "organ_report.csv", rep);
  const auto profile = per_slice_cs(d.volume, pv, model, &d.labels, mode, a.threads, true);
  io::write_slice_cs_csv(out / "slice_cs.csv", profile);

  std::cout << "organ      voxels  K1 mean+-std      k2 mean+-std      k3 mean+-std      VB mean+-std       CS\n";
  for (const auto& o : rep.organs) {
    std::printf("%-9s %7zu", o.name.c_str(), o.count);
    for (std::size_t c = 0; c < 4; ++c) std::printf("  %6.3f+-%-6.3f ", o.channels[c].mean, o.channels[c].std);
    std::printf("  %.4f\n", o.tac ? o.tac->cosine_similarity : 0.0);
  }
  if (!profile.empty()) {
    const auto [lo, hi] = std::minmax_element(profile.begin(), profile.end(), [](const SliceCs& x, const SliceCs& y) {
      return x.cosine_similarity < y.cosine_similarity;
    });
    std::printf("slice CS: min %.4f (z=%zu), max %.4f (z=%zu)\n", lo->cosine_similarity, lo->z, hi->cosine_similarity,
                hi->z);
  }

  if (d.truth) {
    const auto errors = parameter_errors(pv, *d.truth, d.labels);
    io::write_param_errors_csv(out / "param_errors.csv", errors);
    std::cout << "\norgan      K1 truth   K1 mean   rel. bias\n";
    for (const auto& e : errors)
      std::printf("%-9s  %8.4f  %8.4f  %+8.2f%%\n", e.name.c_str(), e.truth[0], e.estimate[0], 100.0 * e.relative_bias[0]);
  }

  if (!a.reference.empty()) {
    const auto rows = io::read_reference_table(a.reference);
    std::ofstream csv(out / "reference_agreement.csv");
    csv << std::setprecision(std::numeric_limits<double>::max_digits10);
    csv << "organ,parameter,estimate,reference_mean,reference_sd,z,within\n";
    std::size_t within = 0, total = 0;
    for (const auto& o : rep.organs) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const io::ReferenceRow& r) { return lower(r.organ) == lower(o.name); });
      if (it == rows.end()) continue;
      const auto ref = it->mean.to_array();
      const auto sd = it->sd.to_array();
      for (std::size_t c = 0; c < 4; ++c) {
        const double z = sd[c] > 0.0 ? (o.channels[c].mean - ref[c]) / sd[c] : 0.0;
        const bool ok = std::abs(o.channels[c].mean - ref[c]) <= a.agreement_sd * sd[c];
        csv << o.name << ',' << kParamNames[c] << ',' << o.channels[c].mean << ',' << ref[c] << ',' << sd[c] << ',' << z
            << ',' << (ok ? 1 : 0) << '\n';
        within += ok;
        ++total;
      }
    }
    std::cout << "\nreference agreement (within " << a.agreement_sd << " sd): " << within << "/" << total << '\n';
  }
  std::cout << "reports written to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct FixturesArgs {
  fs::path out;
  std::size_t count = 50;
  std::uint64_t seed = 0;
  double fine_step_s = 1.0;
};

// Shared test vectors for independent implementations of the forward model.
int run_fixtures(const FixturesArgs& a) {
  const FrameSchedule s = FrameSchedule::reference_62();
  const InputFunction input = synth_input(InputFunctionModel{}, s, a.fine_step_s);
  const ForwardModel model(input, s, {a.fine_step_s});
  std::vector<std::pair<std::string, KineticParams>> cases;
  for (const auto& p : organ_presets()) cases.emplace_back(p.name, p.params);
  std::mt19937_64 rng(a.seed);
  const ParamBounds box = ParamBounds::clamp_box();
  for (std::size_t k = 0; k < a.count; ++k) {
    auto u = [&rng](const Interval& i) { return std::uniform_real_distribution<double>(i.lo, i.hi)(rng); };
    cases.emplace_back("random_" + std::to_string(k),
                       KineticParams{u(box.range[0]), u(box.range[1]), u(box.range[2]), u(box.range[3])});
  }

  fs::create_directories(a.out);
  io::write_idif(a.out / "idif.csv", input);
  {
    std::ofstream f(a.out / "schedule.csv");
    f << "frame,start_s,duration_s\n";
    for (std::size_t i = 0; i < s.size(); ++i) f << i << ',' << s[i].start_s << ',' << s[i].duration_s << '\n';
  }
  std::ofstream params(a.out / "params.csv"), tacs(a.out / "tacs.csv");
  params << std::setprecision(std::numeric_limits<double>::max_digits10);
  tacs << std::setprecision(std::numeric_limits<double>::max_digits10);
  params << "case,K1,k2,k3,VB\n";
  tacs << "case,frame,activity_bq_ml\n";
  for (const auto& [name, p] : cases) {
    params << name << ',' << p.k1 << ',' << p.k2 << ',' << p.k3 << ',' << p.vb << '\n';
    const Tac tac = model(p);
    for (std::size_t f = 0; f < tac.size(); ++f) tacs << name << ',' << f << ',' << tac[f] << '\n';
  }
  {
    const io::json meta{{"format", "pbpk-fixtures"},
                        {"version", io::kFormatVersion},
                        {"fine_step_s", a.fine_step_s},
                        {"seed", a.seed},
                        {"cases", cases.size()},
                        {"input", "piecewise-linear between idif.csv samples, 0 before the first"},
                        {"units", {{"time", "s"}, {"rates", "1/min"}, {"activity", "Bq/ml"}}}};
    std::ofstream(a.out / "fixtures.json") << meta.dump(2) << '\n';
  }
  std::cout << "wrote " << cases.size() << " forward-model cases to " << a.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinetic modeling toolkit for dynamic PET: phantoms, curve fitting, Patlak, evaluation."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(io::kFormatVersion));

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic phantom dataset");
  simulate->add_option("-o,--out", sim.out, "Output dataset directory")->required();
  simulate->add_option("-c,--config", sim.config, "Phantom configuration (JSON)")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Noise seed (overrides the config)");
  simulate->add_option("--noise", sim.noise, "none | gaussian | gaussian-fraction | scaled-poisson");
  simulate->add_option("--noise-level", sim.noise_level, "Relative noise level")->check(CLI::NonNegativeNumber);
  simulate->add_option("--fine-step-s", sim.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);
  simulate->add_option("-j,--threads", sim.threads, "Worker threads (0 = all cores)");

  TacgenArgs tg;
  auto* tacgen = app.add_subcommand("tacgen", "Print the model TAC on the 62-frame schedule");
  auto* preset_opt = tacgen->add_option("--preset", tg.preset, "Organ preset (liver, lungs, kidneys, ...)");
  auto* params_opt = tacgen->add_option("--params", tg.params, "K1,k2,k3,VB");
  preset_opt->excludes(params_opt);
  tacgen->add_option("--idif", tg.idif, "Input function CSV (default: synthetic input)")->check(CLI::ExistingFile);
  tacgen->add_option("-o,--out", tg.out, "Write to file instead of stdout");
  tacgen->add_option("--noise", tg.noise, "Noise kind for --noise-level");
  tacgen->add_option("--noise-level", tg.noise_level, "Relative noise level")->check(CLI::NonNegativeNumber);
  tacgen->add_option("--seed", tg.seed, "Noise seed");
  tacgen->add_option("--fine-step-s", tg.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);
  tacgen->add_flag("--values-only", tg.values_only, "One value per line, no header");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Voxel-wise or VoI curve fit of a dataset");
  fit->add_option("dataset", fa.dataset, "Dataset directory")->required();
  fit->add_option("-o,--out", fa.out, "Output (parameter map, or CSV with --voi)");
  fit->add_option("--bounds", fa.bounds, "open: [0, inf) | clamp: network output box")
      ->check(CLI::IsMember({"open", "clamp"}));
  fit->add_option("--jacobian", fa.jacobian, "analytic | fd")->check(CLI::IsMember({"analytic", "fd"}));
  fit->add_option("--fd-step", fa.fd_step, "Relative finite-difference step")->check(CLI::PositiveNumber);
  fit->add_option("--voi", fa.voi, "Fit the mean TAC of a label (id or 'all')");
  fit->add_option("--slice", fa.slice, "Fit only this axial slice");
  fit->add_flag("--all-voxels", fa.all_voxels, "Ignore the label map and fit every voxel");
  fit->add_option("--fine-step-s", fa.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);
  fit->add_option("-j,--threads", fa.threads, "Worker threads (0 = all cores)");

  PatlakArgs pa;
  auto* pat = app.add_subcommand("patlak", "Patlak Ki map of the labeled voxels");
  pat->add_option("dataset", pa.dataset, "Dataset directory")->required();
  pat->add_option("-o,--out", pa.out, "Output parameter map");
  pat->add_option("--t-star-s", pa.t_star_s, "Start of the linear regime [s]")->check(CLI::NonNegativeNumber);
  pat->add_option("--fine-step-s", pa.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Organ, slice and ground-truth reports for a parameter map");
  ev->add_option("dataset", ea.dataset, "Dataset directory")->required();
  ev->add_option("-p,--params", ea.params, "Parameter map (default: <dataset>/fit_params)");
  ev->add_option("-o,--out", ea.out, "Report directory (default: dataset)");
  ev->add_option("--reference", ea.reference, "Organ reference table CSV")->check(CLI::ExistingFile);
  ev->add_option("--agreement-sd", ea.agreement_sd, "Agreement threshold in reference sd units")
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--slice-cs", ea.slice_mode, "voxel-mean | pooled")->check(CLI::IsMember({"voxel-mean", "pooled"}));
  ev->add_option("--fine-step-s", ea.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);
  ev->add_option("-j,--threads", ea.threads, "Worker threads (0 = all cores)");

  FixturesArgs fx;
  auto* fixtures = app.add_subcommand("fixtures", "Export forward-model test vectors as CSV");
  fixtures->add_option("-o,--out", fx.out, "Output directory")->required();
  fixtures->add_option("--count", fx.count, "Random cases in addition to the organ presets");
  fixtures->add_option("--seed", fx.seed, "Seed for the random cases");
  fixtures->add_option("--fine-step-s", fx.fine_step_s, "Convolution grid step [s]")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*tacgen) return run_tacgen(tg);
    if (*fit) return run_fit(fa);
    if (*pat) return run_patlak(pa);
    if (*ev) return run_eval(ea);
    if (*fixtures) return run_fixtures(fx);
  } catch (const std::exception& e) {
    std::cerr << "pbpk: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

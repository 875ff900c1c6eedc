#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "pbpk/io.hpp"
#include "test_support.hpp"

namespace pbpk {
namespace {

namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("pbpk_io_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

  static void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
  }

  fs::path dir_;
};

template <typename T>
bool same_bytes(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

TEST_F(IoTest, DynamicVolumeRoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const Dims3 d{dim(rng), dim(rng), dim(rng)};
    std::vector<double> durations(dim(rng));
    for (double& x : durations) x = static_cast<double>(dim(rng)) * 5.0;
    DynamicVolume vol(d, FrameSchedule::from_durations(durations), {1.5, 2.0, 2.5});
    // Arbitrary bit patterns, including negative zero, subnormals and NaN payloads.
    std::uniform_int_distribution<std::uint32_t> bits;
    for (float& v : vol.data()) {
      const std::uint32_t b = bits(rng);
      std::memcpy(&v, &b, sizeof b);
    }
    io::write_volume(path("dyn"), vol);
    const DynamicVolume back = io::read_dynamic(path("dyn"));
    EXPECT_EQ(back.dims(), vol.dims());
    EXPECT_EQ(back.schedule(), vol.schedule());
    EXPECT_EQ(back.spacing(), vol.spacing());
    EXPECT_TRUE(same_bytes<float>(back.data(), vol.data()));
  }
}

TEST_F(IoTest, ParametricAndLabelRoundTrips) {
  std::mt19937_64 rng(12);
  ParametricVolume pv({3, 4, 5}, ParametricVolume::kinetic_channels());
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  for (float& v : pv.data()) v = u(rng);
  io::write_volume(path("params.json"), pv);
  const ParametricVolume pb = io::read_parametric(path("params.json"));
  EXPECT_EQ(pb.channels(), pv.channels());
  EXPECT_TRUE(same_bytes<float>(pb.data(), pv.data()));

  LabelMap lm({3, 4, 5});
  std::uniform_int_distribution<int> lab(0, 7);
  for (std::size_t v = 0; v < lm.dims().voxels(); ++v) lm[v] = static_cast<std::uint8_t>(lab(rng));
  for (const auto& p : organ_presets()) lm.legend()[p.label] = p.name;
  io::write_volume(path("labels"), lm);
  const LabelMap lb = io::read_labels(path("labels"));
  EXPECT_EQ(lb.legend(), lm.legend());
  EXPECT_TRUE(same_bytes<std::uint8_t>(lb.data(), lm.data()));
}

TEST_F(IoTest, PayloadIsRawLittleEndian) {
  DynamicVolume vol({1, 1, 2}, FrameSchedule::from_durations(std::vector<double>{10.0}));
  vol.at(0, 0) = 1.0f;
  vol.at(0, 1) = -2.5f;
  io::write_volume(path("v"), vol);
  std::ifstream in(path("v.raw"), std::ios::binary);
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  // 1.0f = 0x3f800000, -2.5f = 0xc0200000
  EXPECT_EQ(b, (std::array<unsigned char, 8>{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0}));
  std::ifstream side(path("v.json"));
  const auto j = io::json::parse(side);
  EXPECT_EQ(j.at("format"), "pbpk-volume");
  EXPECT_EQ(j.at("version"), "1.0.0");
  EXPECT_EQ(j.at("byte_order"), "little");
}

TEST_F(IoTest, HandWrittenSidecarWithReferenceSchedule) {
  io::json frames = io::json::array();
  double t = 0.0;
  const std::vector<std::pair<int, double>> blocks{{2, 10}, {30, 2}, {4, 10}, {8, 30}, {4, 60}, {5, 120}, {9, 300}};
  for (const auto& [count, dur] : blocks)
    for (int i = 0; i < count; ++i) {
      frames.push_back({{"start_s", t}, {"duration_s", dur}});
      t += dur;
    }
  const io::json side{{"format", "pbpk-volume"}, {"version", "1.2.0"}, {"kind", "dynamic"}, {"dtype", "float32"},
                      {"byte_order", "little"}, {"dims", {{"t", 62}, {"z", 1}, {"y", 1}, {"x", 1}}},
                      {"spacing_mm", {2.5, 2.5, 2.5}}, {"frames", frames}, {"payload", "hand.raw"}};
  write_text(path("hand.json"), side.dump());
  write_text(path("hand.raw"), std::string(62 * 4, '\0'));
  const DynamicVolume v = io::read_dynamic(path("hand.json"));
  EXPECT_EQ(v.frames(), 62u);
  EXPECT_EQ(v.schedule().end_time_s(), 3900.0);
  EXPECT_EQ(v.schedule(), FrameSchedule::reference_62());
}

TEST_F(IoTest, TruncatedPayloadNamesByteCounts) {
  DynamicVolume vol({2, 2, 2}, FrameSchedule::from_durations(std::vector<double>{10.0, 10.0}));
  io::write_volume(path("v"), vol);
  fs::resize_file(path("v.raw"), 60);
  try {
    (void)io::read_dynamic(path("v"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("60 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("64 bytes"), std::string::npos) << msg;
  }
}

TEST_F(IoTest, SidecarInconsistencies) {
  DynamicVolume vol({1, 1, 1}, FrameSchedule::from_durations(std::vector<double>{10.0, 10.0}));
  io::write_volume(path("v"), vol);
  std::ifstream in(path("v.json"));
  const io::json good = io::json::parse(in);
  in.close();

  auto expect_error = [&](io::json j) {
    write_text(path("v.json"), j.dump());
    EXPECT_THROW((void)io::read_dynamic(path("v")), FormatError) << j.dump();
  };
  io::json j = good;
  j["version"] = "2.0.0";
  expect_error(j);
  j = good;
  j["format"] = "nifti";
  expect_error(j);
  j = good;
  j["kind"] = "labels";
  expect_error(j);
  j = good;
  j["dims"]["t"] = 3;
  expect_error(j);
  j = good;
  j["frames"][1]["start_s"] = 12.0;  // gap
  expect_error(j);
  j = good;
  j["dtype"] = "float64";
  expect_error(j);
  j = good;
  j.erase("spacing_mm");
  expect_error(j);
  EXPECT_THROW((void)io::read_parametric(path("v")), FormatError);
  EXPECT_THROW((void)io::read_dynamic(path("missing")), FormatError);
}

TEST_F(IoTest, IdifRoundTripAndValidation) {
  const FrameSchedule& s = testing::reference_schedule();
  std::vector<InputSample> rows;
  for (const Frame& f : s.frames()) rows.push_back({f.start_s, f.duration_s, 1234.5});
  const InputFunction a = InputFunction::from_frames(s, std::vector<double>(s.size(), 1234.5));
  EXPECT_EQ(a.size(), 62u);
  io::write_idif(path("idif.csv"), a);
  const InputFunction b = io::read_idif(path("idif.csv"));
  ASSERT_EQ(b.size(), 62u);
  for (std::size_t i = 0; i < 62; ++i) {
    EXPECT_EQ(b.samples()[i].start_s, a.samples()[i].start_s);
    EXPECT_EQ(b.samples()[i].duration_s, a.samples()[i].duration_s);
    EXPECT_EQ(b.samples()[i].value, 1234.5);
  }
  EXPECT_EQ(b.coverage_end_s(), 3900.0);

  // Full-precision values survive.
  const InputFunction& fine = testing::default_input();
  io::write_idif(path("fine.csv"), fine);
  EXPECT_EQ(io::read_idif(path("fine.csv")).values(), fine.values());
}

TEST_F(IoTest, IdifErrors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return io::parse_idif(in);
  };
  EXPECT_THROW(parse(""), FormatError);
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n"), FormatError);
  EXPECT_THROW(parse("start,dur,act\n0,10,1\n"), FormatError);
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n0,10,1\n5,10,2\n"), FormatError);  // overlapping
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n10,10,1\n0,10,2\n"), FormatError);  // non-monotone
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n0,10,-1\n"), FormatError);
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n0,10,abc\n"), FormatError);
  EXPECT_THROW(parse("frame_start_s,duration_s,activity_bq_ml\n0,10\n"), FormatError);
  const InputFunction ok = parse("# comment\nframe_start_s,duration_s,activity_bq_ml\n0,0,0\n30,0,100\n60,0,50\n");
  EXPECT_EQ(ok.at(45.0), 75.0);
  EXPECT_THROW((void)io::read_idif(path("missing.csv")), FormatError);
}

TEST_F(IoTest, SimulationConfig) {
  const io::json j = io::json::parse(R"({
    "dims": {"z": 4, "y": 8, "x": 8},
    "spacing_mm": [2.0, 2.0, 2.0],
    "seed": 17,
    "noise": {"kind": "scaled-poisson", "level": 0.1},
    "schedule": {"durations_s": [10, 10, 20]},
    "organs": [
      {"name": "liver", "shape": "box", "center": [1.5, 3.5, 3.5], "half_extent": [1.5, 1, 1]},
      {"name": "tumor", "label": 9, "center": [2, 6, 6], "half_extent": [1, 1, 1],
       "params": {"K1": 0.3, "k2": 0.4, "k3": 0.1, "VB": 0.05}}
    ]
  })");
  const io::SimulationConfig cfg = io::parse_simulation_config(j);
  EXPECT_EQ(cfg.phantom.dims, (Dims3{4, 8, 8}));
  EXPECT_EQ(cfg.phantom.seed, 17u);
  EXPECT_EQ(cfg.phantom.noise.kind, NoiseKind::ScaledPoisson);
  EXPECT_EQ(cfg.schedule.size(), 3u);
  ASSERT_EQ(cfg.phantom.organs.size(), 2u);
  EXPECT_EQ(cfg.phantom.organs[0].label, 4);
  EXPECT_EQ(cfg.phantom.organs[0].params, organ_preset("liver").params);
  EXPECT_EQ(cfg.phantom.organs[1].label, 9);
  EXPECT_EQ(cfg.phantom.organs[1].shape, RegionShape::Ellipsoid);

  const io::SimulationConfig def = io::parse_simulation_config(io::json::object());
  EXPECT_EQ(def.schedule, FrameSchedule::reference_62());
  EXPECT_EQ(def.phantom.organs.size(), PhantomSpec::default_spec().organs.size());

  EXPECT_THROW((void)io::parse_simulation_config(io::json{{"sead", 1}}), FormatError);
  EXPECT_THROW((void)io::parse_simulation_config(io::json{{"noise", {{"kind", "laplace"}}}}), FormatError);
  EXPECT_THROW((void)io::parse_simulation_config(io::json{{"schedule", "short"}}), FormatError);
}

TEST_F(IoTest, ReferenceTable) {
  write_text(path("ref.csv"),
             "# source table\norgan,K1,K1_sd,k2,k2_sd,k3,k3_sd,VB,VB_sd\nLiver,0.611,0.146,0.793,0.135,0.014,0.010,0.005,0.006\n");
  const auto rows = io::read_reference_table(path("ref.csv"));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].organ, "Liver");
  EXPECT_EQ(rows[0].mean, organ_preset("liver").params);
  EXPECT_EQ(rows[0].sd.k1, 0.146);
  write_text(path("bad.csv"), "organ,K1\nLiver,0.6\n");
  EXPECT_THROW((void)io::read_reference_table(path("bad.csv")), FormatError);
}

}  // namespace
}  // namespace pbpk

#include <gtest/gtest.h>

#include <random>

#include "pbpk/fitter.hpp"
#include "pbpk/metrics.hpp"
#include "pbpk/phantom.hpp"
#include "test_support.hpp"

namespace pbpk {
namespace {

using testing::default_input;
using testing::reference_schedule;

TEST(TacMetrics, IdenticalCurves) {
  const Tac x{1.0, 2.0, 3.0, 4.0};
  const TacMetrics m = tac_metrics(x, x);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.cosine_similarity, 1.0, 1e-15);
}

TEST(TacMetrics, DoubledCurve) {
  const Tac x{1.0, -2.0, 3.0, 0.5};
  Tac y = x;
  for (double& v : y) v *= 2.0;
  const TacMetrics m = tac_metrics(x, y);
  EXPECT_NEAR(m.cosine_similarity, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.mae, (1.0 + 2.0 + 3.0 + 0.5) / 4.0);
  EXPECT_DOUBLE_EQ(m.mse, (1.0 + 4.0 + 9.0 + 0.25) / 4.0);
}

TEST(TacMetrics, OrthogonalAndOpposite) {
  EXPECT_NEAR(tac_metrics({1.0, 0.0}, {0.0, 3.0}).cosine_similarity, 0.0, 1e-15);
  EXPECT_NEAR(tac_metrics({1.0, 2.0}, {-1.0, -2.0}).cosine_similarity, -1.0, 1e-15);
}

TEST(TacMetrics, Errors) {
  EXPECT_THROW((void)tac_metrics({0.0, 0.0}, {1.0, 2.0}), UndefinedCosineError);
  EXPECT_THROW((void)tac_metrics({1.0, 2.0}, {0.0, 0.0}), UndefinedCosineError);
  EXPECT_THROW((void)tac_metrics({1.0}, {1.0, 2.0}), DomainError);
  EXPECT_THROW((void)tac_metrics({}, {}), DomainError);
}

TEST(TacMetrics, Properties) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int k = 0; k < 200; ++k) {
    Tac a(8), b(8), c(8);
    for (std::size_t i = 0; i < 8; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
      c[i] = u(rng);
    }
    const double cs = tac_metrics(a, b).cosine_similarity;
    EXPECT_GE(cs, -1.0);
    EXPECT_LE(cs, 1.0);
    Tac sa = a;
    const double s = scale(rng);
    for (double& v : sa) v *= s;
    EXPECT_NEAR(tac_metrics(sa, b).cosine_similarity, cs, 1e-12);
    EXPECT_NEAR(tac_metrics(a, b).cosine_similarity, tac_metrics(b, a).cosine_similarity, 1e-15);
    // MAE is a (scaled) L1 distance.
    EXPECT_LE(tac_metrics(a, c).mae, tac_metrics(a, b).mae + tac_metrics(b, c).mae + 1e-12);
    EXPECT_GE(tac_metrics(a, b).mse, 0.0);
  }
}

// 1x2x3 grid: labels {4,4,0 / 6,6,6}, hand-set channel values.
struct Small {
  ParametricVolume pv{Dims3{1, 2, 3}, ParametricVolume::truth_channels()};
  LabelMap mask{Dims3{1, 2, 3}};
  Small() {
    const std::array<std::uint8_t, 6> l{4, 4, 0, 6, 6, 6};
    for (std::size_t v = 0; v < 6; ++v) mask[v] = l[v];
    mask.legend()[4] = "liver";
    mask.legend()[6] = "spleen";
    pv.set_params(0, {0.5, 1.0, 0.02, 0.1});
    pv.set_params(1, {0.7, 1.0, 0.02, 0.1});
    for (std::size_t v = 3; v < 6; ++v) pv.set_params(v, {0.25, 0.5, 0.125, 0.0});
    pv.set_params(2, {9.0, 9.0, 9.0, 0.9});
  }
};

TEST(OrganAggregate, HandComputed) {
  const Small s;
  const OrganReport rep = organ_aggregate(s.pv, s.mask);
  ASSERT_EQ(rep.organs.size(), 2u);
  const OrganStats& liver = rep.organ(4);
  EXPECT_EQ(liver.name, "liver");
  EXPECT_EQ(liver.count, 2u);
  EXPECT_NEAR(liver.channels[0].mean, 0.6, 1e-7);
  EXPECT_NEAR(liver.channels[0].std, 0.1, 1e-7);
  const OrganStats& spleen = rep.organ(6);
  EXPECT_EQ(spleen.count, 3u);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(spleen.channels[c].std, 0.0);
  EXPECT_EQ(spleen.channels[2].mean, 0.125);
  EXPECT_THROW((void)rep.organ(5), DomainError);
  EXPECT_THROW((void)organ_aggregate(s.pv, s.mask, {4, 5}), DomainError);
  EXPECT_EQ(organ_aggregate(s.pv, s.mask, {6}).organs.size(), 1u);
}

TEST(ParameterErrors, BiasAgainstTruth) {
  const Small s;
  ParametricVolume truth{Dims3{1, 2, 3}, ParametricVolume::truth_channels()};
  for (std::size_t v = 0; v < 6; ++v) truth.set_params(v, {0.5, 1.0, 0.02, 0.1});
  const std::vector<ParamError> err = parameter_errors(s.pv, truth, s.mask);
  ASSERT_EQ(err.size(), 2u);
  EXPECT_EQ(err[0].label, 4);
  EXPECT_NEAR(err[0].relative_bias[0], 0.2, 1e-6);
  EXPECT_NEAR(err[0].mean_abs_error[0], 0.1, 1e-6);
  EXPECT_NEAR(err[1].relative_bias[0], -0.5, 1e-6);
}

struct SliceFixture {
  ForwardModel model{default_input(), reference_schedule()};
  DynamicVolume vol{Dims3{3, 2, 2}, reference_schedule()};
  ParametricVolume pv{Dims3{3, 2, 2}, ParametricVolume::truth_channels()};
  SliceFixture() {
    std::mt19937_64 rng(5);
    for (std::size_t v = 0; v < vol.dims().voxels(); ++v) {
      const KineticParams p = testing::random_params(rng, 0.05, 0.5);
      pv.set_params(v, p);
      vol.set_tac(v, model(KineticParams(pv.params(v))));
    }
  }
};

TEST(PerSliceCs, PerfectFitIsOne) {
  const SliceFixture f;
  for (SliceCsMode mode : {SliceCsMode::VoxelMean, SliceCsMode::Pooled}) {
    const std::vector<SliceCs> prof = per_slice_cs(f.vol, f.pv, f.model, nullptr, mode);
    ASSERT_EQ(prof.size(), 3u);
    for (const auto& s : prof) {
      EXPECT_EQ(s.voxels, 4u);
      EXPECT_NEAR(s.cosine_similarity, 1.0, 1e-12);
    }
  }
}

TEST(PerSliceCs, MaskAndEmptySlice) {
  const SliceFixture f;
  LabelMap mask(Dims3{3, 2, 2});
  for (std::size_t v = 0; v < 8; ++v) mask[v] = 1;
  EXPECT_THROW((void)per_slice_cs(f.vol, f.pv, f.model, &mask), DomainError);
  mask[9] = 1;
  const std::vector<SliceCs> prof = per_slice_cs(f.vol, f.pv, f.model, &mask);
  EXPECT_EQ(prof[2].voxels, 1u);
  EXPECT_EQ(prof[0].voxels, 4u);
  mask[9] = 0;
  const std::vector<SliceCs> skipped =
      per_slice_cs(f.vol, f.pv, f.model, &mask, SliceCsMode::VoxelMean, 1, /*skip_empty=*/true);
  ASSERT_EQ(skipped.size(), 2u);
  EXPECT_EQ(skipped[0].z, 0u);
  EXPECT_EQ(skipped[1].z, 1u);
}

TEST(PerSliceCs, WrongParametersLowerTheScore) {
  SliceFixture f;
  // Slice 1 gets a blood-only map: the model curve is then the input itself.
  for (std::size_t v = 4; v < 8; ++v) f.pv.set_params(v, {0.0, 1.0, 0.0, 1.0});
  const std::vector<SliceCs> prof = per_slice_cs(f.vol, f.pv, f.model);
  EXPECT_LT(prof[1].cosine_similarity, prof[0].cosine_similarity);
  EXPECT_LT(prof[1].cosine_similarity, 0.99);
}

TEST(OrganReport, TacMetricsOnNoiselessPhantom) {
  PhantomSpec spec;
  spec.dims = {2, 2, 2};
  spec.organs.push_back({4, "liver", RegionShape::Box, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, organ_preset("liver").params});
  const Phantom ph = build_phantom(spec, default_input(), reference_schedule());
  OrganReport rep = organ_aggregate(ph.truth, ph.labels);
  add_tac_metrics(rep, ph.volume, ph.truth, ph.labels, ForwardModel(default_input(), reference_schedule()));
  ASSERT_TRUE(rep.organ(4).tac.has_value());
  EXPECT_NEAR(rep.organ(4).tac->cosine_similarity, 1.0, 1e-12);
  EXPECT_LT(rep.organ(4).tac->mae, 1e-3);
}

}  // namespace
}  // namespace pbpk

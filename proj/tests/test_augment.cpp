#include <gtest/gtest.h>

#include <cmath>

#include "dhd/augment.hpp"
#include "support.hpp"

using namespace dhd;

namespace {

std::vector<double> ramp(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + static_cast<double>(i);
  return x;
}

TransformGroup single(TransformParams p, double prob = 1.0) {
  TransformGroup g;
  g.transforms = {{p, prob}};
  return g;
}

}  // namespace

TEST(Augment, ZeroScaleIsAlwaysIdentity) {
  const auto group = default_transform_family().scaled(0.0);
  Rng rng(41);
  const auto x = ramp(32);
  for (int t = 0; t < 1000; ++t) {
    const auto tr = sample_transform(group, 32, rng);
    EXPECT_TRUE(tr.is_identity());
    EXPECT_EQ(tr.apply(x), x);
  }
}

TEST(Augment, FullProbabilityAppliesEverything) {
  auto group = default_transform_family();
  for (auto& t : group.transforms) t.base_probability = 1.0;
  Rng rng(42);
  for (int t = 0; t < 200; ++t) EXPECT_EQ(sample_transform(group, 16, rng).size(), group.transforms.size());
}

TEST(Augment, InclusionRateMatchesScaledProbability) {
  const auto group = single(MaskCrop{}, 0.8).scaled(0.5);
  Rng rng(43);
  constexpr int draws = 100000;
  int included = 0;
  for (int t = 0; t < draws; ++t) included += sample_transform(group, 8, rng).size();
  EXPECT_NEAR(static_cast<double>(included) / draws, 0.4, 0.005);
}

TEST(Augment, TeacherAppliesFewerTransformsThanStudent) {
  const auto family = default_transform_family();
  const auto teacher = family.scaled(0.5), student = family.scaled(1.0);
  Rng rng(44);
  constexpr int draws = 100000;
  double t_sum = 0, s_sum = 0, t_sq = 0, s_sq = 0;
  for (int i = 0; i < draws; ++i) {
    const double a = static_cast<double>(sample_transform(teacher, 8, rng).size());
    const double b = static_cast<double>(sample_transform(student, 8, rng).size());
    t_sum += a, t_sq += a * a, s_sum += b, s_sq += b * b;
  }
  const double tm = t_sum / draws, sm = s_sum / draws;
  const double se = std::sqrt((t_sq / draws - tm * tm) / draws + (s_sq / draws - sm * sm) / draws);
  // One-sided z-test at far beyond any conventional level.
  EXPECT_GT((sm - tm) / se, 5.0);
  EXPECT_NEAR(tm, 0.5 * 2.8, 0.02);
  EXPECT_NEAR(sm, 2.8, 0.02);
}

TEST(Augment, SameSeedSameTransforms) {
  const auto family = default_transform_family();
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    Rng a(seed), b(seed);
    for (int t = 0; t < 50; ++t) EXPECT_EQ(sample_transform(family, 24, a).to_json(), sample_transform(family, 24, b).to_json());
  }
}

TEST(Augment, JitterAddsRecordedNoise) {
  Rng rng(45);
  const auto tr = sample_transform(single(AdditiveJitter{0.5}), 10, rng);
  const auto log = tr.to_json();
  ASSERT_EQ(log.size(), 1u);
  const auto noise = log[0]["noise"].get<std::vector<double>>();
  const auto x = ramp(10);
  const auto y = tr.apply(x);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(y[i], x[i] + noise[i]);
    EXPECT_LE(std::abs(noise[i]), 0.5);
  }
}

TEST(Augment, MaskCropZeroesOutsideAContiguousWindow) {
  Rng rng(46);
  const auto x = ramp(20);
  for (int t = 0; t < 200; ++t) {
    const auto tr = sample_transform(single(MaskCrop{0.5, 1.0}), 20, rng);
    const auto keep = tr.to_json()[0]["keep"].get<std::vector<int>>();
    const auto y = tr.apply(x);
    std::size_t kept = 0, runs = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_EQ(y[i], keep[i] ? x[i] : 0.0);
      kept += keep[i];
      if (keep[i] && !keep[(i + 19) % 20]) ++runs;
    }
    EXPECT_GE(kept, 10u);
    EXPECT_LE(runs, 1u);  // one cyclic window (or everything kept)
  }
}

TEST(Augment, FlipReversesAndBlurAverages) {
  Rng rng(47);
  const auto x = ramp(5);
  EXPECT_EQ(sample_transform(single(CoordinateFlip{}), 5, rng).apply(x), (std::vector<double>{5, 4, 3, 2, 1}));
  const auto blur = sample_transform(single(SmoothBlur{1}), 5, rng);
  const auto y = blur.apply(x);
  const std::vector<double> expected = {1.5, 2, 3, 4, 4.5};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y[i], expected[i]);
}

TEST(Augment, ChannelDropZeroesFixedFraction) {
  Rng rng(48);
  const auto x = ramp(40);
  for (int t = 0; t < 50; ++t) {
    const auto y = sample_transform(single(ChannelDrop{0.25}), 40, rng).apply(x);
    EXPECT_EQ(std::count(y.begin(), y.end(), 0.0), 10);
  }
}

TEST(Augment, RotationPreservesNormPerPair) {
  Rng rng(49);
  const auto x = ramp(12);
  const auto tr = sample_transform(single(RotationMix{1, 0.7}), 12, rng);
  const auto y = tr.apply(x);
  double nx = 0, ny = 0;
  for (std::size_t i = 0; i < 12; ++i) nx += x[i] * x[i], ny += y[i] * y[i];
  EXPECT_NEAR(nx, ny, 1e-9);
}

TEST(Augment, ApplyKeepsDimensionAndFiniteness) {
  std::vector<TransformParams> all = {MaskCrop{},     CoordinateFlip{}, AdditiveJitter{}, ChannelDrop{},
                                      SmoothBlur{},   GaussianNoise{},  ZoomScale{},      RotationMix{},
                                      ShearMix{},     Dropout{},        Cutout{}};
  Rng rng(50);
  for (std::size_t dim : {1u, 2u, 3u, 17u, 64u})
    for (const auto& p : all)
      for (int t = 0; t < 20; ++t) {
        std::vector<double> x(dim);
        for (double& v : x) v = rng.normal();
        const auto y = sample_transform(single(p), dim, rng).apply(x);
        ASSERT_EQ(y.size(), dim) << transform_name(p);
        EXPECT_TRUE(all_finite(y)) << transform_name(p);
      }
}

TEST(Augment, DimensionMismatchIsAnError) {
  Rng rng(51);
  const auto tr = sample_transform(single(AdditiveJitter{}), 8, rng);
  EXPECT_THROW(tr.apply(ramp(9)), ShapeError);
}

TEST(Augment, ValidationNamesTheField) {
  try {
    TransformSpec{MaskCrop{0.9, 0.5}, 0.5}.validate();
    FAIL();
  } catch (const InvalidConfig& e) {
    EXPECT_NE(std::string(e.what()).find("min_keep"), std::string::npos);
  }
  EXPECT_THROW((TransformSpec{Dropout{1.5}, 0.5}.validate()), InvalidConfig);
  EXPECT_THROW((TransformSpec{Dropout{0.5}, 1.5}.validate()), InvalidConfig);
  EXPECT_THROW(default_transform_family().scaled(1.5).validate(), InvalidConfig);
}

TEST(Augment, GroupJsonRoundTrip) {
  auto g = default_transform_family();
  g.transforms.push_back({RotationMix{5, 0.3}, 0.25});
  g.transforms.push_back({ZoomScale{0.6, 1.4}, 0.1});
  const auto back = transform_group_from_json(to_json(g));
  EXPECT_EQ(to_json(back), to_json(g));
  EXPECT_THROW(transform_group_from_json(nlohmann::json::parse(R"({"transforms":[{"kind":"warp"}]})")), InvalidConfig);
}

TEST(Augment, UnseenDeformationsAreHeldOut) {
  const auto family = default_transform_family();
  for (const auto& d : unseen_deformations())
    for (const auto& t : d.group.transforms)
      for (const auto& f : family.transforms) EXPECT_NE(t.name(), f.name()) << d.name;
}

TEST(Augment, MalformedGroupJsonIsAConfigError) {
  EXPECT_THROW(transform_group_from_json(nlohmann::json::parse(R"({"transforms":[{"probability":0.5}]})")),
               InvalidConfig);
  EXPECT_THROW(transform_group_from_json(nlohmann::json::parse(R"({"transforms":[{"kind":"dropout","rate":"x"}]})")),
               InvalidConfig);
}

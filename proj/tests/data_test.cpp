#include "gunet/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "gunet/image.hpp"
#include "gunet/rng.hpp"
#include "gunet/tensor.hpp"

namespace gunet {
namespace {

namespace fs = std::filesystem;

// Fresh scratch directory per test, removed on teardown.
class DataTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("gunet_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in) << "cannot open " << p;
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Density maps
// ---------------------------------------------------------------------------

TEST(DensityMap, ZeroDotsGiveZeroMap) {
  const DensityMap m = generate_density_map(std::vector<Dot>{}, 20, 30, 4.0);
  EXPECT_EQ(m.h, 20);
  EXPECT_EQ(m.w, 30);
  EXPECT_EQ(m.sum(), 0.0);
  for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST(DensityMap, CenterDotHasUnitMassAndPeaksAtDot) {
  const DensityMap m = generate_density_map({{50.0, 50.0}}, 101, 101, 10.0);
  EXPECT_NEAR(m.sum(), 1.0, 1e-6);
  double peak = -1;
  int py = -1, px = -1;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x) > peak) {
        peak = m.at(y, x);
        py = y;
        px = x;
      }
  EXPECT_EQ(py, 50);
  EXPECT_EQ(px, 50);
}

TEST(DensityMap, CornerDotIsRenormalizedToUnitMass) {
  // Three quarters of the kernel falls outside the map; renormalization
  // must bring the clipped mass back to exactly one object.
  const DensityMap m = generate_density_map({{0.0, 0.0}}, 64, 64, 4.0);
  EXPECT_NEAR(m.sum(), 1.0, 1e-6);
}

TEST(DensityMap, ConservationHoldsAcrossSigmasAndPlacements) {
  const int h = 40, w = 60;
  for (double sigma : {1.0, 2.5, 4.0, 5.0, 10.0, 20.0}) {
    const std::vector<Dot> dots = {
        {0, 0},       {59, 0},      {0, 39},     {59, 39},    // corners
        {30, 0},      {0, 20},      {59, 20},    {30, 39},    // edge midpoints
        {29.5, 19.5}, {12.3, 33.7}, {45.01, 0.99},            // interior, fractional
    };
    const DensityMap m = generate_density_map(dots, h, w, sigma);
    EXPECT_NEAR(m.sum(), static_cast<double>(dots.size()), 1e-3)
        << "sigma=" << sigma;
    for (double v : m.values) EXPECT_GE(v, 0.0);
  }
}

TEST(DensityMap, OutOfBoundsDotsAreSkipped) {
  const DensityMap m = generate_density_map({{-5.0, 10.0}, {10.0, 99.0}}, 32, 32, 3.0);
  EXPECT_EQ(m.sum(), 0.0);
  const DensityMap mixed = generate_density_map({{-1.0, 4.0}, {16.0, 16.0}}, 32, 32, 3.0);
  EXPECT_NEAR(mixed.sum(), 1.0, 1e-6);
}

TEST(DensityMap, RejectsNonPositiveSigma) {
  EXPECT_THROW(generate_density_map({{1.0, 1.0}}, 8, 8, 0.0), ConfigError);
  EXPECT_THROW(generate_density_map({{1.0, 1.0}}, 8, 8, -2.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Pixel transforms
// ---------------------------------------------------------------------------

TEST(ScalePixels, MapsEightBitRangeToUnit) {
  Tensor4<float> x({1, 1, 1, 3});
  x[0] = 0;
  x[1] = 128;
  x[2] = 255;
  const Tensor4<float> y = scale_pixels(x);
  EXPECT_FLOAT_EQ(y[0], 0.0f);
  EXPECT_FLOAT_EQ(y[1], 128.0f / 255.0f);
  EXPECT_FLOAT_EQ(y[2], 1.0f);
}

TEST(ScalePixels, IdempotentOnScaledInput) {
  Tensor4<float> x({1, 1, 2, 2});
  x[0] = 17;
  x[1] = 255;
  x[2] = 3;
  x[3] = 250;
  const Tensor4<float> once = scale_pixels(x);
  const Tensor4<float> twice = scale_pixels(once);
  EXPECT_EQ(once, twice);  // bitwise: already-scaled input passes through
}

TEST(GammaTransform, IdentityAtGammaOne) {
  Tensor4<float> x({1, 1, 2, 2});
  x[0] = 0.1f;
  x[1] = 0.5f;
  x[2] = 0.9f;
  x[3] = 1.0f;
  const Tensor4<float> y = gamma_transform(x, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y[i], x[i]);
}

TEST(GammaTransform, AnalyticValueAndFixedEndpoints) {
  Tensor4<double> x({1, 1, 1, 3});
  x[0] = 0.0;
  x[1] = 0.25;
  x[2] = 1.0;
  for (double gamma : {0.5, 1.5, 2.0}) {
    const Tensor4<double> y = gamma_transform(x, gamma);
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[2], 1.0);
  }
  EXPECT_NEAR(gamma_transform(x, 0.5)[1], 0.5, 1e-12);
}

TEST(GammaTransform, RejectsNonPositiveGamma) {
  Tensor4<float> x({1, 1, 1, 1});
  EXPECT_THROW(gamma_transform(x, 0.0), ConfigError);
  EXPECT_THROW(gamma_transform(x, -1.0), ConfigError);
}

TEST(ApplyRoi, OnesMaskIsIdentityZerosMaskErases) {
  Tensor4<float> x({1, 2, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i + 1);
  Mask ones{4, 4, std::vector<std::uint8_t>(16, 1)};
  Mask zeros{4, 4, std::vector<std::uint8_t>(16, 0)};
  EXPECT_EQ(apply_roi(x, ones), x);
  const Tensor4<float> erased = apply_roi(x, zeros);
  for (std::size_t i = 0; i < erased.size(); ++i) EXPECT_EQ(erased[i], 0.0f);
}

TEST(ApplyRoi, HalfPlaneHalvesUniformSum) {
  Tensor4<double> x = Tensor4<double>::full({1, 1, 8, 8}, 1.0);
  Mask half{8, 8, std::vector<std::uint8_t>(64, 0)};
  for (int y = 0; y < 4; ++y)
    for (int xw = 0; xw < 8; ++xw) half.inside[y * 8 + xw] = 1;
  EXPECT_EQ(sum(apply_roi(x, half)), 32.0);

  DensityMap m(8, 8, 1.0);
  for (double& v : m.values) v = 0.5;
  EXPECT_EQ(apply_roi(m, half).sum(), 16.0);
}

TEST(ApplyRoi, RejectsMismatchedDims) {
  Tensor4<float> x({1, 1, 4, 4});
  Mask m{3, 4, std::vector<std::uint8_t>(12, 1)};
  EXPECT_THROW(apply_roi(x, m), ShapeError);
  DensityMap d(4, 4, 1.0);
  EXPECT_THROW(apply_roi(d, m), ShapeError);
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

TEST(Resize, ConstantImageStaysConstant) {
  const Tensor4<double> x = Tensor4<double>::full({1, 3, 10, 14}, 0.37);
  const Tensor4<double> y = resize_bilinear(x, 5, 7);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.37, 1e-12);
}

TEST(Resize, LinearRampIsPreservedByBilinear) {
  // Bilinear interpolation reproduces affine signals away from edge clamps.
  Tensor4<double> x({1, 1, 4, 32});
  for (int y = 0; y < 4; ++y)
    for (int xw = 0; xw < 32; ++xw) x.at(0, 0, y, xw) = xw;
  const Tensor4<double> half = resize_bilinear(x, 4, 16);
  for (int xw = 1; xw < 15; ++xw)
    EXPECT_NEAR(half.at(0, 0, 2, xw), 2.0 * xw + 0.5, 1e-9);
}

TEST(Resize, MaxSideHalvesImageAndScalesDots) {
  const Tensor4<float> img({1, 3, 380, 760});
  const std::vector<Dot> dots = {{400.0, 100.0}, {10.0, 370.0}};
  const ResizedImage<float> r = resize_with_dots(img, dots, 380);
  EXPECT_EQ(r.image.shape(), (Shape4{1, 3, 190, 380}));
  ASSERT_EQ(r.dots.size(), 2u);  // count preserved exactly
  EXPECT_NEAR(r.dots[0].x, 200.0, 1e-9);
  EXPECT_NEAR(r.dots[0].y, 50.0, 1e-9);
  EXPECT_NEAR(r.dots[1].x, 5.0, 1e-9);
  EXPECT_NEAR(r.dots[1].y, 185.0, 1e-9);
}

TEST(Resize, NoOpWhenAlreadySmallEnough) {
  Tensor4<float> img({1, 1, 300, 200});
  img.at(0, 0, 7, 9) = 0.5f;
  const std::vector<Dot> dots = {{12.0, 34.0}};
  const ResizedImage<float> r = resize_with_dots(img, dots, 380);
  EXPECT_EQ(r.image, img);
  EXPECT_EQ(r.dots[0].x, 12.0);
  EXPECT_EQ(r.dots[0].y, 34.0);
  EXPECT_EQ(r.scale_x, 1.0);
  EXPECT_EQ(r.scale_y, 1.0);
}

TEST(Resize, RejectsTinyMaxSide) {
  Tensor4<float> img({1, 1, 64, 64});
  EXPECT_THROW(resize_with_dots(img, {}, 16), ConfigError);
}

// ---------------------------------------------------------------------------
// PNG round trip
// ---------------------------------------------------------------------------

TEST_F(DataTest, PngRoundTripPreservesPixelsWithinQuantization) {
  RngStream rng = RngStream::root(5);
  for (int channels : {1, 3}) {
    Tensor4<double> x({1, channels, 9, 7});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    const std::string p = path("rt.png");
    write_png(p, to_u8(x));
    const Tensor4<double> back = to_tensor<double>(read_png(p), channels);
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_NEAR(back[i], x[i], 0.5 / 255.0 + 1e-9);
  }
}

TEST_F(DataTest, ReadPngSurfacesMissingFileWithPath) {
  try {
    (void)read_png(path("nope.png"));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.png"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

// Builds an in-memory dataset without touching disk.
Dataset<float> make_memory_dataset(int n_images, int h, int w,
                                   const std::vector<std::vector<Dot>>& dots_per_image,
                                   double sigma = 2.0) {
  Dataset<float> ds;
  ds.sigma = sigma;
  RngStream rng = RngStream::root(17);
  for (int i = 0; i < n_images; ++i) {
    DatasetImage<float> di;
    di.id = "mem_" + std::to_string(i);
    di.split = "train";
    di.image = Tensor4<float>({1, 3, h, w});
    for (std::size_t k = 0; k < di.image.size(); ++k)
      di.image[k] = static_cast<float>(rng.uniform());
    di.dots = dots_per_image[i];
    di.density = generate_density_map(di.dots, h, w, sigma);
    ds.train.push_back(i);
    ds.images.push_back(std::move(di));
  }
  return ds;
}

TEST(SamplePatches, CenteredCountMatchesCeilOfFraction) {
  const auto ds = make_memory_dataset(1, 64, 64, {{{40.0, 23.0}, {10.0, 50.0}}});
  SampleOptions opt;
  opt.n = 128;
  opt.centered_fraction = 0.5;
  opt.patch_side = 32;
  const auto batch = sample_patch_batch(ds, ds.train, opt, /*seed=*/9, /*iteration=*/0);
  ASSERT_EQ(batch.provenance.size(), 128u);
  int centered = 0;
  for (const auto& p : batch.provenance) centered += p.centered;
  EXPECT_EQ(centered, 64);
  for (int b = 0; b < 64; ++b) EXPECT_TRUE(batch.provenance[b].centered);
  // Odd batch with fraction 0.5 rounds up.
  opt.n = 7;
  const auto odd = sample_patch_batch(ds, ds.train, opt, 9, 0);
  int odd_centered = 0;
  for (const auto& p : odd.provenance) odd_centered += p.centered;
  EXPECT_EQ(odd_centered, 4);
}

TEST(SamplePatches, ZeroDotImagesYieldNoCenteredFlags) {
  const auto ds = make_memory_dataset(1, 48, 48, {{}});
  SampleOptions opt;
  opt.n = 16;
  opt.patch_side = 32;
  const auto batch = sample_patch_batch(ds, ds.train, opt, 1, 0);
  for (const auto& p : batch.provenance) EXPECT_FALSE(p.centered);
}

TEST(SamplePatches, EmptyPoolIsRejected) {
  const auto ds = make_memory_dataset(1, 48, 48, {{}});
  SampleOptions opt;
  EXPECT_THROW(sample_patch_batch(ds, std::vector<int>{}, opt, 1, 0), ConfigError);
}

TEST(SamplePatches, WindowsStayInBoundsAndAlignWithTargets) {
  const auto ds = make_memory_dataset(1, 64, 64, {{{40.0, 23.0}}});
  SampleOptions opt;
  opt.n = 32;
  opt.patch_side = 32;
  opt.flip_prob = 0.0;
  const auto batch = sample_patch_batch(ds, ds.train, opt, 3, 1);
  const auto& di = ds.images[0];
  for (int b = 0; b < opt.n; ++b) {
    const auto& p = batch.provenance[b];
    EXPECT_GE(p.top, 0);
    EXPECT_GE(p.left, 0);
    EXPECT_LE(p.top, 64 - 32);
    EXPECT_LE(p.left, 64 - 32);
    // Patch pixels and target pixels both equal direct crops of the source.
    for (int y = 0; y < 32; y += 7)
      for (int x = 0; x < 32; x += 7) {
        EXPECT_EQ(batch.images.at(b, 0, y, x), di.image.at(0, 0, p.top + y, p.left + x));
        EXPECT_FLOAT_EQ(batch.targets.at(b, 0, y, x),
                        static_cast<float>(di.density.at(p.top + y, p.left + x)));
      }
  }
}

TEST(SamplePatches, CenteredPatchPeaksWithinOnePixelOfCenter) {
  // One isolated dot away from borders: the cropped target's maximum must
  // sit at the patch center (within a pixel, accounting for flips).
  const auto ds = make_memory_dataset(1, 64, 64, {{{40.0, 23.0}}});
  SampleOptions opt;
  opt.n = 8;
  opt.centered_fraction = 1.0;
  opt.patch_side = 32;
  const auto batch = sample_patch_batch(ds, ds.train, opt, 11, 4);
  for (int b = 0; b < opt.n; ++b) {
    float peak = -1;
    int py = -1, px = -1;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (batch.targets.at(b, 0, y, x) > peak) {
          peak = batch.targets.at(b, 0, y, x);
          py = y;
          px = x;
        }
    EXPECT_NEAR(py, 16, 1) << "patch " << b;
    EXPECT_NEAR(px, 16, 1) << "patch " << b;
  }
}

TEST(SamplePatches, FlipMirrorsImageAndTargetTogether) {
  const auto ds = make_memory_dataset(1, 64, 64, {{{40.0, 23.0}, {12.0, 50.0}}});
  SampleOptions opt;
  opt.n = 16;
  opt.patch_side = 32;
  opt.flip_prob = 0.0;
  const auto plain = sample_patch_batch(ds, ds.train, opt, 21, 2);
  opt.flip_prob = 1.0;
  const auto flipped = sample_patch_batch(ds, ds.train, opt, 21, 2);
  for (int b = 0; b < opt.n; ++b) {
    EXPECT_FALSE(plain.provenance[b].flipped);
    EXPECT_TRUE(flipped.provenance[b].flipped);
    // Same windows, mirrored content; target mass is flip-invariant.
    EXPECT_EQ(plain.provenance[b].top, flipped.provenance[b].top);
    EXPECT_EQ(plain.provenance[b].left, flipped.provenance[b].left);
    double mass_plain = 0, mass_flipped = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        EXPECT_EQ(plain.images.at(b, 1, y, x), flipped.images.at(b, 1, y, 31 - x));
        EXPECT_EQ(plain.targets.at(b, 0, y, x), flipped.targets.at(b, 0, y, 31 - x));
        mass_plain += plain.targets.at(b, 0, y, x);
        mass_flipped += flipped.targets.at(b, 0, y, x);
      }
    EXPECT_EQ(mass_plain, mass_flipped);
  }
}

TEST(SamplePatches, GammaTouchesImagesOnlyAndIsRecorded) {
  const auto ds = make_memory_dataset(1, 64, 64, {{{30.0, 30.0}}});
  SampleOptions opt;
  opt.n = 12;
  opt.patch_side = 32;
  const auto off = sample_patch_batch(ds, ds.train, opt, 5, 3);
  opt.gamma_augment = true;
  const auto on = sample_patch_batch(ds, ds.train, opt, 5, 3);
  EXPECT_EQ(off.targets, on.targets);  // counts unaffected by gamma
  bool any_changed = false;
  for (int b = 0; b < opt.n; ++b) {
    EXPECT_EQ(off.provenance[b].gamma, 1.0);
    EXPECT_GE(on.provenance[b].gamma, 0.5);
    EXPECT_LE(on.provenance[b].gamma, 1.5);
    // Same windows and flips: gamma is drawn from its own stream.
    EXPECT_EQ(off.provenance[b].top, on.provenance[b].top);
    EXPECT_EQ(off.provenance[b].flipped, on.provenance[b].flipped);
    if (std::abs(on.provenance[b].gamma - 1.0) > 1e-3) any_changed = true;
  }
  EXPECT_TRUE(any_changed);
  for (std::size_t i = 0; i < on.images.size(); ++i) {
    EXPECT_GE(on.images[i], 0.0f);
    EXPECT_LE(on.images[i], 1.0f);
  }
}

TEST(SamplePatches, SameSeedAndIterationReproduceProvenance) {
  const auto ds = make_memory_dataset(3, 64, 64,
                                      {{{10.0, 10.0}}, {{20.0, 30.0}, {40.0, 40.0}}, {}});
  SampleOptions opt;
  opt.n = 32;
  opt.patch_side = 32;
  opt.gamma_augment = true;
  opt.image_per_patch = true;
  const auto a = sample_patch_batch(ds, ds.train, opt, 77, 5);
  const auto b = sample_patch_batch(ds, ds.train, opt, 77, 5);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.targets, b.targets);
  const auto c = sample_patch_batch(ds, ds.train, opt, 77, 6);
  EXPECT_NE(a.provenance, c.provenance);  // new iteration, new draws
}

TEST(SamplePatches, SharedImageModeUsesOneSourcePerBatch) {
  const auto ds = make_memory_dataset(4, 64, 64, {{}, {}, {}, {}});
  SampleOptions opt;
  opt.n = 24;
  opt.patch_side = 32;
  std::set<int> sources_across_batches;
  for (std::uint64_t iter = 0; iter < 8; ++iter) {
    const auto batch = sample_patch_batch(ds, ds.train, opt, 13, iter);
    std::set<int> in_batch;
    for (const auto& p : batch.provenance) in_batch.insert(p.image_index);
    EXPECT_EQ(in_batch.size(), 1u);  // one image per batch
    sources_across_batches.insert(*in_batch.begin());
  }
  EXPECT_GT(sources_across_batches.size(), 1u);  // but batches rotate sources
}

TEST(SamplePatches, ImagesSmallerThanPatchAreMirrorPadded) {
  const auto ds = make_memory_dataset(1, 20, 20, {{{10.0, 10.0}}});
  SampleOptions opt;
  opt.n = 6;
  opt.patch_side = 32;
  opt.flip_prob = 0.0;
  const auto batch = sample_patch_batch(ds, ds.train, opt, 2, 0);
  const auto& di = ds.images[0];
  for (const auto& p : batch.provenance) {
    EXPECT_EQ(p.top, 0);
    EXPECT_EQ(p.left, 0);
  }
  // Reflected coordinates: row 20 mirrors row 19, row 21 mirrors row 18...
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      EXPECT_EQ(batch.images.at(0, 0, y, x),
                di.image.at(0, 0, mirror_index(y, 20), mirror_index(x, 20)));
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation and the full load pipeline
// ---------------------------------------------------------------------------

TEST_F(DataTest, SyntheticDatasetWritesImagesAnnotationsAndManifest) {
  SyntheticSceneSpec spec;
  spec.seed = 7;
  generate_synthetic_dataset(spec, 6, path("ds"), {/*val=*/1, /*test=*/1});
  for (int i = 0; i < 6; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ds/img_%04d", i);
    EXPECT_TRUE(fs::exists(dir_ / (std::string(buf) + ".png")));
    EXPECT_TRUE(fs::exists(dir_ / (std::string(buf) + ".json")));
  }
  const nlohmann::json manifest = parse_json_file(path("ds/manifest.json"));
  ASSERT_EQ(manifest.at("images").size(), 6u);
  int train = 0, val = 0, test = 0;
  for (const auto& e : manifest.at("images")) {
    const int count = e.at("count").get<int>();
    EXPECT_GE(count, spec.count_min);
    EXPECT_LE(count, spec.count_max);
    const std::string split = e.at("split").get<std::string>();
    train += split == "train";
    val += split == "val";
    test += split == "test";
  }
  EXPECT_EQ(train, 4);
  EXPECT_EQ(val, 1);
  EXPECT_EQ(test, 1);
}

TEST_F(DataTest, SyntheticDatasetIsByteIdenticalPerSeed) {
  SyntheticSceneSpec spec;
  spec.seed = 7;
  spec.background = "noise";
  generate_synthetic_dataset(spec, 4, path("a"));
  generate_synthetic_dataset(spec, 4, path("b"));
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dir_ / "a")) {
    const auto other = dir_ / "b" / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(other)) << entry.path().filename();
    ++compared;
  }
  EXPECT_EQ(compared, 9);  // 4 PNGs + 4 annotations + manifest

  SyntheticSceneSpec other_seed = spec;
  other_seed.seed = 8;
  generate_synthetic_dataset(other_seed, 4, path("c"));
  EXPECT_NE(read_bytes(dir_ / "a" / "img_0000.png"), read_bytes(dir_ / "c" / "img_0000.png"));
}

TEST_F(DataTest, FixedCountRangePinsEveryManifestEntry) {
  SyntheticSceneSpec spec;
  spec.count_min = spec.count_max = 3;
  generate_synthetic_dataset(spec, 5, path("ds"));
  const nlohmann::json manifest = parse_json_file(path("ds/manifest.json"));
  for (const auto& e : manifest.at("images")) EXPECT_EQ(e.at("count").get<int>(), 3);
}

TEST_F(DataTest, LoadedDensitySumsMatchManifestCounts) {
  SyntheticSceneSpec spec;
  spec.seed = 42;
  spec.count_min = 2;
  spec.count_max = 9;
  generate_synthetic_dataset(spec, 5, path("ds"));
  LoadOptions opt;
  opt.sigma = 4.0;
  const Dataset<float> ds = load_dataset<float>(path("ds/manifest.json"), opt);
  ASSERT_EQ(ds.images.size(), 5u);
  const nlohmann::json manifest = parse_json_file(path("ds/manifest.json"));
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const int count = manifest.at("images")[i].at("count").get<int>();
    EXPECT_EQ(static_cast<int>(ds.images[i].dots.size()), count);
    EXPECT_NEAR(ds.images[i].density.sum(), count, 1e-3);
    EXPECT_EQ(ds.images[i].image.shape(), (Shape4{1, 3, 96, 96}));
    for (std::size_t k = 0; k < ds.images[i].image.size(); ++k) {
      EXPECT_GE(ds.images[i].image[k], 0.0f);
      EXPECT_LE(ds.images[i].image[k], 1.0f);
    }
  }
  EXPECT_EQ(ds.train.size(), 5u);
  EXPECT_TRUE(ds.val.empty());
  EXPECT_EQ(&ds.val_or_train(), &ds.train);  // val falls back to train
}

TEST_F(DataTest, SplitMembershipIsRespectedByLoader) {
  SyntheticSceneSpec spec;
  generate_synthetic_dataset(spec, 8, path("ds"), {/*val=*/2, /*test=*/1});
  const Dataset<float> ds = load_dataset<float>(path("ds/manifest.json"), {});
  EXPECT_EQ(ds.train.size(), 5u);
  EXPECT_EQ(ds.val.size(), 2u);
  EXPECT_EQ(ds.test.size(), 1u);
  EXPECT_EQ(&ds.val_or_train(), &ds.val);
  EXPECT_THROW(ds.split("bogus"), ConfigError);
}

TEST_F(DataTest, RoiIsAppliedToImageAndDensityAtLoad) {
  // Hand-build a 2-dot image whose right half is masked out.
  const int h = 48, w = 48;
  Tensor4<double> img = Tensor4<double>::full({1, 3, h, w}, 0.6);
  write_png(path("img.png"), to_u8(img));
  Tensor4<double> mask({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) mask.at(0, 0, y, x) = 1.0;
  write_png(path("roi.png"), to_u8(mask));
  write_text_file(path("img.json"),
                  R"({"image": "img.png", "dots": [[12, 24], [36, 24]], "roi": "roi.png"})");
  write_text_file(path("manifest.json"),
                  R"({"images": [{"id": "img", "annotation": "img.json", "split": "train"}]})");

  LoadOptions opt;
  opt.sigma = 2.0;
  const Dataset<float> ds = load_dataset<float>(path("manifest.json"), opt);
  ASSERT_EQ(ds.images.size(), 1u);
  const auto& di = ds.images[0];
  ASSERT_TRUE(di.roi.has_value());
  // Outside the ROI everything is zero; inside, the left dot survives.
  for (int y = 0; y < h; ++y)
    for (int x = w / 2; x < w; ++x) {
      EXPECT_EQ(di.image.at(0, 0, y, x), 0.0f);
      EXPECT_EQ(di.density.at(y, x), 0.0);
    }
  EXPECT_NEAR(di.density.sum(), 1.0, 1e-3);  // right-half dot masked away
}

TEST_F(DataTest, LoaderResizesImagesAndRegeneratesDensity) {
  const int h = 64, w = 128;
  write_png(path("img.png"), to_u8(Tensor4<double>::full({1, 3, h, w}, 0.4)));
  write_text_file(path("img.json"), R"({"image": "img.png", "dots": [[100, 32], [20, 10]]})");
  write_text_file(path("manifest.json"),
                  R"({"images": [{"id": "img", "annotation": "img.json"}]})");
  LoadOptions opt;
  opt.sigma = 3.0;
  opt.max_side = 64;
  const Dataset<float> ds = load_dataset<float>(path("manifest.json"), opt);
  const auto& di = ds.images[0];
  EXPECT_EQ(di.image.shape(), (Shape4{1, 3, 32, 64}));
  ASSERT_EQ(di.dots.size(), 2u);
  EXPECT_NEAR(di.dots[0].x, 50.0, 1e-9);
  EXPECT_NEAR(di.dots[0].y, 16.0, 1e-9);
  // Density is rebuilt at the new size, not resampled: mass stays 2.
  EXPECT_EQ(di.density.h, 32);
  EXPECT_EQ(di.density.w, 64);
  EXPECT_NEAR(di.density.sum(), 2.0, 1e-3);
}

TEST_F(DataTest, LoaderErrorsAreStructuredAndNamePaths) {
  EXPECT_THROW(load_dataset<float>(path("missing.json"), {}), IoError);

  write_text_file(path("bad.json"), "{not json");
  EXPECT_THROW(load_dataset<float>(path("bad.json"), {}), FormatError);

  write_text_file(path("empty.json"), R"({"images": []})");
  EXPECT_THROW(load_dataset<float>(path("empty.json"), {}), FormatError);

  write_text_file(path("noimg.json"), R"({"something": 1})");
  EXPECT_THROW(load_dataset<float>(path("noimg.json"), {}), FormatError);

  write_text_file(path("entry.json"), R"({"images": [{"id": "x"}]})");
  EXPECT_THROW(load_dataset<float>(path("entry.json"), {}), FormatError);
}

TEST(SyntheticSpec, ValidatesItsInvariants) {
  SyntheticSceneSpec bad_bg;
  bad_bg.background = "plaid";
  EXPECT_THROW(bad_bg.validate(), ConfigError);
  SyntheticSceneSpec bad_count;
  bad_count.count_min = 5;
  bad_count.count_max = 2;
  EXPECT_THROW(bad_count.validate(), ConfigError);
  SyntheticSceneSpec bad_radius;
  bad_radius.canvas_h = bad_radius.canvas_w = 24;
  bad_radius.radius_max = 12.0;
  EXPECT_THROW(bad_radius.validate(), ConfigError);
}

TEST(SyntheticScene, ObjectsAreFullyInsideTheCanvas) {
  SyntheticSceneSpec spec;
  spec.canvas_h = 64;
  spec.canvas_w = 80;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const SyntheticScene s =
        render_synthetic_scene(spec, seed_stream(3, Stream::kSynth).child(i));
    for (const Dot& d : s.dots) {
      EXPECT_GE(d.x, spec.radius_min);
      EXPECT_LE(d.x, spec.canvas_w - 1 - spec.radius_min);
      EXPECT_GE(d.y, spec.radius_min);
      EXPECT_LE(d.y, spec.canvas_h - 1 - spec.radius_min);
    }
    for (std::size_t k = 0; k < s.image.size(); ++k) {
      EXPECT_GE(s.image[k], 0.0);
      EXPECT_LE(s.image[k], 1.0);
    }
  }
}

}  // namespace
}  // namespace gunet

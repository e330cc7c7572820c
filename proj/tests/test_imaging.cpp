#include "bayesdic/fem.hpp"
#include "bayesdic/imaging.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace bayesdic;

namespace {

ImageGeometry unit_grid(int w, int h) {
  ImageGeometry g;
  g.width = w;
  g.height = h;
  return g;
}

Image speckle(int n = 48, std::uint64_t seed = 3) {
  SpeckleSpec s;
  s.seed = seed;
  return generate_speckle(s, n, n);
}

PixelDisplacement constant_shift(const ImageGeometry& g, Vec2 d) {
  return PixelDisplacement{g, std::vector<Vec2>(g.size(), d), PixelMask(g.size(), 1)};
}

}  // namespace

TEST(Kernel, InterpolatesAndPartitionsUnity) {
  EXPECT_EQ(detail::keys6(0.0), 1.0);
  for (double s : {1.0, 2.0, 3.0, 3.5}) EXPECT_NEAR(detail::keys6(s), 0.0, 1e-15);
  for (double t : {0.1, 0.25, 0.5, 0.9}) {
    const auto w = detail::cubic_weights(t);
    double sum = 0.0;
    for (double v : w) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-14);
  }
}

TEST(Kernel, ContinuouslyDifferentiableAtKnots) {
  const double h = 1e-7;
  for (double s : {1.0, 2.0, 3.0}) {
    const double left = (detail::keys6(s - h) - detail::keys6(s - 2 * h)) / h;
    const double right = (detail::keys6(s + 2 * h) - detail::keys6(s + h)) / h;
    EXPECT_NEAR(left, right, 1e-5) << "s = " << s;
  }
}

TEST(Bicubic, ReproducesCubicPolynomials) {
  Image img(unit_grid(16, 16));
  auto p = [](double x, double y) { return 0.02 * x * x * x - 0.1 * x * x * y + 0.3 * y * y * y / 9.0 + x - 2.0 * y + 5.0; };
  for (int j = 0; j < 16; ++j)
    for (int i = 0; i < 16; ++i) img(i, j) = p(i, j);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(2.0, 12.0);
  for (int k = 0; k < 500; ++k) {
    const double x = u(rng), y = u(rng);
    bool ok = false;
    const double v = sample_bicubic(img, x, y, ok);
    ASSERT_TRUE(ok);
    EXPECT_NEAR(v, p(x, y), 1e-9);
  }
}

TEST(Bicubic, ConstantImageStaysConstant) {
  Image img(unit_grid(12, 12), 117.25);
  bool ok = false;
  for (double x : {0.0, 0.3, 5.5, 10.99})
    for (double y : {-1.0, 4.25, 11.0}) EXPECT_NEAR(sample_bicubic(img, x, y, ok), 117.25, 1e-12);
}

TEST(Bicubic, ValidityFollowsStencil) {
  Image img(unit_grid(10, 10), 1.0);
  bool ok = true;
  sample_bicubic(img, 2.0, 2.0, ok);
  EXPECT_TRUE(ok);
  sample_bicubic(img, 1.9, 2.0, ok);
  EXPECT_FALSE(ok);
  sample_bicubic(img, 6.99, 6.99, ok);
  EXPECT_TRUE(ok);
  sample_bicubic(img, 7.0, 5.0, ok);
  EXPECT_FALSE(ok);
}

TEST(Warp, IdentityIsBitExact) {
  const Image f = speckle();
  const auto r = warp_image(f, constant_shift(f.geometry, Vec2::Zero()));
  for (std::size_t k = 0; k < f.values.size(); ++k)
    if (r.valid[k]) ASSERT_EQ(r.image.values[k], f.values[k]);
}

TEST(Warp, IntegerShiftIsExactOnValidPixels) {
  const Image f = speckle();
  const auto r = warp_image(f, constant_shift(f.geometry, Vec2{3.0, -2.0}));
  int valid = 0;
  for (int j = 0; j < f.height(); ++j)
    for (int i = 0; i < f.width(); ++i) {
      const auto k = f.geometry.index(i, j);
      if (!r.valid[k]) continue;
      ++valid;
      ASSERT_EQ(r.image.values[k], f(i + 3, j - 2));
    }
  EXPECT_GT(valid, 1000);
}

TEST(Warp, GeometryMismatchThrows) {
  const Image f = speckle();
  EXPECT_THROW(warp_image(f, constant_shift(unit_grid(8, 8), Vec2::Zero())), GeometryMismatch);
}

TEST(Speckle, DeterministicAndInRange) {
  const Image a = speckle(64, 5), b = speckle(64, 5), c = speckle(64, 6);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  double lo = 1e9, hi = -1e9, mean = 0.0;
  for (double v : a.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    mean += v;
  }
  mean /= a.values.size();
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 255.0);
  EXPECT_GT(hi - lo, 100.0);  // usable contrast
  EXPECT_GT(mean, 40.0);
}

TEST(Speckle, FieldIsSmoothBetweenPixels) {
  SpeckleSpec s;
  const SpeckleField field(s, 32, 32);
  // Gaussian blobs with sigma >= 1.5 px: gradient magnitude stays moderate.
  for (double x = 8.0; x < 24.0; x += 0.37) {
    const double d = field(Vec2{x + 1e-4, 16.0}) - field(Vec2{x, 16.0});
    EXPECT_LT(std::abs(d) / 1e-4, 255.0);
  }
}

TEST(Noise, MomentsAndIndependence) {
  const Image base(unit_grid(200, 200), 100.0);
  const Image n1 = add_noise(base, 2.55, 1), n2 = add_noise(base, 2.55, 2);
  double m = 0.0, v = 0.0, cov = 0.0;
  const double N = static_cast<double>(base.values.size());
  for (std::size_t k = 0; k < base.values.size(); ++k) {
    m += n1.values[k] - 100.0;
    v += (n1.values[k] - 100.0) * (n1.values[k] - 100.0);
    cov += (n1.values[k] - 100.0) * (n2.values[k] - 100.0);
  }
  EXPECT_NEAR(m / N, 0.0, 0.05);
  EXPECT_NEAR(std::sqrt(v / N), 2.55, 0.03);
  EXPECT_NEAR(cov / N / (2.55 * 2.55), 0.0, 0.02);
  EXPECT_EQ(add_noise(base, 2.55, 1).values, n1.values);
}

TEST(Raster, InterpolatesFieldAtPixelCenters) {
  Microstructure micro;
  micro.domain = Rect{0, 0, 2, 2};
  const auto mesh = std::make_shared<const Mesh>(generate_mesh(micro, 0.5));
  const Mat2 F = (Mat2() << 1.05, 0.02, -0.01, 0.97).finished();
  const auto u = affine_field(mesh, F);
  const auto g = ImageGeometry::covering(Rect{0, 0, 2, 2}, 20);
  const auto mask = window_mask(g, Rect{0.5, 0.5, 1.5, 1.5});
  const auto pd = rasterize_displacement(u, g, &mask);
  int defined = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!pd.defined[k]) continue;
    ++defined;
    EXPECT_NEAR((pd.values[k] - (F - Mat2::Identity()) * g.center(k)).norm(), 0.0, 1e-14);
  }
  EXPECT_EQ(defined, 100);
}

TEST(ImageIo, RawRoundTripIsExact) {
  const Image f = speckle();
  std::stringstream ss;
  write_raw(ss, f);
  const Image r = read_raw(ss, &f.geometry);
  EXPECT_EQ(r.values, f.values);
  std::stringstream bad("NOTRAW00");
  EXPECT_THROW(read_raw(bad), ImageFormatError);
}

TEST(ImageIo, PgmRoundTripQuantizes) {
  Image f = speckle(16);
  std::stringstream ss;
  write_pgm(ss, f);
  EXPECT_EQ(ss.str().substr(0, 2), "P5");
  const Image r = read_pgm(ss);
  ASSERT_EQ(r.width(), 16);
  for (std::size_t k = 0; k < f.values.size(); ++k) EXPECT_NEAR(r.values[k], f.values[k], 0.5 + 1e-12);
}

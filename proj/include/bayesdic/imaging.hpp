#pragma once

// Real-valued grayscale images on a physical pixel grid, synthetic speckle,
// FE-to-pixel displacement transfer, backward warping and image noise.

#include "bayesdic/fem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace bayesdic {

/// Pixel (i, j) has its center at origin + pixel_size * (i, j); j grows with y.
struct ImageGeometry {
  int width = 0;
  int height = 0;
  double pixel_size = 1.0;
  Vec2 origin = Vec2::Zero();

  std::size_t size() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * width + i; }
  Vec2 center(int i, int j) const { return origin + pixel_size * Vec2{double(i), double(j)}; }
  Vec2 center(std::size_t k) const {
    return center(static_cast<int>(k % width), static_cast<int>(k / width));
  }
  Vec2 to_pixel(const Vec2& X) const { return (X - origin) / pixel_size; }
  Vec2 to_physical(const Vec2& p) const { return origin + pixel_size * p; }
  bool operator==(const ImageGeometry& o) const {
    return width == o.width && height == o.height && pixel_size == o.pixel_size && origin == o.origin;
  }

  /// Grid of `pixels` x `pixels` covering `window`.
  static ImageGeometry covering(const Rect& window, int pixels) {
    ImageGeometry g;
    g.width = g.height = pixels;
    g.pixel_size = window.width() / pixels;
    g.origin = Vec2{window.x0 + 0.5 * g.pixel_size, window.y0 + 0.5 * g.pixel_size};
    return g;
  }
};

struct Image {
  ImageGeometry geometry;
  std::vector<double> values;

  Image() = default;
  explicit Image(const ImageGeometry& g, double fill = 0.0) : geometry(g), values(g.size(), fill) {
    if (g.width <= 0 || g.height <= 0) throw std::invalid_argument("Image: width and height must be > 0");
  }
  int width() const { return geometry.width; }
  int height() const { return geometry.height; }
  double& operator()(int i, int j) { return values[geometry.index(i, j)]; }
  double operator()(int i, int j) const { return values[geometry.index(i, j)]; }
};

/// Per-pixel mask (1 = use).
using PixelMask = std::vector<std::uint8_t>;

/// Pixels whose centers lie inside `window` (closed).
inline PixelMask window_mask(const ImageGeometry& g, const Rect& window) {
  PixelMask m(g.size(), 0);
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i) m[g.index(i, j)] = window.contains(g.center(i, j)) ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Speckle

struct SpeckleSpec {
  double blob_density = 0.012;          // blobs per pixel^2
  double radius_min = 1.5, radius_max = 3.0;   // Gaussian blob sigma, pixels
  double contrast_min = 80.0, contrast_max = 200.0;
  double background = 40.0;
  double blur_sigma = 1.0;  // pixels
  std::uint64_t seed = 1;

  void validate() const {
    if (!(blob_density >= 0.0)) throw std::invalid_argument("SpeckleSpec: blob_density must be >= 0");
    if (!(radius_min > 0.0 && radius_max >= radius_min)) throw std::invalid_argument("SpeckleSpec: bad radius range");
    if (!(contrast_min >= -255.0 && contrast_max <= 255.0 && contrast_max >= contrast_min))
      throw std::invalid_argument("SpeckleSpec: bad contrast range");
    if (!(background >= 0.0 && background <= 255.0)) throw std::invalid_argument("SpeckleSpec: bad background");
    if (!(blur_sigma >= 0.0)) throw std::invalid_argument("SpeckleSpec: blur_sigma must be >= 0");
  }
};

/// Sum of blurred Gaussian blobs, evaluable at any point in pixel coordinates
/// and clipped to [0, 255]. Blurring a Gaussian blob by a Gaussian kernel keeps
/// it Gaussian, so the blur is applied in closed form.
class SpeckleField {
 public:
  SpeckleField(const SpeckleSpec& spec, int width, int height, double margin_fraction = 0.5) : spec_(spec) {
    spec.validate();
    const double mx = margin_fraction * width, my = margin_fraction * height;
    x0_ = -mx;
    y0_ = -my;
    const double wx = width + 2 * mx, wy = height + 2 * my;
    Rng rng(derive_seed(spec.seed, "speckle"));
    std::uniform_real_distribution<double> ux(x0_, x0_ + wx), uy(y0_, y0_ + wy);
    std::uniform_real_distribution<double> ur(spec.radius_min, spec.radius_max);
    std::uniform_real_distribution<double> uc(spec.contrast_min, spec.contrast_max);
    const auto count = static_cast<long>(std::llround(spec.blob_density * wx * wy));
    const double s_max2 = spec.radius_max * spec.radius_max + spec.blur_sigma * spec.blur_sigma;
    cutoff_ = 6.0 * std::sqrt(s_max2);
    cell_ = cutoff_;
    nx_ = std::max(1, static_cast<int>(std::ceil(wx / cell_)));
    ny_ = std::max(1, static_cast<int>(std::ceil(wy / cell_)));
    cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    blobs_.reserve(count);
    for (long b = 0; b < count; ++b) {
      Blob bl;
      bl.c = Vec2{ux(rng), uy(rng)};
      const double r = ur(rng);
      const double amp = uc(rng);
      const double s2 = r * r + spec.blur_sigma * spec.blur_sigma;
      bl.inv2s2 = 1.0 / (2.0 * s2);
      bl.amp = amp * r * r / s2;
      blobs_.push_back(bl);
      cells_[cell_index(bl.c)].push_back(static_cast<int>(b));
    }
  }

  double operator()(const Vec2& p) const {
    double v = spec_.background;
    const int ci = std::clamp(static_cast<int>(std::floor((p.x() - x0_) / cell_)), 0, nx_ - 1);
    const int cj = std::clamp(static_cast<int>(std::floor((p.y() - y0_) / cell_)), 0, ny_ - 1);
    for (int j = std::max(0, cj - 1); j <= std::min(ny_ - 1, cj + 1); ++j)
      for (int i = std::max(0, ci - 1); i <= std::min(nx_ - 1, ci + 1); ++i)
        for (int b : cells_[static_cast<std::size_t>(j) * nx_ + i]) {
          const Blob& bl = blobs_[b];
          const double d2 = (p - bl.c).squaredNorm();
          if (d2 < cutoff_ * cutoff_) v += bl.amp * std::exp(-d2 * bl.inv2s2);
        }
    return std::clamp(v, 0.0, 255.0);
  }

  std::size_t blob_count() const { return blobs_.size(); }

 private:
  struct Blob {
    Vec2 c;
    double inv2s2;
    double amp;
  };
  std::size_t cell_index(const Vec2& c) const {
    const int i = std::clamp(static_cast<int>(std::floor((c.x() - x0_) / cell_)), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>(std::floor((c.y() - y0_) / cell_)), 0, ny_ - 1);
    return static_cast<std::size_t>(j) * nx_ + i;
  }

  SpeckleSpec spec_;
  std::vector<Blob> blobs_;
  std::vector<std::vector<int>> cells_;
  double x0_ = 0, y0_ = 0, cell_ = 1, cutoff_ = 1;
  int nx_ = 1, ny_ = 1;
};

/// Speckle image sampled at pixel centers (unit pixels, origin at pixel 0).
inline Image generate_speckle(const SpeckleSpec& spec, int width, int height) {
  ImageGeometry g;
  g.width = width;
  g.height = height;
  Image img(g);
  const SpeckleField field(spec, width, height);
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) img(i, j) = field(Vec2{double(i), double(j)});
  return img;
}

// ---------------------------------------------------------------------------
// Displacement transfer

/// Displacements at pixel centers; `defined` marks pixels that were evaluated.
struct PixelDisplacement {
  ImageGeometry geometry;
  std::vector<Vec2> values;
  PixelMask defined;
};

/// Element and local coordinates of a fixed set of pixels in a fixed mesh, so
/// repeated transfers reduce to shape-function sums.
class RasterPlan {
 public:
  RasterPlan(const PointLocator& locator, const ImageGeometry& grid, const PixelMask* mask = nullptr)
      : grid_(grid) {
    if (mask && mask->size() != grid.size()) throw GeometryMismatch("mask size differs from the grid");
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (mask && !(*mask)[k]) continue;
      pixels_.push_back(static_cast<int>(k));
      locations_.push_back(locator.locate(grid.center(k)));
    }
  }

  const ImageGeometry& grid() const { return grid_; }
  const std::vector<int>& pixels() const { return pixels_; }
  const std::vector<ElementLocation>& locations() const { return locations_; }

  void apply(const DisplacementField& u, std::vector<Vec2>& out) const {
    out.resize(pixels_.size());
    for (std::size_t k = 0; k < pixels_.size(); ++k) out[k] = u.interpolate(locations_[k]);
  }

  PixelDisplacement apply(const DisplacementField& u) const {
    PixelDisplacement pd{grid_, std::vector<Vec2>(grid_.size(), Vec2::Zero()), PixelMask(grid_.size(), 0)};
    for (std::size_t k = 0; k < pixels_.size(); ++k) {
      pd.values[pixels_[k]] = u.interpolate(locations_[k]);
      pd.defined[pixels_[k]] = 1;
    }
    return pd;
  }

 private:
  ImageGeometry grid_;
  std::vector<int> pixels_;
  std::vector<ElementLocation> locations_;
};

/// evaluate_field at every (masked) pixel center; throws PointOutsideMesh.
inline PixelDisplacement rasterize_displacement(const DisplacementField& u, const ImageGeometry& grid,
                                                const PixelMask* mask = nullptr) {
  const PointLocator locator(u.mesh_ptr());
  return RasterPlan(locator, grid, mask).apply(u);
}

// ---------------------------------------------------------------------------
// Bicubic sampling: separable piecewise-cubic convolution on a 6-sample
// stencil (Keys' fourth-order kernel). The kernel is C1, interpolates the
// samples and reproduces polynomials of degree <= 3 in each coordinate.

namespace detail {

inline double keys6(double s) {
  s = std::abs(s);
  if (s < 1.0) return (4.0 / 3.0 * s - 7.0 / 3.0) * s * s + 1.0;
  if (s < 2.0) return ((-7.0 / 12.0 * s + 3.0) * s - 59.0 / 12.0) * s + 2.5;
  if (s < 3.0) return ((1.0 / 12.0 * s - 2.0 / 3.0) * s + 7.0 / 4.0) * s - 1.5;
  return 0.0;
}

/// Weights of samples floor(p) - 2 .. floor(p) + 3 for fractional part t.
inline std::array<double, 6> cubic_weights(double t) {
  if (t == 0.0) return {0.0, 0.0, 1.0, 0.0, 0.0, 0.0};
  return {keys6(t + 2.0), keys6(t + 1.0), keys6(t), keys6(1.0 - t), keys6(2.0 - t), keys6(3.0 - t)};
}

}  // namespace detail

inline constexpr int kStencilBefore = 2;  // samples left of floor(p)
inline constexpr int kStencilAfter = 3;   // samples right of floor(p)

/// Samples `img` at pixel coordinates (px, py). Stencil indices outside the
/// image are clamped to the edge and reported through `valid`.
inline double sample_bicubic(const Image& img, double px, double py, bool& valid) {
  const double fx = std::floor(px), fy = std::floor(py);
  const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
  const auto wx = detail::cubic_weights(px - fx);
  const auto wy = detail::cubic_weights(py - fy);
  const int w = img.width(), h = img.height();
  valid = ix - kStencilBefore >= 0 && ix + kStencilAfter < w && iy - kStencilBefore >= 0 && iy + kStencilAfter < h;
  double v = 0.0;
  if (valid) {
    for (int b = 0; b < 6; ++b) {
      if (wy[b] == 0.0) continue;
      const double* row = img.values.data() + static_cast<std::size_t>(iy - kStencilBefore + b) * w + (ix - kStencilBefore);
      double r = 0.0;
      for (int a = 0; a < 6; ++a) r += wx[a] * row[a];
      v += wy[b] * r;
    }
    return v;
  }
  for (int b = 0; b < 6; ++b) {
    if (wy[b] == 0.0) continue;
    const int jj = std::clamp(iy - kStencilBefore + b, 0, h - 1);
    double r = 0.0;
    for (int a = 0; a < 6; ++a) r += wx[a] * img(std::clamp(ix - kStencilBefore + a, 0, w - 1), jj);
    v += wy[b] * r;
  }
  return v;
}

struct WarpResult {
  Image image;
  PixelMask valid;
};

/// output(X) = f(X + u(X)) at every pixel where u is defined.
inline WarpResult warp_image(const Image& f, const PixelDisplacement& u) {
  if (!(u.geometry == f.geometry)) throw GeometryMismatch("displacement grid differs from the image grid");
  WarpResult out{Image(f.geometry), PixelMask(f.geometry.size(), 0)};
  const double inv = 1.0 / f.geometry.pixel_size;
  for (int j = 0; j < f.height(); ++j)
    for (int i = 0; i < f.width(); ++i) {
      const std::size_t k = f.geometry.index(i, j);
      if (!u.defined[k]) continue;
      bool ok = false;
      out.image.values[k] = sample_bicubic(f, i + u.values[k].x() * inv, j + u.values[k].y() * inv, ok);
      out.valid[k] = ok ? 1 : 0;
    }
  return out;
}

inline Image add_noise(const Image& img, double sigma_eta, std::uint64_t seed) {
  if (!(sigma_eta >= 0.0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  Image out = img;
  if (sigma_eta == 0.0) return out;
  Rng rng(derive_seed(seed, "image-noise"));
  std::normal_distribution<double> n(0.0, sigma_eta);
  for (double& v : out.values) v += n(rng);
  return out;
}

// ---------------------------------------------------------------------------
// I/O. PGM rows are written top (largest y) first.

inline void write_pgm(std::ostream& os, const Image& img) {
  os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> row(img.width());
  for (int j = img.height() - 1; j >= 0; --j) {
    for (int i = 0; i < img.width(); ++i)
      row[i] = static_cast<unsigned char>(std::clamp(std::lround(img(i, j)), 0L, 255L));
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

inline Image read_pgm(std::istream& is) {
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  if (magic != "P5" || w <= 0 || h <= 0 || maxv != 255) throw ImageFormatError("not an 8-bit binary PGM");
  is.get();
  ImageGeometry g;
  g.width = w;
  g.height = h;
  Image img(g);
  std::vector<unsigned char> row(w);
  for (int j = h - 1; j >= 0; --j) {
    if (!is.read(reinterpret_cast<char*>(row.data()), w)) throw ImageFormatError("truncated PGM");
    for (int i = 0; i < w; ++i) img(i, j) = row[i];
  }
  return img;
}

inline constexpr char kRawMagic[8] = {'B', 'D', 'I', 'C', 'I', 'M', 'G', '1'};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ImageFormatError("truncated header");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
}  // namespace detail

/// Lossless raw format: 8-byte magic, u32 width, u32 height (little endian),
/// then width*height little-endian float64 values, row by row.
inline void write_raw(std::ostream& os, const Image& img) {
  os.write(kRawMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(img.width()));
  detail::put_u32(os, static_cast<std::uint32_t>(img.height()));
  for (double v : img.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline Image read_raw(std::istream& is, const ImageGeometry* geometry = nullptr) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kRawMagic, 8) != 0) throw ImageFormatError("bad raw image magic");
  ImageGeometry g = geometry ? *geometry : ImageGeometry{};
  const auto w = detail::get_u32(is), h = detail::get_u32(is);
  if (geometry && (static_cast<int>(w) != g.width || static_cast<int>(h) != g.height))
    throw GeometryMismatch("raw image size differs from the expected geometry");
  g.width = static_cast<int>(w);
  g.height = static_cast<int>(h);
  Image img(g);
  for (double& v : img.values) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw ImageFormatError("truncated raw image");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t(b[k]) << (8 * k);
    std::memcpy(&v, &bits, 8);
  }
  return img;
}

}  // namespace bayesdic

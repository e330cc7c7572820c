#pragma once

// Two-phase microstructure (stiff circular inclusions in a matrix), structured
// quadratic-triangle meshes with per-Gauss-point phase labels, MVE extraction,
// point location, and the plain-text mesh format.

#include "bayesdic/core.hpp"
#include "bayesdic/element.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bayesdic {

// ---------------------------------------------------------------------------
// Microstructure

struct Inclusion {
  Vec2 center;
  double diameter = 1.0;

  double radius() const { return 0.5 * diameter; }
  bool operator==(const Inclusion& o) const { return center == o.center && diameter == o.diameter; }
};

/// Inclusions inside a rectangular domain. A microstructure produced by
/// clip_microstructure() may hold inclusions that are cut by the domain edge.
struct Microstructure {
  Rect domain;
  std::vector<Inclusion> inclusions;
  double min_gap = 0.0;
  std::uint64_t seed = 0;
};

/// Random sequential addition of `count` non-overlapping disks with a minimum
/// clearance `min_gap`, every disk fully inside [0,w] x [0,h].
inline Microstructure generate_microstructure(Vec2 domain_size, int count, double diameter,
                                              double min_gap, std::uint64_t seed,
                                              long max_attempts = 2'000'000) {
  if (count < 0) throw std::invalid_argument("generate_microstructure: count must be >= 0");
  if (!(diameter > 0.0)) throw std::invalid_argument("generate_microstructure: diameter must be > 0");
  if (!(min_gap >= 0.0)) throw std::invalid_argument("generate_microstructure: min_gap must be >= 0");
  const double r = 0.5 * diameter;
  if (count > 0 && (domain_size.x() < diameter || domain_size.y() < diameter))
    throw PackingInfeasible("domain smaller than one inclusion");

  Microstructure m;
  m.domain = Rect{0.0, 0.0, domain_size.x(), domain_size.y()};
  m.min_gap = min_gap;
  m.seed = seed;
  m.inclusions.reserve(static_cast<std::size_t>(count));

  Rng rng(derive_seed(seed, "microstructure"));
  std::uniform_real_distribution<double> ux(r, domain_size.x() - r);
  std::uniform_real_distribution<double> uy(r, domain_size.y() - r);
  const double min_dist = diameter + min_gap;

  long attempts = 0;
  while (static_cast<int>(m.inclusions.size()) < count) {
    if (attempts++ >= max_attempts)
      throw PackingInfeasible("rejection budget exhausted after placing " +
                              std::to_string(m.inclusions.size()) + " of " +
                              std::to_string(count) + " inclusions");
    const Vec2 c{ux(rng), uy(rng)};
    const bool clear = std::none_of(m.inclusions.begin(), m.inclusions.end(), [&](const Inclusion& o) {
      return (o.center - c).norm() < min_dist;
    });
    if (clear) m.inclusions.push_back({c, diameter});
  }
  return m;
}

/// Phase indicator: 1 inside the closed disk of any inclusion, 0 in the matrix.
inline int indicator(const Microstructure& micro, const Vec2& X) {
  for (const auto& inc : micro.inclusions) {
    const double r = inc.radius();
    if ((X - inc.center).squaredNorm() <= r * r) return 1;
  }
  return 0;
}

/// Restrict to a window: keeps every inclusion whose disk meets the window.
inline Microstructure clip_microstructure(const Microstructure& micro, const Rect& window) {
  Microstructure out;
  out.domain = window;
  out.min_gap = micro.min_gap;
  out.seed = micro.seed;
  for (const auto& inc : micro.inclusions) {
    const double cx = std::clamp(inc.center.x(), window.x0, window.x1);
    const double cy = std::clamp(inc.center.y(), window.y0, window.y1);
    if ((Vec2{cx, cy} - inc.center).squaredNorm() <= inc.radius() * inc.radius()) out.inclusions.push_back(inc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh

enum class Phase : std::uint8_t { matrix = 1, inclusion = 2 };

struct Mesh {
  Rect domain;
  std::vector<Vec2> nodes;
  std::vector<std::array<int, tri6::kNodes>> elements;
  // Counter-clockwise loop over every node on the outer boundary, starting at
  // the node closest to the lower-left corner; arclength[i] belongs to
  // boundary_nodes[i] (arclength[0] == 0).
  std::vector<int> boundary_nodes;
  std::vector<double> boundary_arclength;
  double boundary_length = 0.0;
  // Loop positions where the boundary turns (the corners of a rectangle).
  std::vector<int> boundary_anchors;
  std::vector<std::array<Phase, tri6::kGaussPoints>> gauss_material;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t element_count() const { return elements.size(); }

  std::array<Vec2, tri6::kNodes> element_coords(std::size_t e) const {
    std::array<Vec2, tri6::kNodes> X;
    for (int a = 0; a < tri6::kNodes; ++a) X[a] = nodes[elements[e][a]];
    return X;
  }

  Vec2 gauss_point(std::size_t e, int q) const {
    return tri6::map(element_coords(e), tri6::kGauss[q].xi, tri6::kGauss[q].eta);
  }
};

namespace detail {

inline void build_boundary_loop(Mesh& mesh) {
  // A boundary edge belongs to exactly one element. Elements are CCW, so the
  // element's own edge direction traverses the outer boundary CCW as well.
  std::map<std::pair<int, int>, int> count;
  struct Edge {
    int from, mid, to;
  };
  std::vector<Edge> edges;
  static constexpr int kEdge[3][3] = {{0, 3, 1}, {1, 4, 2}, {2, 5, 0}};
  for (const auto& el : mesh.elements) {
    for (const auto& ed : kEdge) {
      const int a = el[ed[0]], b = el[ed[2]];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  }
  std::map<int, Edge> next;
  for (const auto& el : mesh.elements) {
    for (const auto& ed : kEdge) {
      const int a = el[ed[0]], m = el[ed[1]], b = el[ed[2]];
      if (count[{std::min(a, b), std::max(a, b)}] == 1) {
        if (next.count(a)) throw MeshDegenerate("boundary is not a simple closed loop");
        next[a] = Edge{a, m, b};
      }
    }
  }
  if (next.empty()) throw MeshDegenerate("mesh has no boundary");

  int start = next.begin()->first;
  auto key = [&](int n) { return std::pair{mesh.nodes[n].x() + mesh.nodes[n].y(), mesh.nodes[n].x()}; };
  for (const auto& [a, e] : next)
    if (key(a) < key(start)) start = a;

  mesh.boundary_nodes.clear();
  int cur = start;
  do {
    auto it = next.find(cur);
    if (it == next.end()) throw MeshDegenerate("boundary loop is open");
    mesh.boundary_nodes.push_back(it->second.from);
    mesh.boundary_nodes.push_back(it->second.mid);
    cur = it->second.to;
    if (mesh.boundary_nodes.size() > 2 * next.size()) throw MeshDegenerate("boundary loop does not close");
  } while (cur != start);
  if (mesh.boundary_nodes.size() != 2 * next.size())
    throw MeshDegenerate("boundary consists of more than one loop");

  const std::size_t nb = mesh.boundary_nodes.size();
  mesh.boundary_arclength.assign(nb, 0.0);
  for (std::size_t i = 1; i < nb; ++i)
    mesh.boundary_arclength[i] = mesh.boundary_arclength[i - 1] +
        (mesh.nodes[mesh.boundary_nodes[i]] - mesh.nodes[mesh.boundary_nodes[i - 1]]).norm();
  mesh.boundary_length = mesh.boundary_arclength.back() +
      (mesh.nodes[mesh.boundary_nodes.front()] - mesh.nodes[mesh.boundary_nodes.back()]).norm();

  mesh.boundary_anchors.clear();
  for (std::size_t i = 0; i < nb; ++i) {
    const Vec2 p = mesh.nodes[mesh.boundary_nodes[(i + nb - 1) % nb]];
    const Vec2 c = mesh.nodes[mesh.boundary_nodes[i]];
    const Vec2 n = mesh.nodes[mesh.boundary_nodes[(i + 1) % nb]];
    const Vec2 d0 = (c - p).normalized(), d1 = (n - c).normalized();
    if (std::abs(d0.x() * d1.y() - d0.y() * d1.x()) > 1e-9) mesh.boundary_anchors.push_back(static_cast<int>(i));
  }
}

inline void check_jacobians(const Mesh& mesh) {
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto X = mesh.element_coords(e);
    for (const auto& gp : tri6::kGauss) {
      if (!(tri6::jacobian(X, tri6::shape_gradients(gp.xi, gp.eta)).determinant() > 0.0))
        throw MeshDegenerate("non-positive Jacobian in element " + std::to_string(e));
    }
  }
}

inline void assign_materials(Mesh& mesh, const Microstructure& micro) {
  mesh.gauss_material.resize(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e)
    for (int q = 0; q < tri6::kGaussPoints; ++q)
      mesh.gauss_material[e][q] = indicator(micro, mesh.gauss_point(e, q)) ? Phase::inclusion : Phase::matrix;
}

inline Mesh structured_mesh(const Rect& domain, int nx, int ny) {
  Mesh mesh;
  mesh.domain = domain;
  const int lx = 2 * nx + 1, ly = 2 * ny + 1;
  mesh.nodes.reserve(static_cast<std::size_t>(lx) * ly);
  for (int j = 0; j < ly; ++j)
    for (int i = 0; i < lx; ++i)
      mesh.nodes.emplace_back(domain.x0 + domain.width() * i / (2.0 * nx),
                              domain.y0 + domain.height() * j / (2.0 * ny));
  auto id = [lx](int i, int j) { return j * lx + i; };
  mesh.elements.reserve(2 * static_cast<std::size_t>(nx) * ny);
  for (int cy = 0; cy < ny; ++cy) {
    for (int cx = 0; cx < nx; ++cx) {
      const int i = 2 * cx, j = 2 * cy;
      // Diagonal from the south-west to the north-east corner.
      mesh.elements.push_back({id(i, j), id(i + 2, j), id(i + 2, j + 2), id(i + 1, j), id(i + 2, j + 1),
                               id(i + 1, j + 1)});
      mesh.elements.push_back({id(i, j), id(i + 2, j + 2), id(i, j + 2), id(i + 1, j + 1), id(i + 1, j + 2),
                               id(i, j + 1)});
    }
  }
  return mesh;
}

inline int cells_for(double length, double h) {
  return std::max(1, static_cast<int>(std::ceil(length / h - 1e-9)));
}

}  // namespace detail

/// Structured quadratic-triangle mesh of micro.domain with cells of at most
/// `target_edge_length`; materials are sampled at the Gauss points, so the mesh
/// does not conform to inclusion boundaries.
inline Mesh generate_mesh(const Microstructure& micro, double target_edge_length) {
  if (!(target_edge_length > 0.0)) throw std::invalid_argument("generate_mesh: edge length must be > 0");
  Mesh mesh = detail::structured_mesh(micro.domain, detail::cells_for(micro.domain.width(), target_edge_length),
                                      detail::cells_for(micro.domain.height(), target_edge_length));
  detail::check_jacobians(mesh);
  detail::assign_materials(mesh, micro);
  detail::build_boundary_loop(mesh);
  return mesh;
}

struct MveOptions {
  double edge_length = 0.25;
  // When > 0, overrides edge_length: cells are chosen so that the boundary
  // loop carries exactly this many nodes (must be a multiple of 4).
  int boundary_node_count = 0;
};

/// Fresh mesh of `window` (which must lie in the DNS domain) carrying the same
/// microstructure. Boundary nodes are equally spaced along each side.
inline Mesh extract_mve(const Mesh& dns_mesh, const Microstructure& micro, const Rect& window,
                        const MveOptions& opts = {}) {
  if (!(window.width() > 0.0 && window.height() > 0.0)) throw WindowOutsideDomain("empty MVE window");
  if (!dns_mesh.domain.contains(window, 1e-12)) throw WindowOutsideDomain("MVE window leaves the DNS domain");
  int nx = 0, ny = 0;
  if (opts.boundary_node_count > 0) {
    if (opts.boundary_node_count % 4 != 0 || opts.boundary_node_count < 8)
      throw std::invalid_argument("extract_mve: boundary node count must be a multiple of 4 and >= 8");
    const int half = opts.boundary_node_count / 4;  // nx + ny
    nx = std::clamp(static_cast<int>(std::lround(half * window.width() / (window.width() + window.height()))), 1,
                    half - 1);
    ny = half - nx;
  } else {
    nx = detail::cells_for(window.width(), opts.edge_length);
    ny = detail::cells_for(window.height(), opts.edge_length);
  }
  Mesh mesh = detail::structured_mesh(window, nx, ny);
  detail::check_jacobians(mesh);
  detail::assign_materials(mesh, clip_microstructure(micro, window));
  detail::build_boundary_loop(mesh);
  return mesh;
}

// ---------------------------------------------------------------------------
// Point location

/// Where a physical point sits inside a mesh.
struct ElementLocation {
  int element = -1;
  double xi = 0.0;
  double eta = 0.0;
};

/// Inverts an element's isoparametric map by Newton iteration.
inline bool invert_map(const std::array<Vec2, tri6::kNodes>& X, const Vec2& p, double& xi, double& eta) {
  xi = eta = 1.0 / 3.0;
  for (int it = 0; it < 30; ++it) {
    const Vec2 r = p - tri6::map(X, xi, eta);
    const Mat2 J = tri6::jacobian(X, tri6::shape_gradients(xi, eta));
    const Vec2 d = J.inverse() * r;
    xi += d.x();
    eta += d.y();
    if (d.lpNorm<Eigen::Infinity>() < 1e-15) return true;
  }
  return std::isfinite(xi) && std::isfinite(eta);
}

/// Bucket grid over element bounding boxes. Ties on shared edges resolve to the
/// lowest element index.
class PointLocator {
 public:
  explicit PointLocator(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh)) {
    const Rect& d = mesh_->domain;
    const auto ne = mesh_->element_count();
    const int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(ne))));
    nx_ = side;
    ny_ = side;
    dx_ = d.width() / nx_;
    dy_ = d.height() / ny_;
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    boxes_.resize(ne);
    const double pad = 1e-9 * std::max(d.width(), d.height());
    for (std::size_t e = 0; e < ne; ++e) {
      const auto X = mesh_->element_coords(e);
      Rect b{X[0].x(), X[0].y(), X[0].x(), X[0].y()};
      for (const auto& p : X) {
        b.x0 = std::min(b.x0, p.x());
        b.x1 = std::max(b.x1, p.x());
        b.y0 = std::min(b.y0, p.y());
        b.y1 = std::max(b.y1, p.y());
      }
      b = Rect{b.x0 - pad, b.y0 - pad, b.x1 + pad, b.y1 + pad};
      boxes_[e] = b;
      for (int j = cell_y(b.y0); j <= cell_y(b.y1); ++j)
        for (int i = cell_x(b.x0); i <= cell_x(b.x1); ++i)
          buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(e));
    }
  }

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }

  /// Returns element -1 when the point is outside every element.
  ElementLocation find(const Vec2& p) const {
    const double tol = 1e-10;
    const Rect& d = mesh_->domain;
    const double scale = std::max(d.width(), d.height());
    if (!d.contains(p, tol * scale)) return {};
    const auto& bucket = buckets_[static_cast<std::size_t>(cell_y(p.y())) * nx_ + cell_x(p.x())];
    for (int e : bucket) {
      if (!boxes_[e].contains(p)) continue;
      double xi, eta;
      if (invert_map(mesh_->element_coords(e), p, xi, eta) && tri6::inside(xi, eta, tol)) return {e, xi, eta};
    }
    return {};
  }

  ElementLocation locate(const Vec2& p) const {
    auto loc = find(p);
    if (loc.element < 0) {
      std::ostringstream os;
      os << "point (" << p.x() << ", " << p.y() << ") is outside the mesh";
      throw PointOutsideMesh(os.str());
    }
    return loc;
  }

 private:
  int cell_x(double x) const {
    return std::clamp(static_cast<int>(std::floor((x - mesh_->domain.x0) / dx_)), 0, nx_ - 1);
  }
  int cell_y(double y) const {
    return std::clamp(static_cast<int>(std::floor((y - mesh_->domain.y0) / dy_)), 0, ny_ - 1);
  }

  std::shared_ptr<const Mesh> mesh_;
  int nx_ = 1, ny_ = 1;
  double dx_ = 1.0, dy_ = 1.0;
  std::vector<std::vector<int>> buckets_;
  std::vector<Rect> boxes_;
};

// ---------------------------------------------------------------------------
// Text format:
//   nodes N elements E
//   id x y                                   (N lines)
//   id n1 n2 n3 n4 n5 n6 mat_q1 mat_q2 mat_q3 (E lines)

inline void write_mesh(std::ostream& os, const Mesh& mesh) {
  os << "nodes " << mesh.nodes.size() << " elements " << mesh.elements.size() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
    os << i << ' ' << mesh.nodes[i].x() << ' ' << mesh.nodes[i].y() << '\n';
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    os << e;
    for (int n : mesh.elements[e]) os << ' ' << n;
    for (auto ph : mesh.gauss_material[e]) os << ' ' << static_cast<int>(ph);
    os << '\n';
  }
}

inline Mesh read_mesh(std::istream& is) {
  std::string line, w1, w2;
  std::size_t nn = 0, ne = 0;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw MeshFormatError("mesh line " + std::to_string(lineno) + ": " + what);
  };
  if (!std::getline(is, line)) fail("missing header");
  ++lineno;
  {
    std::istringstream hs(line);
    if (!(hs >> w1 >> nn >> w2 >> ne) || w1 != "nodes" || w2 != "elements") fail("bad header '" + line + "'");
  }
  Mesh mesh;
  mesh.nodes.resize(nn);
  std::vector<bool> seen(nn, false);
  for (std::size_t i = 0; i < nn; ++i) {
    if (!std::getline(is, line)) fail("unexpected end of file in node block");
    ++lineno;
    std::istringstream ls(line);
    long id;
    double x, y;
    if (!(ls >> id >> x >> y)) fail("expected 'id x y'");
    if (id < 0 || static_cast<std::size_t>(id) >= nn || seen[id]) fail("bad node id " + std::to_string(id));
    seen[id] = true;
    mesh.nodes[id] = Vec2{x, y};
  }
  mesh.elements.resize(ne);
  mesh.gauss_material.resize(ne);
  std::vector<bool> eseen(ne, false);
  for (std::size_t e = 0; e < ne; ++e) {
    if (!std::getline(is, line)) fail("unexpected end of file in element block");
    ++lineno;
    std::istringstream ls(line);
    long id;
    std::array<long, 6> n{};
    std::array<int, 3> m{};
    if (!(ls >> id)) fail("expected element id");
    for (auto& v : n)
      if (!(ls >> v)) fail("expected 6 node indices");
    for (auto& v : m)
      if (!(ls >> v)) fail("expected 3 material labels");
    if (id < 0 || static_cast<std::size_t>(id) >= ne || eseen[id]) fail("bad element id " + std::to_string(id));
    eseen[id] = true;
    for (int a = 0; a < 6; ++a) {
      if (n[a] < 0 || static_cast<std::size_t>(n[a]) >= nn) fail("node index out of range");
      mesh.elements[id][a] = static_cast<int>(n[a]);
    }
    for (int q = 0; q < 3; ++q) {
      if (m[q] != 1 && m[q] != 2) fail("material label must be 1 or 2");
      mesh.gauss_material[id][q] = static_cast<Phase>(m[q]);
    }
  }
  if (mesh.nodes.empty()) fail("mesh has no nodes");
  double x0 = mesh.nodes[0].x(), x1 = x0, y0 = mesh.nodes[0].y(), y1 = y0;
  for (const auto& p : mesh.nodes) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  mesh.domain = Rect{x0, y0, x1, y1};
  detail::check_jacobians(mesh);
  detail::build_boundary_loop(mesh);
  return mesh;
}

inline void save_mesh(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_mesh(os, mesh);
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_mesh(is);
}

}  // namespace bayesdic

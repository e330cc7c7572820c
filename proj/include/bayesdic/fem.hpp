#pragma once

// Total Lagrangian FEM for the two-phase Neo-Hookean solid on quadratic
// triangles, solved by incremental Newton-Raphson under Dirichlet data.

#include "bayesdic/geometry.hpp"
#include "bayesdic/material.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

namespace bayesdic {

/// Nodal displacements on a mesh; interpolated with the element shape functions.
class DisplacementField {
 public:
  DisplacementField() = default;
  DisplacementField(std::shared_ptr<const Mesh> mesh, std::vector<Vec2> values)
      : mesh_(std::move(mesh)), values_(std::move(values)) {
    if (values_.size() != mesh_->node_count())
      throw std::invalid_argument("DisplacementField: one value per node required");
  }
  explicit DisplacementField(std::shared_ptr<const Mesh> mesh)
      : DisplacementField(mesh, std::vector<Vec2>(mesh->node_count(), Vec2::Zero())) {}

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
  const std::vector<Vec2>& values() const { return values_; }
  std::vector<Vec2>& values() { return values_; }
  const Vec2& operator[](std::size_t node) const { return values_[node]; }

  Vec2 interpolate(const ElementLocation& loc) const {
    const auto N = tri6::shape(loc.xi, loc.eta);
    const auto& el = mesh_->elements[loc.element];
    Vec2 u = Vec2::Zero();
    for (int a = 0; a < tri6::kNodes; ++a) u += N[a] * values_[el[a]];
    return u;
  }

 private:
  std::shared_ptr<const Mesh> mesh_;
  std::vector<Vec2> values_;
};

/// Point evaluation that reuses one PointLocator.
class FieldEvaluator {
 public:
  explicit FieldEvaluator(std::shared_ptr<const Mesh> mesh) : locator_(std::move(mesh)) {}
  const PointLocator& locator() const { return locator_; }
  Vec2 operator()(const DisplacementField& u, const Vec2& X) const { return u.interpolate(locator_.locate(X)); }

 private:
  PointLocator locator_;
};

inline Vec2 evaluate_field(const DisplacementField& u, const Vec2& X) {
  return FieldEvaluator(u.mesh_ptr())(u, X);
}

inline DisplacementField affine_field(std::shared_ptr<const Mesh> mesh, const Mat2& F_macro) {
  std::vector<Vec2> v;
  v.reserve(mesh->node_count());
  const Mat2 G = F_macro - Mat2::Identity();
  for (const auto& X : mesh->nodes) v.push_back(G * X);
  return DisplacementField(std::move(mesh), std::move(v));
}

inline void write_displacement(std::ostream& os, const DisplacementField& u) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < u.values().size(); ++i) os << i << ' ' << u[i].x() << ' ' << u[i].y() << '\n';
}

inline DisplacementField read_displacement(std::istream& is, std::shared_ptr<const Mesh> mesh) {
  std::vector<Vec2> v(mesh->node_count(), Vec2::Zero());
  std::vector<bool> seen(v.size(), false);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long id;
    double x, y;
    if (!(ls >> id >> x >> y) || id < 0 || static_cast<std::size_t>(id) >= v.size() || seen[id])
      throw MeshFormatError("displacement line " + std::to_string(lineno) + ": expected 'id ux uy'");
    seen[id] = true;
    v[id] = Vec2{x, y};
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw MeshFormatError("displacement file does not cover every node");
  return DisplacementField(std::move(mesh), std::move(v));
}

struct SolverOptions {
  int n_increments = 4;
  double newton_tol = 1e-9;
  int max_newton_iters = 25;

  void validate() const {
    if (n_increments < 1) throw std::invalid_argument("SolverOptions: n_increments must be >= 1");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("SolverOptions: newton_tol must be > 0");
    if (max_newton_iters < 1) throw std::invalid_argument("SolverOptions: max_newton_iters must be >= 1");
  }
};

/// Convergence record of one solve; residual norms per increment, the first
/// entry being the predictor's out-of-balance force.
struct SolveStats {
  std::vector<std::vector<double>> residuals;
  int factorizations = 0;
  int halvings = 0;
};

/// Prescribed displacements on a node subset.
struct DirichletData {
  std::vector<int> nodes;
  std::vector<Vec2> values;
};

/// Newton-Raphson solver for a fixed mesh and fixed set of constrained nodes.
/// Holds the sparsity pattern and symbolic factorization, so repeated solves
/// (different moduli or boundary values) only pay for numeric work. Not
/// thread-safe; use one instance per worker.
class NonlinearSolver {
 public:
  NonlinearSolver(std::shared_ptr<const Mesh> mesh, std::vector<int> constrained_nodes)
      : mesh_(std::move(mesh)), constrained_nodes_(std::move(constrained_nodes)) {
    const int ndof = 2 * static_cast<int>(mesh_->node_count());
    dof_free_.assign(ndof, -1);
    dof_con_.assign(ndof, -1);
    for (std::size_t i = 0; i < constrained_nodes_.size(); ++i) {
      const int n = constrained_nodes_[i];
      if (n < 0 || static_cast<std::size_t>(n) >= mesh_->node_count())
        throw InvalidDirichletData("constrained node index out of range");
      if (dof_con_[2 * n] >= 0) throw InvalidDirichletData("node constrained twice");
      dof_con_[2 * n] = 2 * static_cast<int>(i);
      dof_con_[2 * n + 1] = 2 * static_cast<int>(i) + 1;
    }
    for (int d = 0; d < ndof; ++d)
      if (dof_con_[d] < 0) dof_free_[d] = nfree_++;
    precompute_geometry();
    build_pattern();
  }

  const Mesh& mesh() const { return *mesh_; }
  const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
  const std::vector<int>& constrained_nodes() const { return constrained_nodes_; }
  int free_dofs() const { return nfree_; }

  /// Solves for the equilibrium field with the constrained nodes at
  /// `prescribed` (same order as constrained_nodes()). Loading runs in
  /// n_increments proportional steps from `start` (or from zero).
  DisplacementField solve(const MaterialParams& mat, const std::vector<Vec2>& prescribed,
                          const SolverOptions& opts, const DisplacementField* start = nullptr,
                          SolveStats* stats = nullptr) {
    opts.validate();
    mat.validate();
    if (prescribed.size() != constrained_nodes_.size())
      throw InvalidDirichletData("one prescribed value per constrained node required");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(mesh_->node_count()));
    if (start) {
      if (start->values().size() != mesh_->node_count()) throw InvalidDirichletData("start field has wrong size");
      for (std::size_t n = 0; n < mesh_->node_count(); ++n) u.segment<2>(2 * n) = (*start)[n];
    }
    Eigen::VectorXd b0(2 * constrained_nodes_.size()), b1(2 * constrained_nodes_.size());
    for (std::size_t i = 0; i < constrained_nodes_.size(); ++i) {
      b0.segment<2>(2 * i) = u.segment<2>(2 * constrained_nodes_[i]);
      b1.segment<2>(2 * i) = prescribed[i];
    }
    SolveStats local;
    SolveStats& st = stats ? *stats : local;
    for (int k = 1; k <= opts.n_increments; ++k) {
      const Eigen::VectorXd prev = b0 + (b1 - b0) * (static_cast<double>(k - 1) / opts.n_increments);
      const Eigen::VectorXd next = b0 + (b1 - b0) * (static_cast<double>(k) / opts.n_increments);
      const Eigen::VectorXd saved = u;
      try {
        increment(mat, u, next, opts, st);
      } catch (const ElementInverted&) {
        u = saved;
        halve(mat, u, prev, next, opts, st);
      } catch (const NewtonDiverged&) {
        u = saved;
        halve(mat, u, prev, next, opts, st);
      }
    }
    std::vector<Vec2> v(mesh_->node_count());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = u.segment<2>(2 * n);
    return DisplacementField(mesh_, std::move(v));
  }

  /// Out-of-balance force at the free DOFs (diagnostics and tests).
  Eigen::VectorXd residual(const MaterialParams& mat, const DisplacementField& field) {
    Eigen::VectorXd u(2 * static_cast<Eigen::Index>(mesh_->node_count()));
    for (std::size_t n = 0; n < mesh_->node_count(); ++n) u.segment<2>(2 * n) = field[n];
    Eigen::VectorXd R, abs;
    assemble(mat, u, R, abs, false, nullptr, nullptr);
    return R;
  }

 private:
  struct GaussData {
    std::array<Vec2, tri6::kNodes> dNdX;
    double weight;
  };

  void precompute_geometry() {
    const auto ne = mesh_->element_count();
    gauss_.resize(ne * tri6::kGaussPoints);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto X = mesh_->element_coords(e);
      for (int q = 0; q < tri6::kGaussPoints; ++q) {
        const auto& gp = tri6::kGauss[q];
        const auto dN = tri6::shape_gradients(gp.xi, gp.eta);
        const Mat2 J = tri6::jacobian(X, dN);
        const double detJ = J.determinant();
        if (!(detJ > 0.0)) throw MeshDegenerate("non-positive Jacobian in element " + std::to_string(e));
        const Mat2 Jinv = J.inverse();
        GaussData& g = gauss_[e * tri6::kGaussPoints + q];
        for (int a = 0; a < tri6::kNodes; ++a) g.dNdX[a] = Jinv.transpose() * dN[a];
        g.weight = gp.weight * detJ;
      }
    }
  }

  void build_pattern() {
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> trip;
    const auto ne = mesh_->element_count();
    trip.reserve(ne * 78);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto dofs = element_dofs(e);
      for (int a = 0; a < 12; ++a)
        for (int b = 0; b < 12; ++b) {
          const int ra = dof_free_[dofs[a]], cb = dof_free_[dofs[b]];
          if (ra >= 0 && cb >= 0 && ra >= cb) trip.emplace_back(ra, cb, 1.0);
        }
    }
    K_.resize(nfree_, nfree_);
    K_.setFromTriplets(trip.begin(), trip.end());
    K_.makeCompressed();
    slot_.assign(ne * 144, -1);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto dofs = element_dofs(e);
      for (int a = 0; a < 12; ++a)
        for (int b = 0; b < 12; ++b) {
          const int ra = dof_free_[dofs[a]], cb = dof_free_[dofs[b]];
          if (ra >= 0 && cb >= 0 && ra >= cb) {
            const int* begin = K_.innerIndexPtr() + K_.outerIndexPtr()[cb];
            const int* end = K_.innerIndexPtr() + K_.outerIndexPtr()[cb + 1];
            slot_[e * 144 + a * 12 + b] = static_cast<int>(std::lower_bound(begin, end, ra) - K_.innerIndexPtr());
          }
        }
    }
    if (nfree_ > 0) ldlt_.analyzePattern(K_);
  }

  std::array<int, 12> element_dofs(std::size_t e) const {
    std::array<int, 12> d;
    for (int a = 0; a < tri6::kNodes; ++a) {
      d[2 * a] = 2 * mesh_->elements[e][a];
      d[2 * a + 1] = 2 * mesh_->elements[e][a] + 1;
    }
    return d;
  }

  // Internal force at free DOFs (R), its absolute-sum scale, optionally the
  // tangent into K_ and the coupling K_fc * dc into `coupling`.
  void assemble(const MaterialParams& mat, const Eigen::VectorXd& u, Eigen::VectorXd& R, Eigen::VectorXd& abs,
                bool tangent, const Eigen::VectorXd* dc, Eigen::VectorXd* coupling) {
    R.setZero(nfree_);
    abs.setZero(nfree_);
    if (tangent) std::fill(K_.valuePtr(), K_.valuePtr() + K_.nonZeros(), 0.0);
    if (coupling) coupling->setZero(nfree_);
    const auto ne = mesh_->element_count();
    Eigen::Matrix<double, 12, 12> Ke;
    Eigen::Matrix<double, 12, 1> fe, ue;
    for (std::size_t e = 0; e < ne; ++e) {
      const auto dofs = element_dofs(e);
      for (int a = 0; a < 12; ++a) ue[a] = u[dofs[a]];
      fe.setZero();
      if (tangent) Ke.setZero();
      for (int q = 0; q < tri6::kGaussPoints; ++q) {
        const GaussData& g = gauss_[e * tri6::kGaussPoints + q];
        const int phase = static_cast<int>(mesh_->gauss_material[e][q]);
        const double G = mat.G(phase), K = mat.K(phase);
        Mat2 F = Mat2::Identity();
        for (int a = 0; a < tri6::kNodes; ++a) {
          F(0, 0) += ue[2 * a] * g.dNdX[a].x();
          F(0, 1) += ue[2 * a] * g.dNdX[a].y();
          F(1, 0) += ue[2 * a + 1] * g.dNdX[a].x();
          F(1, 1) += ue[2 * a + 1] * g.dNdX[a].y();
        }
        if (!(F.determinant() > 0.0))
          throw ElementInverted("element " + std::to_string(e) + " inverted (det F <= 0)");
        const Mat2 P = neo_hookean::first_pk_stress(F, G, K);
        for (int a = 0; a < tri6::kNodes; ++a) {
          fe[2 * a] += g.weight * (P(0, 0) * g.dNdX[a].x() + P(0, 1) * g.dNdX[a].y());
          fe[2 * a + 1] += g.weight * (P(1, 0) * g.dNdX[a].x() + P(1, 1) * g.dNdX[a].y());
        }
        if (tangent) {
          const Tangent A = neo_hookean::material_tangent(F, G, K);
          // B maps nodal displacements to flattened dF: rows (iJ), cols (a,i).
          Eigen::Matrix<double, 4, 12> B = Eigen::Matrix<double, 4, 12>::Zero();
          for (int a = 0; a < tri6::kNodes; ++a) {
            B(0, 2 * a) = g.dNdX[a].x();
            B(1, 2 * a) = g.dNdX[a].y();
            B(2, 2 * a + 1) = g.dNdX[a].x();
            B(3, 2 * a + 1) = g.dNdX[a].y();
          }
          Ke.noalias() += g.weight * (B.transpose() * (A * B));
        }
      }
      for (int a = 0; a < 12; ++a) {
        const int r = dof_free_[dofs[a]];
        if (r < 0) continue;
        R[r] += fe[a];
        abs[r] += std::abs(fe[a]);
        if (!tangent) continue;
        for (int b = 0; b < 12; ++b) {
          const int s = slot_[e * 144 + a * 12 + b];
          if (s >= 0) K_.valuePtr()[s] += Ke(a, b);
          if (coupling) {
            const int c = dof_con_[dofs[b]];
            if (c >= 0) (*coupling)[r] += Ke(a, b) * (*dc)[c];
          }
        }
      }
    }
  }

  void factorize(SolveStats& st) {
    ldlt_.factorize(K_);
    ++st.factorizations;
    if (ldlt_.info() != Eigen::Success) throw NewtonDiverged("tangent factorization failed");
  }

  void set_constrained(Eigen::VectorXd& u, const Eigen::VectorXd& b) const {
    for (std::size_t i = 0; i < constrained_nodes_.size(); ++i) u.segment<2>(2 * constrained_nodes_[i]) = b.segment<2>(2 * i);
  }

  void add_free(Eigen::VectorXd& u, const Eigen::VectorXd& d) const {
    for (std::size_t dof = 0; dof < dof_free_.size(); ++dof)
      if (dof_free_[dof] >= 0) u[dof] += d[dof_free_[dof]];
  }

  void increment(const MaterialParams& mat, Eigen::VectorXd& u, const Eigen::VectorXd& target, const SolverOptions& opts,
                 SolveStats& st) {
    Eigen::VectorXd current(target.size());
    for (std::size_t i = 0; i < constrained_nodes_.size(); ++i)
      current.segment<2>(2 * i) = u.segment<2>(2 * constrained_nodes_[i]);
    const Eigen::VectorXd dc = target - current;
    std::vector<double> history;
    if (nfree_ == 0) {
      set_constrained(u, target);
      st.residuals.push_back(history);
      return;
    }
    Eigen::VectorXd R, abs, coupling;
    assemble(mat, u, R, abs, true, &dc, &coupling);
    const Eigen::VectorXd rhs = -R - coupling;
    const double r_ref = rhs.norm();
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * abs.norm();
    history.push_back(r_ref);
    set_constrained(u, target);
    if (r_ref > floor) {
      factorize(st);
      add_free(u, ldlt_.solve(rhs));
    }
    for (int it = 0; it < opts.max_newton_iters; ++it) {
      assemble(mat, u, R, abs, true, nullptr, nullptr);
      const double r = R.norm();
      history.push_back(r);
      if (!std::isfinite(r)) break;
      if (r <= std::max(opts.newton_tol * r_ref, 1e3 * std::numeric_limits<double>::epsilon() * abs.norm())) {
        st.residuals.push_back(std::move(history));
        return;
      }
      factorize(st);
      add_free(u, ldlt_.solve(-R));
    }
    st.residuals.push_back(std::move(history));
    throw NewtonDiverged("Newton iteration did not converge in " + std::to_string(opts.max_newton_iters) +
                         " iterations");
  }

  void halve(const MaterialParams& mat, Eigen::VectorXd& u, const Eigen::VectorXd& from, const Eigen::VectorXd& to,
             const SolverOptions& opts, SolveStats& st) {
    ++st.halvings;
    increment(mat, u, 0.5 * (from + to), opts, st);
    increment(mat, u, to, opts, st);
  }

  std::shared_ptr<const Mesh> mesh_;
  std::vector<int> constrained_nodes_;
  std::vector<int> dof_free_, dof_con_;
  int nfree_ = 0;
  std::vector<GaussData> gauss_;
  Eigen::SparseMatrix<double> K_;
  std::vector<int> slot_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

/// Pure Dirichlet solve: every boundary node of the mesh must be prescribed.
inline DisplacementField solve(std::shared_ptr<const Mesh> mesh, const MaterialParams& mat,
                               const DirichletData& dirichlet, const SolverOptions& opts = {},
                               SolveStats* stats = nullptr) {
  if (dirichlet.nodes.size() != dirichlet.values.size())
    throw InvalidDirichletData("node and value lists differ in length");
  std::vector<int> sorted_bc = dirichlet.nodes, sorted_mesh = mesh->boundary_nodes;
  std::sort(sorted_bc.begin(), sorted_bc.end());
  std::sort(sorted_mesh.begin(), sorted_mesh.end());
  if (!std::includes(sorted_bc.begin(), sorted_bc.end(), sorted_mesh.begin(), sorted_mesh.end()))
    throw InvalidDirichletData("Dirichlet data must cover every boundary node");
  NonlinearSolver solver(std::move(mesh), dirichlet.nodes);
  return solver.solve(mat, dirichlet.values, opts, nullptr, stats);
}

/// Boundary values of the MVE problem in boundary-loop order.
inline DirichletData boundary_dirichlet(const Mesh& mesh, const std::vector<Vec2>& loop_values) {
  if (loop_values.size() != mesh.boundary_nodes.size())
    throw InvalidDirichletData("one value per boundary node required");
  return DirichletData{mesh.boundary_nodes, loop_values};
}

enum class LoadCase { tension, shear };

inline Mat2 macro_gradient(LoadCase test) {
  Mat2 F = Mat2::Identity();
  if (test == LoadCase::tension)
    F(0, 0) += 0.1;  // I + 0.1 e1 (x) e1
  else
    F(1, 0) += 0.1;  // I + 0.1 e2 (x) e1
  return F;
}

/// Nodes on the left and right edges, where the macroscopic
/// displacement (F - I) X is imposed; bottom and top stay traction-free.
inline std::vector<int> loaded_edge_nodes(const Mesh& mesh) {
  std::vector<int> out;
  const double tol = 1e-12 * std::max(mesh.domain.width(), mesh.domain.height());
  for (std::size_t n = 0; n < mesh.node_count(); ++n) {
    const double x = mesh.nodes[n].x();
    if (std::abs(x - mesh.domain.x0) <= tol || std::abs(x - mesh.domain.x1) <= tol) out.push_back(static_cast<int>(n));
  }
  return out;
}

inline DisplacementField solve_dns(std::shared_ptr<const Mesh> mesh, const MaterialParams& mat, LoadCase test,
                                   const SolverOptions& opts = {}, SolveStats* stats = nullptr) {
  const auto nodes = loaded_edge_nodes(*mesh);
  const Mat2 G = macro_gradient(test) - Mat2::Identity();
  std::vector<Vec2> values;
  values.reserve(nodes.size());
  for (int n : nodes) values.push_back(G * mesh->nodes[n]);
  NonlinearSolver solver(std::move(mesh), nodes);
  return solver.solve(mat, values, opts, nullptr, stats);
}

}  // namespace bayesdic

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "portsim/grid.hpp"
#include "portsim/mat.hpp"
#include "portsim/vec.hpp"

namespace portsim {

// ---------------------------------------------------------------- dense LU

/// Row-major dense LU with partial pivoting.
class DenseLu {
 public:
  DenseLu() = default;
  DenseLu(std::size_t n, std::vector<double> a);
  std::size_t size() const { return n_; }
  std::vector<double> solve(std::span<const double> b) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> lu_;
  std::vector<std::size_t> piv_;
};

// ---------------------------------------------------------- preconditioners

class Preconditioner {
 public:
  virtual ~Preconditioner() = default;
  /// z = M^{-1} r. r and z are distinct.
  virtual void apply(const DistVec& r, DistVec& z) = 0;
  virtual std::string name() const = 0;
};

enum class PcType { None, Jacobi, Lu, Mg };
enum class KspType { CG, BiCGstab, Chebyshev, Richardson };

class IdentityPc : public Preconditioner {
 public:
  void apply(const DistVec& r, DistVec& z) override { copy(r, z); }
  std::string name() const override { return "none"; }
};

class JacobiPc : public Preconditioner {
 public:
  explicit JacobiPc(const CsrMatrix& a);
  void apply(const DistVec& r, DistVec& z) override;
  std::string name() const override { return "jacobi"; }
  const DistVec& inverse_diagonal() const { return dinv_; }

 private:
  DistVec dinv_;
};

/// Redundant direct solve: every rank gathers the operator and factors it.
class LuPc : public Preconditioner {
 public:
  explicit LuPc(const CsrMatrix& a);
  void apply(const DistVec& r, DistVec& z) override;
  std::string name() const override { return "lu"; }

 private:
  DenseLu lu_;
};

/// 1/diag(A) in the matrix's space.
DistVec inverse_diagonal(const CsrMatrix& a);

// -------------------------------------------------------------------- Krylov

struct KspResult {
  int iterations = 0;
  bool converged = false;
  /// Residual 2-norms, initial included.
  std::vector<double> history;
};

struct KrylovConfig {
  KspType type = KspType::CG;
  double rtol = 1e-8;
  double atol = 1e-50;
  int max_it = 10000;
  PcType pc_type = PcType::None;
  /// Overrides pc_type when set.
  std::shared_ptr<Preconditioner> pc;
  /// Eigenvalue bounds of M^{-1}A for Chebyshev; estimated when unset.
  double cheb_lo = 0.0, cheb_hi = 0.0;
  double richardson_scale = 1.0;
  /// Called with (iteration, residual norm, residual vector).
  std::function<void(int, double, const DistVec&)> monitor;

  void validate() const;
};

/// Solve A x = b from the initial guess in x. Converged when
/// ||r|| <= max(rtol * ||b||, atol).
KspResult ksp_solve(const KrylovConfig& config, const CsrMatrix& a, const DistVec& b, DistVec& x);

std::shared_ptr<Preconditioner> make_pc(PcType type, const CsrMatrix& a);

// ----------------------------------------------------------------- Chebyshev

struct EigBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// Ten power iterations on D^{-1}A (or A when dinv is null) from a hashed
/// pseudo-random start vector; returns (0.1, 1.1) times the estimate.
EigBounds estimate_eigs(const CsrMatrix& a, const DistVec* dinv);

/// `sweeps` Chebyshev iterations for D^{-1}A x = D^{-1}b with eigenvalues in
/// [lo, hi]. No inner products.
void chebyshev_smooth(const CsrMatrix& a, const DistVec& dinv, const DistVec& b, DistVec& x, int sweeps,
                      EigBounds bounds);

// --------------------------------------------------------------- multigrid

enum class CycleType { V, W };

/// Builds the operator of one level on its grid.
using Discretization = std::function<CsrMatrix(const StructuredGrid&, ExecSpace)>;

struct MgConfig {
  int levels = 1;
  CycleType cycle = CycleType::V;
  int pre = 2;
  int post = 2;
  /// Per level, coarsest first; empty binds all levels to the host.
  std::vector<ExecSpace> binding;
  /// Drop interpolation weights on non-periodic boundary points.
  bool dirichlet = true;
};

/// Geometric hierarchy, level 0 coarsest. Levels are obtained by coarsening
/// the finest grid; operators are rediscretized on every level.
class MgHierarchy {
 public:
  MgHierarchy(const StructuredGrid& finest, const Discretization& discretize, MgConfig config);
  ~MgHierarchy();
  MgHierarchy(const MgHierarchy&) = delete;
  MgHierarchy& operator=(const MgHierarchy&) = delete;

  int nlevels() const { return static_cast<int>(levels_.size()); }
  const StructuredGrid& grid(int level) const;
  const CsrMatrix& op(int level) const;
  const CsrMatrix& finest_op() const { return op(nlevels() - 1); }
  ExecSpace space(int level) const;
  EigBounds bounds(int level) const;
  const MgConfig& config() const { return config_; }

  /// Rebind every level; subsequent cycles run each level in its space.
  void bind_levels(const std::vector<ExecSpace>& binding);
  /// One cycle on the finest level from the initial guess in x.
  void cycle(const DistVec& b, DistVec& x);
  void cycle(const DistVec& b, DistVec& x, CycleType type);

 private:
  struct Level;
  void visit(int level, const DistVec& b, DistVec& x, CycleType type);
  void coarse_solve(const DistVec& b, DistVec& x);

  MgConfig config_;
  std::vector<std::unique_ptr<Level>> levels_;
  std::unique_ptr<DenseLu> coarse_lu_;
};

class MgPc : public Preconditioner {
 public:
  explicit MgPc(MgHierarchy& h) : h_(&h) {}
  void apply(const DistVec& r, DistVec& z) override;
  std::string name() const override { return "mg"; }

 private:
  MgHierarchy* h_;
};

/// "k-v,..." style binding: e.g. "host:0-4,device:5-8".
std::vector<ExecSpace> parse_binding(const std::string& text, int nlevels);

// ------------------------------------------------------------ model problems

/// Owned-row entries of the 5-point operators below, rows in grid order with
/// the diagonal first.
struct StencilEntries {
  std::vector<std::int64_t> rows, cols;
  std::vector<double> vals;
};
StencilEntries five_point_entries(const StructuredGrid& grid, double wx, double wy);

/// h-scaled 5-point Laplacian on a vertex grid of the unit square.
/// Boundary vertices get identity rows and are decoupled from the interior.
CsrMatrix poisson2d(const StructuredGrid& grid, ExecSpace space = ExecSpace::host());
/// Same stencil plus central-difference convection with velocity (wx, wy).
CsrMatrix convection_diffusion2d(const StructuredGrid& grid, double wx, double wy,
                                 ExecSpace space = ExecSpace::host());

// ------------------------------------------------------------------ Newton

using Function = std::function<void(const DistVec& x, DistVec& r)>;
using Jacobian = std::function<void(const DistVec& x, CsrMatrix& j)>;

struct NonlinearProblem {
  Function function;
  Jacobian jacobian;
  CsrMatrix* jacobian_matrix = nullptr;
};

struct NewtonConfig {
  double rtol = 1e-10;
  double atol = 1e-50;
  /// Stop when the step is below stol * ||x||.
  double stol = 0.0;
  int max_it = 50;
  KrylovConfig ksp;
};

struct NewtonResult {
  int iterations = 0;
  bool converged = false;
  /// ||F(x_k)|| for every iterate.
  std::vector<double> history;
};

/// Full-step Newton. Converged when ||F|| <= max(rtol * ||F(x0)||, atol).
NewtonResult newton_solve(const NonlinearProblem& problem, DistVec& x, const NewtonConfig& config);

/// Runs both callbacks, returns the reference result, and throws
/// ComparisonError when the results differ by more than tol in 2-norm.
Function stub_compare(Function reference, Function candidate, double tol);

/// The 1D periodic problem R_i = d (X_{i-1} - 2 X_i + X_{i+1}) + X_i^2 - F_i,
/// with host and device implementations of Function and Jacobian.
class Listing2Problem {
 public:
  Listing2Problem(StructuredGrid& grid, double d, ExecSpace space);

  StructuredGrid& grid() const { return *grid_; }
  double d() const { return d_; }
  ExecSpace space() const { return space_; }
  DistVec& forcing() { return f_; }
  /// Sets F so that x solves the problem.
  void manufacture(const DistVec& x);

  void function_host(const DistVec& x, DistVec& r);
  void function_device(const DistVec& x, DistVec& r);
  void jacobian_host(const DistVec& x, CsrMatrix& j);
  void jacobian_device(const DistVec& x, CsrMatrix& j);

  NonlinearProblem problem(CsrMatrix& j, bool device);

 private:
  StructuredGrid* grid_;
  double d_;
  ExecSpace space_;
  DistVec f_;
  std::unique_ptr<LocalVec> xl_host_, xl_device_;
};

// ----------------------------------------------------------------- options

/// Solver settings from "key=value" strings.
struct SolverOptions {
  KspType ksp_type = KspType::CG;
  PcType pc_type = PcType::None;
  double rtol = 1e-8;
  double atol = 1e-50;
  int max_it = 10000;
  CycleType mg_cycle = CycleType::V;
  int mg_levels = 1;
  int mg_pre = 2;
  int mg_post = 2;
  std::string mg_bind;

  static SolverOptions parse(const std::vector<std::string>& args);
  KrylovConfig krylov() const;
  MgConfig multigrid() const;
};

const char* to_string(KspType t);
const char* to_string(PcType t);

}  // namespace portsim
